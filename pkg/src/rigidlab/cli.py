"""Batch experiment runner.

``rigidlab run --config cfg.json`` executes one suite (hodge, rigidity,
korn, counterexample2d, whitney, refine) over the configured cases and
resolutions, writing a per-case record stream (JSON lines), an
aggregate CSV, and a summary.  Exit status is zero exactly when every
hard invariant check passed; large ratios never fail a run, only broken
invariants do.  Output bodies are byte-stable across reruns; wall-clock
metadata goes to a separate file.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .errors import RigidlabError, ShapeError
from .fields import NormSpec, critical_exponent, lp_norm
from .generators import CaseSpec, generate
from .grids import Domain
from .hodge import divcurl_ratio, hodge_split
from .io import save_field
from .covering import partition_of_unity, whitney_cover
from .rigidity import korn_report, rigidity_report

REPORT_COLUMNS = ["case", "kind", "n", "N", "theorem", "lhs", "rhs_elastic",
                  "rhs_incompat", "ratio", "fit_parameters"]
HODGE_COLUMNS = ["case", "kind", "n", "N", "div_residual", "trace_residual",
                 "curl_residual", "ok"]
WHITNEY_COLUMNS = ["domain", "n", "N", "cubes", "chain_ok", "window_ok",
                   "multiplicity", "partition_defect", "c_pou", "attached_fraction"]
REFINE_COLUMNS = ["case", "kind", "metric", "N", "value", "drift_pct"]

SUITES = ("hodge", "rigidity", "korn", "counterexample2d", "whitney", "refine")

DEFAULT_TOLERANCES = {
    "linear_solver": 1e-10,
    "inequality_check": 1e-8,
    "hodge_div": 1e-8,
    "hodge_trace": 1e-8,
    "hodge_curl": 1e-12,
    "partition": 1e-12,
}


class ConfigError(RigidlabError):
    pass


@dataclass
class ExperimentConfig:
    suite: str
    cases: List[CaseSpec]
    resolutions: List[int]
    out_dir: Optional[str] = None
    seed: int = 20260808
    threads: int = 1
    metric: str = "rigidity_ratio"
    domains: List[str] = dataclass_field(default_factory=lambda: ["square", "lshape", "ball"])
    tolerances: Dict[str, float] = dataclass_field(default_factory=dict)

    def tolerance(self, key: str) -> float:
        return float(self.tolerances.get(key, DEFAULT_TOLERANCES[key]))


def parse_config(path) -> ExperimentConfig:
    raw_text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(raw_text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error at line {exc.lineno}, column {exc.colno}: "
                          f"{exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    suite = raw.get("suite")
    if suite not in SUITES:
        raise ConfigError(f"field 'suite' must be one of {SUITES}, got {suite!r}")
    resolutions = raw.get("resolutions")
    if not isinstance(resolutions, list) or not resolutions:
        raise ConfigError("field 'resolutions' must be a non-empty list")
    try:
        resolutions = [int(r) for r in resolutions]
    except (TypeError, ValueError) as exc:
        raise ConfigError("field 'resolutions' must contain integers") from exc
    if any(b <= a for a, b in zip(resolutions, resolutions[1:])):
        raise ConfigError("field 'resolutions' must be strictly increasing")
    cases_raw = raw.get("cases", [])
    cases = []
    for k, item in enumerate(cases_raw):
        try:
            cases.append(CaseSpec.from_dict(item))
        except (KeyError, TypeError, ShapeError) as exc:
            raise ConfigError(f"field 'cases[{k}]' is invalid: {exc}") from exc
    if suite != "whitney" and not cases:
        raise ConfigError("field 'cases' must contain at least one case")
    domains = raw.get("domains", ["square", "lshape", "ball"])
    for d in domains:
        if d not in ("square", "lshape", "ball", "cube"):
            raise ConfigError(f"field 'domains' has unknown domain {d!r}")
    tolerances = raw.get("tolerances", {})
    if not isinstance(tolerances, dict):
        raise ConfigError("field 'tolerances' must be an object")
    for key in tolerances:
        if key not in DEFAULT_TOLERANCES:
            raise ConfigError(f"field 'tolerances' has unknown key {key!r}")
    return ExperimentConfig(
        suite=suite,
        cases=cases,
        resolutions=resolutions,
        out_dir=raw.get("out_dir"),
        seed=int(raw.get("seed", 20260808)),
        threads=int(raw.get("threads", 1)),
        metric=str(raw.get("metric", "rigidity_ratio")),
        domains=list(domains),
        tolerances={k: float(v) for k, v in tolerances.items()},
    )


# ---------------------------------------------------------------------------
# refinement studies
# ---------------------------------------------------------------------------


@dataclass
class RefineTable:
    case: CaseSpec
    metric: str
    resolutions: List[int]
    values: List[float]
    drifts_pct: List[float]
    slope: Optional[float] = None
    intercept: Optional[float] = None
    r_squared: Optional[float] = None


def _metric_rigidity(case: CaseSpec, N: int) -> float:
    beta, m = generate(case.with_size(N))
    return rigidity_report(beta, m).ratio


def _metric_korn(case: CaseSpec, N: int) -> float:
    beta, m = generate(case.with_size(N))
    return korn_report(beta, m).ratio


def _metric_divcurl(case: CaseSpec, N: int) -> float:
    beta, m = generate(case.with_size(N))
    split = hodge_split(beta)
    return divcurl_ratio(split.residual, measure=m)


def _metric_divcurl_l2(case: CaseSpec, N: int) -> float:
    beta, m = generate(case.with_size(N))
    split = hodge_split(beta)
    return divcurl_ratio(split.residual, measure=m, p=2.0)


def _metric_critical_norm(case: CaseSpec, N: int) -> float:
    beta, _ = generate(case.with_size(N))
    return lp_norm(beta, NormSpec(critical_exponent(case.n)))


METRICS: Dict[str, Callable[[CaseSpec, int], float]] = {
    "rigidity_ratio": _metric_rigidity,
    "korn_ratio": _metric_korn,
    "divcurl_ratio": _metric_divcurl,
    "divcurl_ratio_l2": _metric_divcurl_l2,
    "critical_norm": _metric_critical_norm,
}


def log_affine_fit(x: Sequence[float], y: Sequence[float]):
    """Least-squares ``y = a log(x) + b``; returns ``(a, b, r_squared)``."""
    lx = np.log(np.asarray(x, dtype=float))
    yy = np.asarray(y, dtype=float)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, yy, rcond=None)
    fitted = A @ coef
    ss_res = float(np.sum((yy - fitted) ** 2))
    ss_tot = float(np.sum((yy - yy.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(coef[0]), float(coef[1]), r2


def refine_study(case: CaseSpec, resolutions: Sequence[int], metric: str,
                 logfit_squared: bool = False) -> RefineTable:
    """Metric across resolutions with successive drifts and optional
    affine-in-log fit of the squared metric."""
    if len(resolutions) < 3:
        raise ShapeError("refinement studies need at least 3 resolutions")
    if metric not in METRICS:
        raise ShapeError(f"unknown metric {metric!r}; have {sorted(METRICS)}")
    fn = METRICS[metric]
    values = [fn(case, int(N)) for N in resolutions]
    drifts = []
    for prev, cur in zip(values, values[1:]):
        denom = abs(prev) if prev != 0 else 1.0
        drifts.append(100.0 * abs(cur - prev) / denom)
    table = RefineTable(case, metric, [int(N) for N in resolutions], values, drifts)
    if logfit_squared:
        slope, intercept, r2 = log_affine_fit(resolutions, [v * v for v in values])
        table.slope, table.intercept, table.r_squared = slope, intercept, r2
    return table


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------


def _run_cases_parallel(items, worker, threads: int):
    if threads <= 1:
        return [worker(i, item) for i, item in enumerate(items)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(worker, i, item) for i, item in enumerate(items)]
        return [f.result() for f in futures]


def _suite_reports(config: ExperimentConfig, theorem: str):
    rows, records, failures = [], [], []
    constants = {}
    for N in config.resolutions:
        def worker(idx, case):
            # a failing case must not lose the reports already produced
            try:
                beta, m = generate(case.with_size(N))
                fn = rigidity_report if theorem == "rigidity" else korn_report
                return idx, fn(beta, m, provenance=case.kind), None
            except RigidlabError as exc:
                return idx, None, str(exc)

        results = _run_cases_parallel(config.cases, worker, config.threads)
        best = 0.0
        for idx, rep, error in sorted(results, key=lambda t: t[0]):
            case = config.cases[idx]
            if error is not None:
                failures.append(f"case {idx} at N={N}: {error}")
                continue
            row = {
                "case": idx, "kind": case.kind, "n": case.n, "N": N,
                "theorem": theorem, "lhs": rep.lhs, "rhs_elastic": rep.rhs_elastic,
                "rhs_incompat": rep.rhs_incompat, "ratio": rep.ratio,
                "fit_parameters": ";".join(format(p, ".12g") for p in rep.fit_parameters),
            }
            rows.append(row)
            records.append(rep.as_record() | {"case": idx, "kind": case.kind})
            if not np.isfinite(rep.ratio):
                failures.append(f"case {idx} at N={N}: non-finite ratio")
            best = max(best, rep.ratio)
        constants[str(N)] = best
    summary = {
        "suite": theorem,
        "empirical_constant": constants,
        "max_ratio": max(constants.values()),
    }
    if len(config.resolutions) >= 2:
        vals = [constants[str(N)] for N in config.resolutions]
        summary["constant_drift_pct"] = [
            100.0 * abs(b - a) / (abs(a) or 1.0) for a, b in zip(vals, vals[1:])
        ]
    return rows, REPORT_COLUMNS, records, summary, failures


def _suite_hodge(config: ExperimentConfig):
    rows, records, failures = [], [], []
    tol_div = config.tolerance("hodge_div")
    tol_trace = config.tolerance("hodge_trace")
    tol_curl = config.tolerance("hodge_curl")
    for N in config.resolutions:
        def worker(idx, case):
            beta, m = generate(case.with_size(N))
            return idx, hodge_split(beta)

        results = _run_cases_parallel(config.cases, worker, config.threads)
        for idx, split in sorted(results, key=lambda t: t[0]):
            case = config.cases[idx]
            ok = (split.div_residual <= tol_div and split.trace_residual <= tol_trace
                  and split.curl_transfer_residual <= tol_curl)
            rows.append({
                "case": idx, "kind": case.kind, "n": case.n, "N": N,
                "div_residual": split.div_residual,
                "trace_residual": split.trace_residual,
                "curl_residual": split.curl_transfer_residual,
                "ok": int(ok),
            })
            records.append(split.as_record() | {"case": idx, "kind": case.kind, "N": N})
            for info in split.infos:
                records.append(info.as_record() | {"case": idx, "N": N})
            if not ok:
                failures.append(f"case {idx} at N={N}: split certification failed")
    summary = {"suite": "hodge", "cases": len(config.cases),
               "tolerances": {"div": tol_div, "trace": tol_trace, "curl": tol_curl}}
    return rows, HODGE_COLUMNS, records, summary, failures


def _suite_counterexample2d(config: ExperimentConfig):
    case = config.cases[0]
    if case.n != 2:
        raise ConfigError("counterexample2d needs a 2d case")
    table = refine_study(case, config.resolutions, "divcurl_ratio_l2",
                         logfit_squared=True)
    rows, records, failures = [], [], []
    for N, v, d in zip(table.resolutions, table.values,
                       [float("nan")] + table.drifts_pct):
        rows.append({
            "case": 0, "kind": case.kind, "n": 2, "N": N,
            "theorem": "counterexample2d", "lhs": v, "rhs_elastic": 0.0,
            "rhs_incompat": 1.0, "ratio": v,
            "fit_parameters": "",
        })
        records.append({"type": "refine", "metric": "divcurl_ratio_l2", "N": N,
                        "value": v})
    increasing = all(b > a for a, b in zip(table.values, table.values[1:]))
    if not increasing:
        failures.append("ratio column is not strictly increasing")
    summary = {
        "suite": "counterexample2d",
        "values": table.values,
        "strictly_increasing": increasing,
        "logfit_slope": table.slope,
        "logfit_r_squared": table.r_squared,
    }
    return rows, REPORT_COLUMNS, records, summary, failures


def named_domain(name: str, n: int, cells: int) -> Domain:
    """The stock cover domains: square/cube, L-shape, and ball masks."""
    if name in ("square", "cube"):
        return Domain.cube(n, cells)
    h = 1.0 / cells
    dom = Domain.cube(n, cells)
    centers = dom.grid.cell_centers()
    if name == "lshape":
        mask = np.ones(dom.grid.shape, dtype=bool)
        block = centers[0] > 0.5
        for d in range(1, n):
            block &= centers[d] > 0.5
        mask[block] = False
        return Domain.from_mask(mask, h)
    if name == "ball":
        r2 = sum((centers[d] - 0.5) ** 2 for d in range(n))
        return Domain.from_mask(r2 <= 0.45 ** 2, h)
    raise ConfigError(f"unknown domain {name!r}")


def cover_invariants(domain: Domain, tol: float = 1e-12) -> dict:
    """Cell-exact chain, distance window, and partition checks."""
    cover = whitney_cover(domain)
    pou = partition_of_unity(cover)
    active = domain.active
    inner = cover.multiplicity_field(inner=True)
    outer = cover.multiplicity_field(inner=False)
    chain_ok = bool(
        np.all(inner[active & cover.covered] >= 1)
        and np.all(inner <= outer)
        and np.all(outer[~active] == 0)
    )
    window = cover.distance_window()
    window_ok = all(r <= d <= 6.0 * r for d, r in window)
    return {
        "cover": cover,
        "pou": pou,
        "chain_ok": chain_ok,
        "window_ok": window_ok,
        "multiplicity": cover.overlap_multiplicity,
        "partition_defect": pou.partition_defect,
        "gradient_sum_defect": pou.gradient_sum_defect,
        "c_pou": pou.c_pou,
        "uncovered_interior_fraction": cover.uncovered_interior_fraction,
        "attached_fraction": cover.attached_fraction,
        "cubes": len(cover.cubes),
    }


def _suite_whitney(config: ExperimentConfig):
    rows, records, failures = [], [], []
    tol = config.tolerance("partition")
    n = 2
    for N in config.resolutions:
        for name in config.domains:
            domain = named_domain(name, n, N)
            inv = cover_invariants(domain)
            ok = inv["chain_ok"] and inv["window_ok"] and inv["partition_defect"] <= tol
            rows.append({
                "domain": name, "n": n, "N": N, "cubes": inv["cubes"],
                "chain_ok": int(inv["chain_ok"]), "window_ok": int(inv["window_ok"]),
                "multiplicity": inv["multiplicity"],
                "partition_defect": inv["partition_defect"],
                "c_pou": inv["c_pou"],
                "attached_fraction": inv["attached_fraction"],
            })
            records.append({
                "type": "cover", "domain": name, "N": N,
                "cubes": inv["cubes"], "multiplicity": inv["multiplicity"],
                "c_pou": inv["c_pou"],
                "uncovered_interior_fraction": inv["uncovered_interior_fraction"],
            })
            if not ok:
                failures.append(f"cover invariants failed on {name} at N={N}")
    summary = {"suite": "whitney", "domains": config.domains}
    return rows, WHITNEY_COLUMNS, records, summary, failures


def _suite_refine(config: ExperimentConfig):
    rows, records, failures = [], [], []
    for idx, case in enumerate(config.cases):
        table = refine_study(case, config.resolutions, config.metric,
                             logfit_squared=True)
        for pos, (N, v) in enumerate(zip(table.resolutions, table.values)):
            rows.append({
                "case": idx, "kind": case.kind, "metric": config.metric,
                "N": N, "value": v,
                "drift_pct": "" if pos == 0 else table.drifts_pct[pos - 1],
            })
        records.append({
            "type": "refine", "case": idx, "metric": config.metric,
            "values": table.values, "drifts_pct": table.drifts_pct,
            "logfit_slope": table.slope, "logfit_r_squared": table.r_squared,
        })
    summary = {"suite": "refine", "metric": config.metric}
    return rows, REFINE_COLUMNS, records, summary, failures


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_outputs(out_dir: Path, rows, columns, records, summary, failures, config_echo):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "results.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(col, "")) for col in columns])
    with open(out_dir / "records.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    summary_full = dict(summary)
    summary_full["failures"] = failures
    summary_full["pass"] = not failures
    (out_dir / "summary.json").write_text(
        json.dumps(summary_full, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    metadata = {
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "version": __version__,
        "config": config_echo,
    }
    (out_dir / "metadata.json").write_text(
        json.dumps(metadata, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def default_out_dir(explicit: Optional[str]) -> Path:
    if explicit:
        return Path(explicit)
    return Path(os.environ.get("RIGIDLAB_OUT", "rigidlab-out"))


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------


def run(config_path, out: Optional[str] = None, threads: Optional[int] = None,
        seed: Optional[int] = None) -> int:
    config = parse_config(config_path)
    if threads:
        config.threads = int(threads)
    if seed is not None:
        config.seed = int(seed)
        config.cases = [
            CaseSpec(c.kind, c.n, c.size, config.seed + i, c.params)
            for i, c in enumerate(config.cases)
        ]
    out_dir = default_out_dir(out or config.out_dir)
    suites = {
        "rigidity": lambda: _suite_reports(config, "rigidity"),
        "korn": lambda: _suite_reports(config, "korn"),
        "hodge": lambda: _suite_hodge(config),
        "counterexample2d": lambda: _suite_counterexample2d(config),
        "whitney": lambda: _suite_whitney(config),
        "refine": lambda: _suite_refine(config),
    }
    try:
        rows, columns, records, summary, failures = suites[config.suite]()
    except RigidlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    summary["tolerances"] = {k: config.tolerance(k) for k in DEFAULT_TOLERANCES}
    write_outputs(out_dir, rows, columns, records, summary, failures,
                  {"suite": config.suite, "resolutions": config.resolutions,
                   "cases": [c.to_dict() for c in config.cases]})
    status = 0 if not failures else 1
    print(f"suite={config.suite} rows={len(rows)} out={out_dir} "
          f"{'PASS' if status == 0 else 'FAIL'}")
    for f in failures:
        print(f"  invariant failure: {f}")
    return status


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="rigidlab",
                                     description="batch rigidity experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configured suite")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--threads", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None)

    p_ref = sub.add_parser("refine", help="refinement study for one case")
    p_ref.add_argument("--config", required=True)
    p_ref.add_argument("--out", default=None)
    p_ref.add_argument("--threads", type=int, default=None)
    p_ref.add_argument("--seed", type=int, default=None)

    p_dump = sub.add_parser("dump-field", help="generate a case and dump the field")
    p_dump.add_argument("--config", required=True)
    p_dump.add_argument("--case-index", type=int, default=0)
    p_dump.add_argument("--resolution", type=int, default=None)
    p_dump.add_argument("--out", default=None)

    p_cov = sub.add_parser("check-cover", help="build and validate a cover")
    p_cov.add_argument("--domain", default="square",
                       choices=["square", "lshape", "ball", "cube"])
    p_cov.add_argument("--cells", type=int, default=64)
    p_cov.add_argument("--dimension", type=int, default=2, choices=[2, 3])
    p_cov.add_argument("--out", default=None)

    args = parser.parse_args(argv)

    if args.command == "run":
        return run(args.config, args.out, args.threads, args.seed)
    if args.command == "refine":
        config = parse_config(args.config)
        config.suite = "refine"
        if args.threads:
            config.threads = args.threads
        out_dir = default_out_dir(args.out or config.out_dir)
        rows, columns, records, summary, failures = _suite_refine(config)
        write_outputs(out_dir, rows, columns, records, summary, failures,
                      {"suite": "refine", "resolutions": config.resolutions,
                       "cases": [c.to_dict() for c in config.cases]})
        print(f"refine rows={len(rows)} out={out_dir}")
        return 0 if not failures else 1
    if args.command == "dump-field":
        config = parse_config(args.config)
        case = config.cases[args.case_index]
        if args.resolution:
            case = case.with_size(args.resolution)
        beta, _ = generate(case)
        out_dir = default_out_dir(args.out or config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        base = out_dir / f"field-{case.kind}-N{case.size}-seed{case.seed}"
        header, payload = save_field(base, beta)
        print(f"wrote {header} and {payload}")
        return 0
    if args.command == "check-cover":
        domain = named_domain(args.domain, args.dimension, args.cells)
        try:
            inv = cover_invariants(domain)
        except RigidlabError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        out_dir = default_out_dir(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = inv["cover"].export_lines()
        (out_dir / f"cover-{args.domain}-N{args.cells}.txt").write_text(
            "\n".join(lines) + "\n", encoding="utf-8"
        )
        ok = inv["chain_ok"] and inv["window_ok"] and inv["partition_defect"] <= 1e-12
        print(f"domain={args.domain} N={args.cells} cubes={inv['cubes']} "
              f"multiplicity={inv['multiplicity']} c_pou={inv['c_pou']:.3f} "
              f"{'PASS' if ok else 'FAIL'}")
        return 0 if ok else 1
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
