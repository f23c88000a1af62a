"""Neumann Poisson and div-curl solves on the staggered layout.

Cube domains are solved in fast transform bases that diagonalize the
exact discrete operators: cosine modes (DCT-II) for the cell-centered
Neumann Laplacian, sine modes (DST-I) for node/edge Dirichlet
directions.  The solves are therefore exact up to roundoff, which is
what the downstream certification relies on.

The div-curl system ``div Z = 0, curl Z = f, Z.n = 0`` is solved through
an edge vector potential: each component gets a mixed Dirichlet/Neumann
Poisson solve, and ``Z = curl W`` then satisfies the divergence and
trace constraints identically (they are combinatorial identities of the
staggered complex) while ``curl Z = f`` holds to machine precision for
exactly divergence-free data.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from itertools import combinations
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import fft as sfft

from .errors import (
    ConvergenceError,
    DimensionError,
    DomainError,
    ShapeError,
    SolvabilityError,
)
from .fields import STAGGERED, IncompatibilityMeasure, TensorField, _sl
from .grids import Domain
from .operators import curl_edges, div_rows, levi_civita


@dataclass
class SolveInfo:
    """Diagnostics of one linear solve, for the report stream."""

    method: str
    iterations: int = 0
    residuals: Tuple[float, ...] = ()
    projection: float = 0.0
    checks: dict = dataclass_field(default_factory=dict)

    def as_record(self) -> dict:
        return {
            "type": "solver",
            "method": self.method,
            "iterations": self.iterations,
            "projection": self.projection,
            "residuals": list(self.residuals),
            "checks": {k: float(v) for k, v in self.checks.items()},
        }


# ---------------------------------------------------------------------------
# Neumann Poisson
# ---------------------------------------------------------------------------


class NeumannProblem:
    """Row-wise Neumann problem ``Lap u = f`` with boundary flux data.

    ``rhs`` has shape ``(*cells, m)`` (one column per row of the driving
    tensor field) and ``flux[r][(axis, side)]`` holds the prescribed
    normal derivative samples on each boundary face plane.
    """

    def __init__(self, domain: Domain, rhs: np.ndarray, flux: Sequence[dict]):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.ndim == domain.n:
            rhs = rhs[..., None]
        if rhs.shape[:-1] != domain.grid.shape:
            raise ShapeError("rhs must be shaped (*cells, m)")
        if len(flux) != rhs.shape[-1]:
            raise ShapeError("need one flux table per rhs column")
        self.domain = domain
        self.rhs = rhs
        self.flux = [dict(f) for f in flux]

    @classmethod
    def from_field(cls, beta: TensorField) -> "NeumannProblem":
        """The Hodge-split data: ``f = div beta`` and ``g = beta n``."""
        rhs = div_rows(beta).values
        flux = [beta.boundary_flux(i) for i in range(beta.n)]
        return cls(beta.domain, rhs, flux)

    def _flux_integral(self, r: int) -> float:
        grid = self.domain.grid
        total = 0.0
        for (axis, side), g in self.flux[r].items():
            area = grid.cell_volume / grid.spacing[axis]
            sign = 1.0 if side == 1 else -1.0
            total += sign * float(np.sum(g)) * area
        return total

    def compatibility_residual(self, r: int) -> float:
        """Discrete ``int f - int_boundary g`` for one column."""
        vol = self.domain.grid.cell_volume
        total = float(self.rhs[..., r][self.domain.active].sum()) * vol
        return total - self._flux_integral(r)

    def compatibility_scale(self, r: int) -> float:
        grid = self.domain.grid
        scale = float(np.abs(self.rhs[..., r][self.domain.active]).sum()) * grid.cell_volume
        for (axis, _), g in self.flux[r].items():
            scale += float(np.abs(g).sum()) * grid.cell_volume / grid.spacing[axis]
        return scale if scale > 0 else 1.0


def _neumann_eigenvalues(grid) -> np.ndarray:
    lam = np.zeros(grid.shape)
    for d in range(grid.n):
        k = np.arange(grid.shape[d])
        lam_d = -(4.0 / grid.spacing[d] ** 2) * np.sin(np.pi * k / (2.0 * grid.shape[d])) ** 2
        shape = [1] * grid.n
        shape[d] = -1
        lam = lam + lam_d.reshape(shape)
    return lam


def _dct_neumann_solve(rhs: np.ndarray, grid) -> np.ndarray:
    """Exact solve of the mirrored Neumann Laplacian, zero-mean gauge."""
    fh = sfft.dctn(rhs, type=2, norm="ortho")
    lam = _neumann_eigenvalues(grid)
    zero = (0,) * grid.n
    lam[zero] = 1.0
    fh[zero] = 0.0
    u = sfft.idctn(fh / lam, type=2, norm="ortho")
    return u - u.mean()


def _embed_flux_divergence(domain: Domain, flux: dict) -> np.ndarray:
    """Divergence contribution of the boundary-flux face field."""
    grid = domain.grid
    out = np.zeros(grid.shape)
    for (axis, side), g in flux.items():
        h = grid.spacing[axis]
        idx = 0 if side == 0 else -1
        sign = -1.0 if side == 0 else 1.0
        sub = out[_sl(grid.n, axis, idx)]
        sub += sign * np.asarray(g) / h
    return out


def solve_neumann(problem: NeumannProblem, project: bool = True,
                  compat_tol: float = 1e-10, cg_tol: float = 1e-10,
                  max_iterations: int = 600) -> Tuple[np.ndarray, List[SolveInfo]]:
    """Solve ``Lap u = f`` with prescribed boundary flux, column by column.

    Cube domains use the cosine-basis direct solve; masked domains run
    preconditioned conjugate gradients with a geometric multigrid
    V-cycle.  Incompatible data beyond ``compat_tol`` raises unless
    ``project`` is set, in which case the offending mean is removed and
    its magnitude recorded.  Solutions are zero-mean.
    """
    domain = problem.domain
    m = problem.rhs.shape[-1]
    out = np.empty(domain.grid.shape + (m,))
    infos = []
    for r in range(m):
        resid = problem.compatibility_residual(r)
        rel = abs(resid) / problem.compatibility_scale(r)
        if rel > compat_tol and not project:
            raise SolvabilityError(
                f"incompatible Neumann data in column {r}: relative residual {rel:.3e}"
            )
        rhs_eff = problem.rhs[..., r] - _embed_flux_divergence(domain, problem.flux[r])
        if domain.is_cube:
            rhs_eff = rhs_eff - rhs_eff.mean()
            u = _dct_neumann_solve(rhs_eff, domain.grid)
            info = SolveInfo(method="dct", projection=rel)
        else:
            if any(np.any(g) for g in problem.flux[r].values()):
                raise DomainError("masked Neumann solves support homogeneous flux only")
            u, info = _masked_cg_solve(domain, rhs_eff, cg_tol, max_iterations)
            info.projection = rel
        out[..., r] = u
        infos.append(info)
    return out, infos


# ---------------------------------------------------------------------------
# masked CG + geometric multigrid
# ---------------------------------------------------------------------------


class _MaskedNegLaplacian:
    """Matrix-free ``-Lap`` with zero-flux faces on a voxel mask."""

    def __init__(self, mask: np.ndarray, h: float):
        self.mask = mask
        self.h2 = h * h
        self.n = mask.ndim
        diag = np.zeros(mask.shape)
        for d in range(self.n):
            both = mask[_sl(self.n, d, slice(None, -1))] & mask[_sl(self.n, d, slice(1, None))]
            diag[_sl(self.n, d, slice(None, -1))] += both
            diag[_sl(self.n, d, slice(1, None))] += both
        self.diag = diag / self.h2
        if mask.sum() > 1 and (self.diag[mask] <= 0).any():
            raise DomainError("mask contains cells with no active neighbor")

    def apply(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u)
        for d in range(self.n):
            lo = _sl(self.n, d, slice(None, -1))
            hi = _sl(self.n, d, slice(1, None))
            both = self.mask[lo] & self.mask[hi]
            flux = np.where(both, (u[hi] - u[lo]) / self.h2, 0.0)
            out[lo] -= flux
            out[hi] += flux
        out[~self.mask] = 0.0
        return out

    def jacobi(self, x: np.ndarray, b: np.ndarray, sweeps: int, omega: float = 0.8) -> np.ndarray:
        d = np.where(self.diag > 0, self.diag, 1.0)
        for _ in range(sweeps):
            r = b - self.apply(x)
            x = x + omega * np.where(self.mask, r / d, 0.0)
        return x


def _coarsen_mask(mask: np.ndarray) -> np.ndarray:
    n = mask.ndim
    view = mask
    for d in range(n):
        shape = list(view.shape)
        shape[d] //= 2
        shape.insert(d + 1, 2)
        view = view.reshape(shape).any(axis=d + 1)
    return view


def _restrict(r: np.ndarray, n: int) -> np.ndarray:
    out = r
    for d in range(n):
        shape = list(out.shape)
        shape[d] //= 2
        shape.insert(d + 1, 2)
        out = out.reshape(shape).sum(axis=d + 1)
    return out / 2 ** n


def _prolong(e: np.ndarray, n: int) -> np.ndarray:
    out = e
    for d in range(n):
        out = np.repeat(out, 2, axis=d)
    return out


class _MultigridPreconditioner:
    """Symmetric V-cycle on rediscretized mask Laplacians."""

    def __init__(self, mask: np.ndarray, h: float, coarse_cells: int = 400):
        self.levels = []
        m, spacing = mask, h
        while True:
            op = _MaskedNegLaplacian(m, spacing)
            self.levels.append(op)
            if m.sum() <= coarse_cells or any(s % 2 or s < 4 for s in m.shape):
                break
            m = _coarsen_mask(m)
            spacing *= 2.0
        bottom = self.levels[-1]
        idx = np.flatnonzero(bottom.mask.ravel())
        size = idx.size
        dense = np.zeros((size, size))
        basis = np.zeros(bottom.mask.shape)
        flat_positions = {flat: row for row, flat in enumerate(idx)}
        for row, flat in enumerate(idx):
            basis.ravel()[flat] = 1.0
            col = bottom.apply(basis).ravel()[idx]
            dense[:, row] = col
            basis.ravel()[flat] = 0.0
        self._coarse_idx = idx
        self._coarse_pinv = np.linalg.pinv(dense, rcond=1e-12)

    def _coarse_solve(self, b: np.ndarray) -> np.ndarray:
        vec = b.ravel()[self._coarse_idx]
        vec = vec - vec.mean()
        sol = self._coarse_pinv @ vec
        out = np.zeros(b.shape)
        out.ravel()[self._coarse_idx] = sol
        return out

    def _vcycle(self, level: int, b: np.ndarray) -> np.ndarray:
        if level == len(self.levels) - 1:
            return self._coarse_solve(b)
        op = self.levels[level]
        x = op.jacobi(np.zeros_like(b), b, sweeps=2)
        r = b - op.apply(x)
        rc = _restrict(r, op.n)
        rc[~self.levels[level + 1].mask] = 0.0
        ec = self._vcycle(level + 1, rc)
        x = x + np.where(op.mask, _prolong(ec, op.n), 0.0)
        x = op.jacobi(x, b, sweeps=2)
        return x

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self._vcycle(0, r)


def _masked_cg_solve(domain: Domain, rhs: np.ndarray, tol: float,
                     max_iterations: int) -> Tuple[np.ndarray, SolveInfo]:
    mask = domain.active
    h = domain.grid.spacing[0]
    op = _MaskedNegLaplacian(mask, h)
    precond = _MultigridPreconditioner(mask, h)
    active = float(mask.sum())

    def demean(v):
        v = np.where(mask, v, 0.0)
        return np.where(mask, v - v[mask].sum() / active, 0.0)

    b = demean(-rhs)  # solve (-Lap) u = -f, SPD on mean-zero functions
    x = np.zeros_like(b)
    r = b.copy()
    z = demean(precond(r))
    p = z.copy()
    rz = float((r * z).sum())
    bnorm = float(np.linalg.norm(b)) or 1.0
    history = []
    for it in range(1, max_iterations + 1):
        Ap = op.apply(p)
        alpha = rz / float((p * Ap).sum())
        x += alpha * p
        r -= alpha * Ap
        rel = float(np.linalg.norm(r)) / bnorm
        history.append(rel)
        if rel < tol:
            x = demean(x)
            return x, SolveInfo(method="mg-cg", iterations=it, residuals=tuple(history))
        z = demean(precond(r))
        rz_new = float((r * z).sum())
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"CG failed to reach {tol:.1e} in {max_iterations} iterations"
        f" (reached {history[-1]:.3e})",
        residuals=history,
    )


# ---------------------------------------------------------------------------
# div-curl system
# ---------------------------------------------------------------------------


_CYCLIC3 = ((0, 1, 2), (1, 2, 0), (2, 0, 1))


def _edge_shape(grid, j: int, k: int) -> Tuple[int, ...]:
    s = list(grid.shape)
    s[j] -= 1
    s[k] -= 1
    return tuple(s)


def zero_edge_rows(domain: Domain) -> List[Dict[Tuple[int, int], np.ndarray]]:
    grid = domain.grid
    rows = []
    for _ in range(domain.n):
        rows.append({
            (j, k): np.zeros(_edge_shape(grid, j, k))
            for j, k in combinations(range(domain.n), 2)
        })
    return rows


def _pair_sign(l: int, j: int, k: int) -> float:
    # vector curl component l versus the ordered-pair storage (j, k)
    return -float(levi_civita()[l, j, k])


def edge_rows_to_vectors(rows, domain: Domain) -> List[List[np.ndarray]]:
    """Per-row vector curl arrays ``f_l`` from the ordered-pair storage."""
    if domain.n != 3:
        raise DimensionError("vector identification needs n = 3")
    out = []
    for row in rows:
        comps = [None] * 3
        for l, j, k in ((0, 1, 2), (1, 0, 2), (2, 0, 1)):
            comps[l] = _pair_sign(l, j, k) * row[(j, k)]
        out.append(comps)
    return out


def edge_divergence(rows, domain: Domain) -> float:
    """Max interior-node divergence of the edge data (should be ~0)."""
    if domain.n == 2:
        return 0.0
    grid = domain.grid
    worst = 0.0
    for comps in edge_rows_to_vectors(rows, domain):
        div = None
        for l in range(3):
            d = (
                comps[l][_sl(3, l, slice(1, None))] - comps[l][_sl(3, l, slice(None, -1))]
            ) / grid.spacing[l]
            div = d if div is None else div + d
        worst = max(worst, float(np.abs(div).max(initial=0.0)))
    return worst


def edge_data_scale(rows) -> float:
    return max((float(np.abs(a).max(initial=0.0)) for row in rows for a in row.values()),
               default=0.0)


class DivCurlProblem:
    """Curl data for the tangential div-free reconstruction.

    ``rows[i][(j, k)]`` holds the prescribed interior-edge curl of row
    ``i`` in the same ordered-pair convention as ``operators.curl_edges``.
    For n = 3 the data must be divergence-free on interior nodes
    (closed loops or boundary-to-boundary lines) within ``div_tol``.
    """

    def __init__(self, domain: Domain, rows, div_tol: float = 1e-10):
        if not domain.is_cube:
            raise DomainError("div-curl solves are defined on cube domains")
        self.domain = domain
        self.rows = rows
        self.div_tol = div_tol

    @classmethod
    def from_measure(cls, measure: IncompatibilityMeasure, div_tol: float = 1e-10):
        return cls(measure.domain, rasterize_measure(measure), div_tol)

    def divergence_violation(self) -> float:
        scale = edge_data_scale(self.rows)
        if scale == 0.0:
            return 0.0
        h = min(self.domain.grid.spacing)
        return edge_divergence(self.rows, self.domain) * h / scale


def _mixed_poisson_solve(f: np.ndarray, longitudinal: int, grid) -> np.ndarray:
    """Exact solve of ``-Lap W = f`` with Dirichlet transverse planes and
    mirrored (Neumann) ends along the longitudinal axis."""
    n = grid.n
    work = np.asarray(f, dtype=float)
    lam = np.zeros(work.shape)
    for d in range(n):
        N = grid.shape[d]
        h = grid.spacing[d]
        if d == longitudinal:
            work = sfft.dct(work, type=2, axis=d, norm="ortho")
            modes = np.arange(N)
        else:
            work = sfft.dst(work, type=1, axis=d, norm="ortho")
            modes = np.arange(1, N)
        lam_d = -(4.0 / h ** 2) * np.sin(np.pi * modes / (2.0 * N)) ** 2
        shape = [1] * n
        shape[d] = -1
        lam = lam + lam_d.reshape(shape)
    work = work / (-lam)
    for d in range(n):
        if d == longitudinal:
            work = sfft.idct(work, type=2, axis=d, norm="ortho")
        else:
            work = sfft.idst(work, type=1, axis=d, norm="ortho")
    return work


def _embed_edge_potential(w: np.ndarray, l: int, grid) -> np.ndarray:
    """Surround the interior potential with its zero Dirichlet planes."""
    shape = list(grid.shape)
    for d in range(grid.n):
        if d != l:
            shape[d] += 1
    full = np.zeros(shape)
    sl = tuple(slice(1, -1) if d != l else slice(None) for d in range(grid.n))
    full[sl] = w
    return full


def solve_div_curl(problem: DivCurlProblem) -> Tuple[TensorField, SolveInfo]:
    """Reconstruct the tangential divergence-free field with given curl.

    Returns a staggered tensor field whose rows satisfy all three
    constraints; the info block carries the re-measured residuals
    (divergence, boundary trace, curl mismatch) computed with the
    calculus operators rather than trusted from the transform algebra.
    """
    domain = problem.domain
    grid = domain.grid
    n = domain.n
    violation = problem.divergence_violation()
    if violation > problem.div_tol:
        raise SolvabilityError(
            f"curl data is not divergence-free: relative violation {violation:.3e}"
        )
    comps_rows = []
    if n == 3:
        for comps in edge_rows_to_vectors(problem.rows, domain):
            W = [
                _embed_edge_potential(_mixed_poisson_solve(comps[l], l, grid), l, grid)
                for l in range(3)
            ]
            z_row = []
            for j, a, b in _CYCLIC3:
                da = (
                    W[b][_sl(3, a, slice(1, None))] - W[b][_sl(3, a, slice(None, -1))]
                ) / grid.spacing[a]
                db = (
                    W[a][_sl(3, b, slice(1, None))] - W[a][_sl(3, b, slice(None, -1))]
                ) / grid.spacing[b]
                z_row.append(da - db)
            comps_rows.append(z_row)
    else:
        for row in problem.rows:
            target = row[(0, 1)]
            # psi solves Lap psi = e so that the stored pair convention is hit
            psi = -_mixed_dirichlet_solve_2d(target, grid)
            full = np.zeros((grid.shape[0] + 1, grid.shape[1] + 1))
            full[1:-1, 1:-1] = psi
            zx = (full[:, 1:] - full[:, :-1]) / grid.spacing[1]
            zy = -(full[1:, :] - full[:-1, :]) / grid.spacing[0]
            comps_rows.append([zx, zy])
    Z = TensorField(domain, comps_rows, STAGGERED)
    info = SolveInfo(method="vector-potential")
    info.checks = _measure_div_curl_residuals(Z, problem)
    return Z, info


def _mixed_dirichlet_solve_2d(f: np.ndarray, grid) -> np.ndarray:
    """Exact node Dirichlet solve of ``-Lap psi = f`` by double DST-I."""
    work = np.asarray(f, dtype=float)
    lam = np.zeros(work.shape)
    for d in range(2):
        N = grid.shape[d]
        h = grid.spacing[d]
        work = sfft.dst(work, type=1, axis=d, norm="ortho")
        modes = np.arange(1, N)
        lam_d = -(4.0 / h ** 2) * np.sin(np.pi * modes / (2.0 * N)) ** 2
        shape = [1, 1]
        shape[d] = -1
        lam = lam + lam_d.reshape(shape)
    work = work / (-lam)
    for d in range(2):
        work = sfft.idst(work, type=1, axis=d, norm="ortho")
    return work


def _measure_div_curl_residuals(Z: TensorField, problem: DivCurlProblem) -> dict:
    domain = Z.domain
    n = Z.n
    h = min(domain.grid.spacing)
    div = div_rows(Z).values
    scale = edge_data_scale(problem.rows)
    zmax = max(float(np.abs(c).max(initial=0.0)) for row in Z.comps for c in row)
    div_scale = max(zmax / h, scale, 1e-300)
    trace = 0.0
    for i in range(n):
        for (axis, side), g in Z.boundary_flux(i).items():
            trace = max(trace, float(np.abs(g).max(initial=0.0)))
    curl_err, curl_scale = 0.0, max(scale, 1e-300)
    for i in range(n):
        edges = curl_edges(Z.comps[i], domain)
        for key, arr in edges.items():
            curl_err = max(curl_err, float(np.abs(arr - problem.rows[i][key]).max(initial=0.0)))
    return {
        "div_rel": float(np.abs(div).max()) / div_scale,
        "trace_max": trace / max(zmax, 1e-300),
        "curl_rel": curl_err / curl_scale,
    }


# ---------------------------------------------------------------------------
# rasterization of concentrated measures onto the edge lattice
# ---------------------------------------------------------------------------


def _bilinear_nodes(t: float) -> Tuple[int, float]:
    i = int(np.floor(t))
    return i, t - i


def rasterize_measure(measure: IncompatibilityMeasure) -> list:
    """Deposit a measure onto interior edges with exact circulations.

    The density part is interpolated from cells; points (2d) spread
    bilinearly over the four surrounding interior nodes; 3d segments
    must be axis-aligned and either span the cube or close up into
    rectangles, which are deposited as the edge curl of a spanning
    face sheet so the result is exactly divergence-free.
    """
    domain = measure.domain
    grid = domain.grid
    n = domain.n
    rows = zero_edge_rows(domain)

    if measure.ac is not None and np.any(measure.ac):
        for i in range(n):
            for j, k in combinations(range(n), 2):
                dens = measure.ac[..., i, j, k]
                arr = dens
                for axis in (j, k):
                    lo = arr[_sl(n, axis, slice(None, -1))]
                    hi = arr[_sl(n, axis, slice(1, None))]
                    arr = 0.5 * (lo + hi)
                rows[i][(j, k)] += arr

    if n == 2:
        for p in measure.points:
            _deposit_point_2d(rows, domain, p.position, p.weight)
    else:
        lines, rects = _classify_segments(domain, measure.segments)
        for axis, trans, weights in lines:
            _deposit_line_3d(rows, domain, axis, trans, weights)
        for normal, height, bounds, weights in rects:
            _deposit_rectangle_3d(rows, domain, normal, height, bounds, weights)
    return rows


def _deposit_point_2d(rows, domain: Domain, position, weight):
    grid = domain.grid
    t = [(position[d] - grid.origin[d]) / grid.spacing[d] for d in range(2)]
    i0, fx = _bilinear_nodes(t[0])
    j0, fy = _bilinear_nodes(t[1])
    if i0 < 1 or i0 + 1 > grid.shape[0] - 1 or j0 < 1 or j0 + 1 > grid.shape[1] - 1:
        raise DomainError("point charge too close to the boundary to rasterize")
    area = grid.spacing[0] * grid.spacing[1]
    wts = {(i0, j0): (1 - fx) * (1 - fy), (i0 + 1, j0): fx * (1 - fy),
           (i0, j0 + 1): (1 - fx) * fy, (i0 + 1, j0 + 1): fx * fy}
    for i in range(2):
        b = weight[i]
        for (ni, nj), w in wts.items():
            # stored pair value is minus the scalar curl density
            rows[i][(0, 1)][ni - 1, nj - 1] += -b * w / area
    return rows


def _classify_segments(domain: Domain, segments):
    """Split segments into boundary-to-boundary lines and closed rectangles."""
    grid = domain.grid
    eps = 1e-9 * min(grid.spacing)
    lines = []
    remaining = []
    for s in segments:
        a = np.asarray(s.start)
        b = np.asarray(s.end)
        d = b - a
        axes = [ax for ax in range(3) if abs(d[ax]) > eps]
        if len(axes) != 1:
            raise DomainError("only axis-aligned segments can be rasterized")
        ax = axes[0]
        lo_t = min(a[ax], b[ax])
        hi_t = max(a[ax], b[ax])
        full = (abs(lo_t - grid.origin[ax]) < eps) and (abs(hi_t - grid.high[ax]) < eps)
        if full:
            # the weight column along the axis already encodes orientation
            trans = tuple(a[t] for t in range(3) if t != ax)
            weights = np.asarray(s.weight)[:, ax]
            lines.append((ax, trans, weights))
        else:
            remaining.append(s)
    rects = _match_rectangles(domain, remaining, eps)
    return lines, rects


def _match_rectangles(domain: Domain, segments, eps):
    if not segments:
        return []
    segs = list(segments)
    rects = []
    used = [False] * len(segs)
    for i0 in range(len(segs)):
        if used[i0]:
            continue
        chain = [i0]
        used[i0] = True
        end = np.asarray(segs[i0].end)
        start = np.asarray(segs[i0].start)
        while len(chain) < 4:
            found = False
            for i1 in range(len(segs)):
                if used[i1]:
                    continue
                if np.allclose(np.asarray(segs[i1].start), end, atol=eps):
                    chain.append(i1)
                    used[i1] = True
                    end = np.asarray(segs[i1].end)
                    found = True
                    break
            if not found:
                break
        if len(chain) != 4 or not np.allclose(end, start, atol=eps):
            raise DomainError(
                "3d concentrated parts must be through-lines or closed rectangles"
            )
        pts = [np.asarray(segs[i].start) for i in chain]
        const_axes = [ax for ax in range(3) if max(abs(p[ax] - pts[0][ax]) for p in pts) < eps]
        if len(const_axes) != 1:
            raise DomainError("rectangle segments must be coplanar and axis-aligned")
        normal = const_axes[0]
        t_axes = [ax for ax in range(3) if ax != normal]
        los = [min(p[ax] for p in pts) for ax in t_axes]
        his = [max(p[ax] for p in pts) for ax in t_axes]
        first = segs[chain[0]]
        tangent = np.asarray(first.end) - np.asarray(first.start)
        t_ax = int(np.argmax(np.abs(tangent)))
        burgers = np.asarray(first.weight)[:, t_ax] * np.sign(tangent[t_ax])
        orient = _rect_orientation(pts, normal, t_axes)
        rects.append((normal, pts[0][normal], (los[0], his[0], los[1], his[1]),
                      orient * burgers))
    return rects


def _rect_orientation(pts, normal: int, t_axes) -> float:
    """+1 when the chain is counterclockwise about the +normal axis."""
    area = 0.0
    for i in range(4):
        x0, y0 = pts[i][t_axes[0]], pts[i][t_axes[1]]
        x1, y1 = pts[(i + 1) % 4][t_axes[0]], pts[(i + 1) % 4][t_axes[1]]
        area += x0 * y1 - x1 * y0
    return 1.0 if area > 0 else -1.0


def _deposit_line_3d(rows, domain: Domain, axis: int, trans, weights):
    grid = domain.grid
    t_axes = [ax for ax in range(3) if ax != axis]
    t = [(trans[pos] - grid.origin[ax]) / grid.spacing[ax] for pos, ax in enumerate(t_axes)]
    i0, fa = _bilinear_nodes(t[0])
    j0, fb = _bilinear_nodes(t[1])
    Na, Nb = grid.shape[t_axes[0]], grid.shape[t_axes[1]]
    if i0 < 1 or i0 + 1 > Na - 1 or j0 < 1 or j0 + 1 > Nb - 1:
        raise DomainError("line too close to the boundary to rasterize")
    area = grid.spacing[t_axes[0]] * grid.spacing[t_axes[1]]
    pair = tuple(sorted(t_axes))
    sign = _pair_sign(axis, pair[0], pair[1])
    wts = {(i0, j0): (1 - fa) * (1 - fb), (i0 + 1, j0): fa * (1 - fb),
           (i0, j0 + 1): (1 - fa) * fb, (i0 + 1, j0 + 1): fa * fb}
    for i in range(3):
        b = weights[i]
        if b == 0.0:
            continue
        arr = rows[i][pair]
        for (na, nb), w in wts.items():
            idx = [slice(None)] * 3
            idx[t_axes[0]] = na - 1
            idx[t_axes[1]] = nb - 1
            # pair storage carries sign * f_axis; densities are per dual area
            arr[tuple(idx)] += (b * w / area) / sign
    return rows


def _deposit_rectangle_3d(rows, domain: Domain, normal: int, height: float,
                          bounds, weights):
    """Closed loop as the edge curl of a face sheet spanning the rectangle."""
    grid = domain.grid
    t_axes = [ax for ax in range(3) if ax != normal]
    lo_a, hi_a, lo_b, hi_b = bounds
    # fractional face coverage per transverse axis
    cov = []
    for pos, ax in enumerate(t_axes):
        lo = (bounds[2 * pos] - grid.origin[ax]) / grid.spacing[ax]
        hi = (bounds[2 * pos + 1] - grid.origin[ax]) / grid.spacing[ax]
        c = np.clip(np.minimum(hi, np.arange(1, grid.shape[ax] + 1))
                    - np.maximum(lo, np.arange(grid.shape[ax])), 0.0, 1.0)
        cov.append(c)
    tn = (height - grid.origin[normal]) / grid.spacing[normal]
    k0, frac = _bilinear_nodes(tn)
    planes = {k0: 1.0 - frac, k0 + 1: frac}
    sheet = np.zeros(grid.face_shape(normal))
    face_profile = np.multiply.outer(cov[0], cov[1])
    for k, wk in planes.items():
        if wk == 0.0:
            continue
        if k < 1 or k > grid.shape[normal] - 1:
            raise DomainError("rectangle plane too close to the boundary to rasterize")
        idx = [slice(None)] * 3
        idx[normal] = k
        sheet[tuple(idx)] += wk * face_profile / grid.spacing[normal]
    comps = [np.zeros(grid.face_shape(j)) for j in range(3)]
    comps[normal] = sheet
    loop_edges = curl_edges(comps, domain)
    for i in range(3):
        b = weights[i]
        if b == 0.0:
            continue
        for key, arr in loop_edges.items():
            rows[i][key] += b * arr
    return rows
