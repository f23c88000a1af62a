"""Reproducible test-field construction.

Every generator is a pure function of its ``CaseSpec`` (seed included),
so identical specs yield bit-identical fields.  Compatible fields are
exact staggered gradients of band-limited random displacements;
dislocated fields carry their concentrated incompatibility symbolically
alongside the sampled (or solver-built) strain field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, ShapeError
from .fields import (
    CELL,
    STAGGERED,
    IncompatibilityMeasure,
    PointCharge,
    Segment,
    TensorField,
    VectorField,
)
from .grids import Domain
from .operators import circulation, grad
from .poisson import DivCurlProblem, solve_div_curl


@dataclass(frozen=True)
class CaseSpec:
    """Deterministic description of one generated case.

    ``kind`` is one of ``rotation``, ``gradient``, ``edge-dislocation-2d``,
    ``screw-dislocation-3d``, ``dislocation-loop-3d``, ``mixture``;
    ``params`` holds kind-specific settings (burgers weights, geometry,
    amplitudes).  ``size`` is the cells-per-axis of the generated grid.
    """

    kind: str
    n: int
    size: int
    seed: int
    params: Tuple[Tuple[str, object], ...] = ()

    KINDS = (
        "rotation",
        "gradient",
        "edge-dislocation-2d",
        "screw-dislocation-3d",
        "dislocation-loop-3d",
        "mixture",
    )

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ShapeError(f"unknown case kind {self.kind!r}")
        if self.n not in (2, 3):
            raise ShapeError("cases are 2d or 3d")

    def param(self, key, default=None):
        return dict(self.params).get(key, default)

    def with_size(self, size: int) -> "CaseSpec":
        return CaseSpec(self.kind, self.n, int(size), self.seed, self.params)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "size": self.size,
            "seed": self.seed,
            "params": {k: v for k, v in self.params},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaseSpec":
        params = tuple(sorted((str(k), _jsonable(v)) for k, v in d.get("params", {}).items()))
        return cls(d["kind"], int(d["n"]), int(d["size"]), int(d["seed"]), params)


def _jsonable(v):
    if isinstance(v, (list, tuple)):
        return tuple(_jsonable(x) for x in v)
    return v


# ---------------------------------------------------------------------------
# elementary generators
# ---------------------------------------------------------------------------


def _vortex(b: float, dx: np.ndarray, dy: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    rho2 = dx * dx + dy * dy
    rho2 = np.where(rho2 == 0.0, 1.0, rho2)
    coef = b / (2.0 * np.pi)
    return -coef * dy / rho2, coef * dx / rho2


def gen_point_dislocation_2d(domain: Domain, burgers: Sequence[float],
                             position: Sequence[float]):
    """Planar point dislocation: each row is the classical vortex field.

    ``beta_i = (b_i / 2 pi) (-(y - y0), x - x0) / rho^2`` so the discrete
    circulation of row ``i`` around the point is ``b_i``; the measure is
    the single weighted point.  The point must sit at least ``4h`` inside
    and at least ``h/4`` off the sample lattice.
    """
    if domain.n != 2:
        raise DomainError("point dislocations are 2d")
    grid = domain.grid
    h = min(grid.spacing)
    x0 = np.asarray(position, dtype=float)
    for d in range(2):
        if x0[d] - grid.origin[d] < 4 * h or grid.high[d] - x0[d] < 4 * h:
            raise DomainError("dislocation point closer than 4h to the boundary")
        t = (x0[d] - grid.origin[d]) / grid.spacing[d]
        if min(abs(t - np.floor(t)), abs(np.ceil(t) - t)) < 0.25:
            raise DomainError("dislocation point must sit at least h/4 off the lattice")
    b = np.asarray(burgers, dtype=float)
    comps = []
    for i in range(2):
        row = []
        for j in range(2):
            pts = grid.face_points(j)
            vx, vy = _vortex(b[i], pts[0] - x0[0], pts[1] - x0[1])
            row.append(vx if j == 0 else vy)
        comps.append(row)
    beta = TensorField(domain, comps, STAGGERED)
    measure = IncompatibilityMeasure(domain, points=[PointCharge(tuple(x0), tuple(b))])
    return beta, measure


_CYCLIC_TRANSVERSE = {0: (1, 2), 1: (2, 0), 2: (0, 1)}


def gen_screw_dislocation_3d(domain: Domain, burgers: float, axis: int,
                             position: Sequence[float]):
    """Straight screw line through the cube, parallel to a coordinate axis.

    The row matching the axis carries the planar vortex field extended
    constantly along the line, oriented in the cyclic transverse frame so
    its row curl points along ``+axis``; the measure is the full chord
    with weight ``b (e_axis x e_axis)``, total variation ``|b| * length``.
    ``position`` gives the two transverse coordinates in cyclic order.
    """
    if domain.n != 3:
        raise DomainError("screw dislocations are 3d")
    grid = domain.grid
    a_ax, b_ax = _CYCLIC_TRANSVERSE[axis]
    h = min(grid.spacing)
    pos = np.asarray(position, dtype=float)
    for p, ax in zip(pos, (a_ax, b_ax)):
        if p - grid.origin[ax] < 4 * h or grid.high[ax] - p < 4 * h:
            raise DomainError("line closer than 4h to the boundary")
        t = (p - grid.origin[ax]) / grid.spacing[ax]
        if min(abs(t - np.floor(t)), abs(np.ceil(t) - t)) < 0.25:
            raise DomainError("line must sit at least h/4 off the lattice")
    comps = [[np.zeros(grid.face_shape(j)) for j in range(3)] for _ in range(3)]
    for j in (a_ax, b_ax):
        pts = grid.face_points(j)
        va, vb = _vortex(burgers, pts[a_ax] - pos[0], pts[b_ax] - pos[1])
        comps[axis][j] = va if j == a_ax else vb
    beta = TensorField(domain, comps, STAGGERED)
    start = [0.0, 0.0, 0.0]
    end = [0.0, 0.0, 0.0]
    for p, ax in zip(pos, (a_ax, b_ax)):
        start[ax] = p
        end[ax] = p
    start[axis] = grid.origin[axis]
    end[axis] = grid.high[axis]
    weight = np.zeros((3, 3))
    weight[axis, axis] = burgers
    measure = IncompatibilityMeasure(
        domain, segments=[Segment(tuple(start), tuple(end), weight)]
    )
    return beta, measure


def gen_loop_dislocation_3d(domain: Domain, burgers: Sequence[float], normal: int,
                            height: float, bounds: Sequence[float]):
    """Rectangular dislocation loop, built by the div-curl solver.

    ``bounds = (lo_a, hi_a, lo_b, hi_b)`` in the two transverse axes,
    traversed counterclockwise about ``+normal``.  The strain field is
    the tangential divergence-free reconstruction from the rasterized
    loop, so its discrete circulations are exact by construction.
    """
    if domain.n != 3:
        raise DomainError("dislocation loops are 3d")
    b = np.asarray(burgers, dtype=float)
    t_axes = [ax for ax in range(3) if ax != normal]
    lo_a, hi_a, lo_b, hi_b = bounds
    corners = []
    for pa, pb in ((lo_a, lo_b), (hi_a, lo_b), (hi_a, hi_b), (lo_a, hi_b)):
        c = [0.0, 0.0, 0.0]
        c[normal] = height
        c[t_axes[0]] = pa
        c[t_axes[1]] = pb
        corners.append(tuple(c))
    segments = []
    for idx in range(4):
        a = np.asarray(corners[idx])
        bpt = np.asarray(corners[(idx + 1) % 4])
        tangent = bpt - a
        tangent = tangent / np.linalg.norm(tangent)
        segments.append(Segment(tuple(a), tuple(bpt), np.outer(b, tangent)))
    measure = IncompatibilityMeasure(domain, segments=segments)
    Z, _ = solve_div_curl(DivCurlProblem.from_measure(measure))
    return Z, measure


def _band_limited_displacement(domain: Domain, rng: np.random.Generator,
                               amplitude: float, shells: int = 8) -> np.ndarray:
    """Smooth random displacement from the lowest frequency shells."""
    grid = domain.grid
    n = domain.n
    pts = grid.cell_centers()
    rel = [
        (pts[d] - grid.origin[d]) / grid.side[d] for d in range(n)
    ]
    modes = []
    ranges = [range(0, 4)] * n
    from itertools import product

    for k in product(*ranges):
        k2 = sum(x * x for x in k)
        if 1 <= k2 <= shells:
            modes.append(k)
    out = np.zeros(grid.shape + (n,))
    for i in range(n):
        for k in modes:
            amp = rng.normal() / (1.0 + sum(x * x for x in k))
            phases = rng.uniform(0.0, 2.0 * np.pi, size=n)
            wave = np.ones(grid.shape)
            for d in range(n):
                wave = wave * np.cos(np.pi * k[d] * rel[d] + phases[d])
            out[..., i] += amp * wave
    scale = np.abs(out).max()
    if scale > 0:
        out *= amplitude / scale
    return out


def gen_compatible(domain: Domain, seed: int, amplitude: float) -> TensorField:
    """Exact discrete gradient ``D(id + amplitude psi)``: zero discrete curl."""
    if amplitude < 0:
        raise ShapeError("amplitude must be nonnegative")
    rng = np.random.default_rng(seed)
    grid = domain.grid
    pts = grid.cell_centers()
    u = np.stack(pts, axis=-1).astype(float)
    if amplitude > 0:
        u = u + _band_limited_displacement(domain, rng, amplitude)
    return grad(VectorField(domain, u, CELL))


def random_rotation(n: int, rng: np.random.Generator) -> np.ndarray:
    if n == 2:
        th = rng.uniform(0.0, 2.0 * np.pi)
        return np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    from .rigidity import rotation_from_axis_angle

    v = rng.normal(size=3)
    v = v / np.linalg.norm(v) * rng.uniform(0.0, np.pi)
    return rotation_from_axis_angle(v)


def gen_rotation(domain: Domain, seed: int) -> TensorField:
    rng = np.random.default_rng(seed)
    return TensorField.constant(domain, random_rotation(domain.n, rng), STAGGERED)


# ---------------------------------------------------------------------------
# dispatch, mixtures, corpus
# ---------------------------------------------------------------------------


def _empty_measure(domain: Domain) -> IncompatibilityMeasure:
    return IncompatibilityMeasure(domain)


def _lattice_safe(domain: Domain, rng: np.random.Generator, count: int) -> np.ndarray:
    """Interior coordinates well clear of the boundary and off-lattice.

    The raw draw is grid-free (a fixed fraction band of the side), so the
    same seed lands on the same point at every resolution up to the
    off-lattice snap of less than one cell.
    """
    grid = domain.grid
    out = np.empty(count)
    for i in range(count):
        u = float(rng.uniform(0.3, 0.7)) * grid.side[0]
        out[i] = grid.origin[0] + _off_lattice(domain, u)
    return out


def generate(spec: CaseSpec, domain: Optional[Domain] = None):
    """Materialize a case: returns ``(beta, measure)`` on its domain."""
    if domain is None:
        domain = Domain.cube(spec.n, spec.size)
    rng = np.random.default_rng(spec.seed)
    kind = spec.kind
    if kind == "rotation":
        return gen_rotation(domain, spec.seed), _empty_measure(domain)
    if kind == "gradient":
        amp = float(spec.param("amplitude", 0.1))
        return gen_compatible(domain, spec.seed, amp), _empty_measure(domain)
    if kind == "edge-dislocation-2d":
        b = spec.param("burgers", (1.0, 0.0))
        pos = spec.param("position")
        if pos is None:
            pos = tuple(_lattice_safe(domain, rng, 2))
        return gen_point_dislocation_2d(domain, b, pos)
    if kind == "screw-dislocation-3d":
        b = float(spec.param("burgers", 1.0))
        axis = int(spec.param("axis", 2))
        pos = spec.param("position")
        if pos is None:
            pos = tuple(_lattice_safe(domain, rng, 2))
        return gen_screw_dislocation_3d(domain, b, axis, pos)
    if kind == "dislocation-loop-3d":
        b = spec.param("burgers", (1.0, 0.0, 0.0))
        normal = int(spec.param("normal", 2))
        side = domain.grid.side[0]
        lo = _off_lattice(domain, float(spec.param("lo", 0.25)) * side)
        hi = _off_lattice(domain, float(spec.param("hi", 0.75)) * side)
        height = _off_lattice(domain, float(spec.param("height", 0.5)) * side)
        return gen_loop_dislocation_3d(domain, b, normal, height, (lo, hi, lo, hi))
    if kind == "mixture":
        return gen_mixture(spec, domain)
    raise ShapeError(f"unknown case kind {kind!r}")


def _off_lattice(domain: Domain, value: float) -> float:
    """Nudge a coordinate to sit 0.4h past a lattice plane."""
    h = min(domain.grid.spacing)
    cells = np.floor(value / h)
    return float((cells + 0.4) * h)


def gen_mixture(spec: CaseSpec, domain: Optional[Domain] = None):
    """Compatible field + constant rotation + rasterized dislocations."""
    if domain is None:
        domain = Domain.cube(spec.n, spec.size)
    rng = np.random.default_rng(spec.seed)
    amp = float(spec.param("amplitude", 0.1))
    n_disloc = int(spec.param("dislocations", 1))
    beta = gen_compatible(domain, spec.seed + 1, amp)
    rot = random_rotation(domain.n, rng) - np.eye(domain.n)
    beta = beta + TensorField.constant(domain, rot, STAGGERED)
    measure = _empty_measure(domain)
    for d in range(n_disloc):
        b_mag = float(rng.uniform(0.4, 1.2)) * (1.0 if rng.uniform() < 0.7 else -1.0)
        if domain.n == 2:
            pos = tuple(_lattice_safe(domain, rng, 2))
            angle = rng.uniform(0.0, 2 * np.pi)
            bvec = (b_mag * np.cos(angle), b_mag * np.sin(angle))
            part, m = gen_point_dislocation_2d(domain, bvec, pos)
        else:
            if rng.uniform() < 0.5:
                axis = int(rng.integers(0, 3))
                pos = tuple(_lattice_safe(domain, rng, 2))
                part, m = gen_screw_dislocation_3d(domain, b_mag, axis, pos)
            else:
                normal = int(rng.integers(0, 3))
                side = domain.grid.side[0]
                lo = _off_lattice(domain, float(rng.uniform(0.2, 0.35)) * side)
                hi = _off_lattice(domain, float(rng.uniform(0.6, 0.8)) * side)
                height = _off_lattice(domain, float(rng.uniform(0.35, 0.65)) * side)
                bvec = np.zeros(3)
                bvec[int(rng.integers(0, 3))] = b_mag
                part, m = gen_loop_dislocation_3d(domain, bvec, normal, height,
                                                  (lo, hi, lo, hi))
        beta = beta + part
        measure = measure + m
    return beta, measure


def build_corpus(n: int, size: int, seed: int = 20260808, count: int = 30) -> list:
    """Mixed corpus: compatible, rotational, dislocated, and mixtures."""
    specs = []
    rng = np.random.default_rng(seed)
    amps = (0.02, 0.05, 0.1, 0.2, 0.4, 0.8)
    for i, amp in enumerate(amps):
        specs.append(CaseSpec("gradient", n, size, seed + i, (("amplitude", amp),)))
    for i in range(3):
        specs.append(CaseSpec("rotation", n, size, seed + 100 + i))
    idx = 0
    while len(specs) < count - 9:
        if n == 2:
            specs.append(CaseSpec("edge-dislocation-2d", n, size, seed + 200 + idx,
                                  (("burgers", (1.0, 0.25 * (idx % 3))),)))
        else:
            if idx % 2 == 0:
                specs.append(CaseSpec("screw-dislocation-3d", n, size, seed + 200 + idx,
                                      (("axis", idx % 3), ("burgers", 1.0))))
            else:
                specs.append(CaseSpec("dislocation-loop-3d", n, size, seed + 200 + idx,
                                      (("normal", idx % 3),
                                       ("burgers", tuple(np.eye(3)[(idx // 2) % 3])))))
        idx += 1
    i = 0
    while len(specs) < count:
        specs.append(CaseSpec("mixture", n, size, seed + 300 + i,
                              (("amplitude", 0.05 + 0.05 * (i % 4)),
                               ("dislocations", 1 + i % 2))))
        i += 1
    return specs


# ---------------------------------------------------------------------------
# consistency and rescaling
# ---------------------------------------------------------------------------


def linked_weight(measure: IncompatibilityMeasure, row: int, plane: Tuple[int, int],
                  fixed_coords: Sequence[float], rect_coords) -> float:
    """Concentrated weight a counterclockwise plane loop should measure.

    For points (2d) this is the enclosed row weight; for segments (3d)
    the plane-crossing weight column, signed by the orientation of the
    sorted plane pair relative to the crossing axis.
    """
    from .operators import levi_civita

    a_ax, b_ax = plane
    lo_a, hi_a, lo_b, hi_b = rect_coords
    total = 0.0
    n = measure.n
    if n == 2:
        for p in measure.points:
            if lo_a < p.position[0] < hi_a and lo_b < p.position[1] < hi_b:
                total += p.weight[row]
        return total
    other = [ax for ax in range(3) if ax not in plane][0]
    sign_plane = float(levi_civita()[other, a_ax, b_ax])
    z0 = fixed_coords[0]
    for s in measure.segments:
        sa, sb = np.asarray(s.start), np.asarray(s.end)
        d = sb - sa
        if abs(d[other]) < 1e-12:
            continue
        t = (z0 - sa[other]) / d[other]
        if not (0.0 <= t <= 1.0):
            continue
        x = sa + t * d
        if lo_a < x[a_ax] < hi_a and lo_b < x[b_ax] < hi_b:
            # the weight column along the crossing axis carries orientation
            total += s.weight[row, other]
    return sign_plane * total


def consistency_check(beta: TensorField, measure: IncompatibilityMeasure,
                      loops: int = 50, seed: int = 7, margin_cells: int = 8) -> float:
    """Worst mismatch between loop circulations and linked measure weight.

    Loops are random axis-plane rectangles whose sides keep
    ``margin_cells`` cells away from the concentrated support.  Returns
    the largest absolute discrepancy, normalized by the largest
    concentrated weight (or 1 for compatible fields).
    """
    rng = np.random.default_rng(seed)
    grid = beta.grid
    n = beta.n
    h = min(grid.spacing)
    scale = 1.0
    for p in measure.points:
        scale = max(scale, float(np.abs(p.weight).max()))
    for s in measure.segments:
        scale = max(scale, float(np.abs(s.weight).max()))
    worst = 0.0
    planes = [(0, 1)] if n == 2 else [(0, 1), (0, 2), (1, 2)]
    for _ in range(loops):
        a_ax, b_ax = planes[rng.integers(0, len(planes))]
        rect_cells = _random_loop(rng, grid, (a_ax, b_ax), measure, margin_cells)
        if rect_cells is None:
            continue
        lo_a, hi_a, lo_b, hi_b, fixed = rect_cells
        row = int(rng.integers(0, n))
        got = circulation(beta, row, (a_ax, b_ax), fixed, (lo_a, hi_a, lo_b, hi_b))
        coords = (
            grid.origin[a_ax] + lo_a * grid.spacing[a_ax],
            grid.origin[a_ax] + hi_a * grid.spacing[a_ax],
            grid.origin[b_ax] + lo_b * grid.spacing[b_ax],
            grid.origin[b_ax] + hi_b * grid.spacing[b_ax],
        )
        fixed_coords = [
            grid.origin[ax] + (fixed[pos] + 0.5) * grid.spacing[ax]
            for pos, ax in enumerate(ax2 for ax2 in range(n) if ax2 not in (a_ax, b_ax))
        ]
        want = linked_weight(measure, row, (a_ax, b_ax), fixed_coords, coords)
        worst = max(worst, abs(got - want) / scale)
    return worst


def _random_loop(rng, grid, plane, measure, margin_cells):
    a_ax, b_ax = plane
    Na, Nb = grid.shape[a_ax], grid.shape[b_ax]
    if Na < 4 * margin_cells or Nb < 4 * margin_cells:
        return None
    for _ in range(40):
        lo_a = int(rng.integers(1, Na - 2 * margin_cells))
        hi_a = int(rng.integers(lo_a + margin_cells, Na))
        lo_b = int(rng.integers(1, Nb - 2 * margin_cells))
        hi_b = int(rng.integers(lo_b + margin_cells, Nb))
        fixed = []
        ok = True
        for ax in range(grid.n):
            if ax in plane:
                continue
            fixed.append(int(rng.integers(0, grid.shape[ax])))
        if _loop_clears_support(grid, plane, (lo_a, hi_a, lo_b, hi_b), fixed,
                                measure, margin_cells):
            return lo_a, hi_a, lo_b, hi_b, fixed
    return None


def _loop_clears_support(grid, plane, rect, fixed, measure, margin_cells):
    a_ax, b_ax = plane
    lo_a, hi_a, lo_b, hi_b = rect
    h = min(grid.spacing)
    margin = margin_cells * h

    def clearance(pa, pb):
        # distance from a point (in plane coords) to the rectangle sides
        ca = grid.origin[a_ax] + np.array([lo_a, hi_a]) * grid.spacing[a_ax]
        cb = grid.origin[b_ax] + np.array([lo_b, hi_b]) * grid.spacing[b_ax]
        inside_a = ca[0] < pa < ca[1]
        inside_b = cb[0] < pb < cb[1]
        da = min(abs(pa - ca[0]), abs(pa - ca[1]))
        db = min(abs(pb - cb[0]), abs(pb - cb[1]))
        if inside_a and inside_b:
            return min(da, db)
        if inside_a:
            return db
        if inside_b:
            return da
        return float(np.hypot(da, db))

    for p in measure.points:
        if clearance(p.position[a_ax], p.position[b_ax]) < margin:
            return False
    for s in measure.segments:
        for t in np.linspace(0.0, 1.0, 9):
            x = np.asarray(s.start) + t * (np.asarray(s.end) - np.asarray(s.start))
            if clearance(x[a_ax], x[b_ax]) < margin:
                return False
    return True


def scale_case(beta: TensorField, measure: IncompatibilityMeasure, factor: float,
               center: Optional[Sequence[float]] = None):
    """Spatially rescale a case: same samples on a stretched cube.

    ``beta_r(x) = beta(x / r)`` keeps every sample value; the measure is
    pushed forward with the matching weight scalings, so both sides of
    the inequality reports scale by the same power of ``r``.
    """
    grid = beta.grid
    n = beta.n
    r = float(factor)
    origin = tuple(o * r for o in grid.origin) if center is None else tuple(center)
    scaled = Domain.cube(
        n,
        grid.shape,
        side=tuple(s * r for s in grid.side),
        origin=origin,
    )
    if beta.placement == CELL:
        beta_r = TensorField(scaled, beta.values.copy(), CELL)
    else:
        comps = [[c.copy() for c in row] for row in beta.comps]
        beta_r = TensorField(scaled, comps, STAGGERED)
    measure_r = measure.scaled_geometry(r, scaled)
    return beta_r, measure_r
