"""Matrix-valued fields, norms, and incompatibility measures.

A ``TensorField`` holds an ``n x n`` matrix per sample point, either
cell-centered (one ``(*shape, n, n)`` array) or staggered, with entry
``(i, j)`` sampled on the faces normal to axis ``j`` so that row ``i``
is a face-staggered vector field.  Norms integrate with the midpoint
rule on cell centers; staggered data is collocated by face averaging
first.

An ``IncompatibilityMeasure`` is the discrete row-wise curl of a field:
an absolutely continuous third-order density per cell plus a symbolic
concentrated part (weighted points in 2d, weighted segments in 3d).
Total variation combines the Frobenius cell sum of the density with
weight-magnitude times length of the concentrated pieces.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DimensionError,
    DomainError,
    PlacementError,
    ShapeError,
)
from .grids import Domain

CELL = "cell"
STAGGERED = "staggered"


def critical_exponent(n: int) -> float:
    """Sobolev conjugate of 1: the integrability a measure-curl controls."""
    return n / (n - 1.0)


@dataclass(frozen=True)
class NormSpec:
    """Exponent and optional weight of an integral norm.

    ``weak=True`` selects the weak-type quasinorm
    ``sup_t t |{|f| > t}|^{1/p}`` instead of the strong norm.
    ``weight`` is a nonnegative cell array multiplying the integrand.
    """

    p: float
    weak: bool = False
    weight: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.p < 1:
            raise ShapeError(f"exponent must be >= 1, got {self.p}")


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


class VectorField:
    """Vector field, cell-centered ``(*shape, n)`` or face-staggered."""

    def __init__(self, domain: Domain, data, placement: str = CELL):
        self.domain = domain
        self.placement = placement
        n = domain.n
        if placement == CELL:
            data = np.asarray(data, dtype=float)
            if data.shape != domain.grid.shape + (n,):
                raise ShapeError("cell vector field must have shape (*cells, n)")
            self.values = data
            self.comps = None
        elif placement == STAGGERED:
            comps = tuple(np.asarray(c, dtype=float) for c in data)
            if len(comps) != n:
                raise ShapeError(f"need {n} staggered components")
            for j, c in enumerate(comps):
                if c.shape != domain.grid.face_shape(j):
                    raise ShapeError(f"component {j} must live on {j}-faces")
            self.comps = comps
            self.values = None
        else:
            raise PlacementError(f"unknown placement {placement!r}")

    @property
    def grid(self):
        return self.domain.grid

    def collocate(self) -> "VectorField":
        """Average face pairs to cell centers (identity for cell fields)."""
        if self.placement == CELL:
            return self
        n = self.domain.n
        out = np.empty(self.grid.shape + (n,))
        for j in range(n):
            out[..., j] = _face_to_cell(self.comps[j], j)
        return VectorField(self.domain, out, CELL)

    @classmethod
    def zeros(cls, domain: Domain, placement: str = CELL) -> "VectorField":
        if placement == CELL:
            return cls(domain, np.zeros(domain.grid.shape + (domain.n,)), CELL)
        comps = [np.zeros(domain.grid.face_shape(j)) for j in range(domain.n)]
        return cls(domain, comps, STAGGERED)

    @classmethod
    def sample(cls, domain: Domain, fn: Callable, placement: str = CELL) -> "VectorField":
        """Sample ``fn(coords) -> (..., n)`` at the placement's points."""
        n = domain.n
        if placement == CELL:
            pts = domain.grid.cell_centers()
            return cls(domain, np.asarray(fn(pts), dtype=float), CELL)
        comps = []
        for j in range(n):
            pts = domain.grid.face_points(j)
            comps.append(np.asarray(fn(pts), dtype=float)[..., j])
        return cls(domain, comps, STAGGERED)


class TensorField:
    """Matrix-valued field on a domain; see module docstring for layout."""

    def __init__(self, domain: Domain, data, placement: str = CELL):
        self.domain = domain
        self.placement = placement
        n = domain.n
        if placement == CELL:
            data = np.asarray(data, dtype=float)
            if data.shape != domain.grid.shape + (n, n):
                raise ShapeError("cell tensor field must have shape (*cells, n, n)")
            self.values = data
            self.comps = None
        elif placement == STAGGERED:
            comps = tuple(tuple(np.asarray(c, dtype=float) for c in row) for row in data)
            if len(comps) != n or any(len(r) != n for r in comps):
                raise ShapeError(f"need an {n} x {n} table of components")
            for i in range(n):
                for j in range(n):
                    if comps[i][j].shape != domain.grid.face_shape(j):
                        raise ShapeError(f"component ({i},{j}) must live on {j}-faces")
            self.comps = comps
            self.values = None
        else:
            raise PlacementError(f"unknown placement {placement!r}")
        if not self.all_finite():
            raise ShapeError("tensor field entries must be finite")

    # -- construction ---------------------------------------------------

    @classmethod
    def zeros(cls, domain: Domain, placement: str = STAGGERED) -> "TensorField":
        if placement == CELL:
            return cls(domain, np.zeros(domain.grid.shape + (domain.n, domain.n)), CELL)
        n = domain.n
        comps = [[np.zeros(domain.grid.face_shape(j)) for j in range(n)] for _ in range(n)]
        return cls(domain, comps, STAGGERED)

    @classmethod
    def constant(cls, domain: Domain, matrix, placement: str = STAGGERED) -> "TensorField":
        M = np.asarray(matrix, dtype=float)
        n = domain.n
        if M.shape != (n, n):
            raise ShapeError(f"constant must be {n} x {n}")
        if placement == CELL:
            vals = np.broadcast_to(M, domain.grid.shape + (n, n)).copy()
            return cls(domain, vals, CELL)
        comps = [
            [np.full(domain.grid.face_shape(j), M[i, j]) for j in range(n)] for i in range(n)
        ]
        return cls(domain, comps, STAGGERED)

    @classmethod
    def sample(cls, domain: Domain, fn: Callable, placement: str = STAGGERED) -> "TensorField":
        """Sample ``fn(coords) -> (..., n, n)`` at cell or face points."""
        n = domain.n
        if placement == CELL:
            pts = domain.grid.cell_centers()
            return cls(domain, np.asarray(fn(pts), dtype=float), CELL)
        comps = []
        for i in range(n):
            comps.append([])
        for j in range(n):
            pts = domain.grid.face_points(j)
            vals = np.asarray(fn(pts), dtype=float)
            for i in range(n):
                comps[i].append(vals[..., i, j])
        return cls(domain, comps, STAGGERED)

    @classmethod
    def from_rows(cls, domain: Domain, rows: Sequence[VectorField]) -> "TensorField":
        comps = [list(r.comps) for r in rows]
        return cls(domain, comps, STAGGERED)

    # -- basic queries ----------------------------------------------------

    @property
    def grid(self):
        return self.domain.grid

    @property
    def n(self) -> int:
        return self.domain.n

    def all_finite(self) -> bool:
        if self.placement == CELL:
            return bool(np.isfinite(self.values).all())
        return all(np.isfinite(c).all() for row in self.comps for c in row)

    def row(self, i: int) -> VectorField:
        if self.placement != STAGGERED:
            raise PlacementError("rows are only defined for staggered fields")
        return VectorField(self.domain, self.comps[i], STAGGERED)

    def boundary_flux(self, i: int) -> dict:
        """Boundary-face samples of row ``i`` (the normal trace)."""
        if self.placement != STAGGERED:
            raise PlacementError("normal traces need a staggered field")
        out = {}
        for j in range(self.n):
            arr = self.comps[i][j]
            out[(j, 0)] = arr[_sl(arr.ndim, j, 0)].copy()
            out[(j, 1)] = arr[_sl(arr.ndim, j, -1)].copy()
        return out

    def collocate(self) -> "TensorField":
        """Average face pairs to cell centers (identity for cell fields)."""
        if self.placement == CELL:
            return self
        n = self.n
        out = np.empty(self.grid.shape + (n, n))
        for i in range(n):
            for j in range(n):
                out[..., i, j] = _face_to_cell(self.comps[i][j], j)
        return TensorField(self.domain, out, CELL)

    def transpose(self) -> "TensorField":
        if self.placement == CELL:
            return TensorField(self.domain, np.swapaxes(self.values, -1, -2), CELL)
        coll = self.collocate()
        return coll.transpose()

    def block(self, lo_cells: Sequence[int], size_cells: Sequence[int]) -> "TensorField":
        """Restriction to a cell block, as a field on the block cube."""
        sub = self.domain.block_domain(lo_cells, size_cells)
        n = self.n
        if self.placement == CELL:
            sl = tuple(slice(lo_cells[d], lo_cells[d] + size_cells[d]) for d in range(n))
            return TensorField(sub, self.values[sl], CELL)
        comps = []
        for i in range(n):
            row = []
            for j in range(n):
                sl = tuple(
                    slice(lo_cells[d], lo_cells[d] + size_cells[d] + (1 if d == j else 0))
                    for d in range(n)
                )
                row.append(self.comps[i][j][sl])
            comps.append(row)
        return TensorField(sub, comps, STAGGERED)

    # -- algebra ----------------------------------------------------------

    def _binary(self, other, op) -> "TensorField":
        if isinstance(other, TensorField):
            if other.placement != self.placement or other.grid.shape != self.grid.shape:
                raise ShapeError("operands must share placement and grid")
            if self.placement == CELL:
                return TensorField(self.domain, op(self.values, other.values), CELL)
            comps = [
                [op(self.comps[i][j], other.comps[i][j]) for j in range(self.n)]
                for i in range(self.n)
            ]
            return TensorField(self.domain, comps, STAGGERED)
        M = np.asarray(other, dtype=float)
        if M.shape != (self.n, self.n):
            raise ShapeError("can only combine with a field or a constant matrix")
        if self.placement == CELL:
            return TensorField(self.domain, op(self.values, M), CELL)
        comps = [
            [op(self.comps[i][j], M[i, j]) for j in range(self.n)] for i in range(self.n)
        ]
        return TensorField(self.domain, comps, STAGGERED)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, scalar):
        s = float(scalar)
        if self.placement == CELL:
            return TensorField(self.domain, self.values * s, CELL)
        comps = [[c * s for c in row] for row in self.comps]
        return TensorField(self.domain, comps, STAGGERED)

    __rmul__ = __mul__

    def left_multiply(self, matrix) -> "TensorField":
        """Constant matrix acting on the left (rows are mixed, layout kept)."""
        M = np.asarray(matrix, dtype=float)
        if self.placement == CELL:
            return TensorField(self.domain, np.einsum("im,...mj->...ij", M, self.values), CELL)
        n = self.n
        comps = [
            [sum(M[i, m] * self.comps[m][j] for m in range(n)) for j in range(n)]
            for i in range(n)
        ]
        return TensorField(self.domain, comps, STAGGERED)


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


def _sl(ndim: int, axis: int, s) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def _face_to_cell(arr: np.ndarray, axis: int) -> np.ndarray:
    return 0.5 * (arr[_sl(arr.ndim, axis, slice(None, -1))] + arr[_sl(arr.ndim, axis, slice(1, None))])


def _pointwise_magnitude(field, domain: Domain) -> np.ndarray:
    """Frobenius magnitude per cell for tensor/vector/scalar input."""
    if isinstance(field, TensorField):
        vals = field.collocate().values
        return np.sqrt(np.einsum("...ij,...ij->...", vals, vals))
    if isinstance(field, VectorField):
        vals = field.collocate().values
        return np.sqrt(np.einsum("...j,...j->...", vals, vals))
    vals = np.asarray(field, dtype=float)
    if vals.shape == domain.grid.shape:
        return np.abs(vals)
    extra = vals.shape[len(domain.grid.shape):]
    if vals.shape[: len(domain.grid.shape)] != domain.grid.shape:
        raise ShapeError("array does not match the domain grid")
    flat = vals.reshape(domain.grid.shape + (-1,)) if extra else vals[..., None]
    return np.sqrt(np.einsum("...k,...k->...", flat, flat))


def lp_norm(field, spec, domain: Optional[Domain] = None) -> float:
    """Integral norm ``(sum_cells w |f|^p h^n)^(1/p)`` over the domain.

    ``field`` may be a TensorField, VectorField, or a cell array; ``spec``
    a NormSpec or a bare exponent.  Staggered fields are collocated to
    cell centers first, magnitudes are Frobenius.  With ``spec.weak`` the
    weak-type quasinorm is computed from the exactly sorted sample
    distribution (no binning).
    """
    if not isinstance(spec, NormSpec):
        spec = NormSpec(float(spec))
    if domain is None:
        if isinstance(field, (TensorField, VectorField)):
            domain = field.domain
        else:
            raise ShapeError("plain arrays need an explicit domain")
    mag = _pointwise_magnitude(field, domain)
    active = domain.active
    weights = np.full(domain.grid.shape, domain.grid.cell_volume)
    if spec.weight is not None:
        w = np.asarray(spec.weight, dtype=float)
        if w.shape != domain.grid.shape:
            raise ShapeError("weight must be a cell array on the same grid")
        weights = weights * w
    mag = mag[active]
    weights = weights[active]
    if spec.weak:
        order = np.argsort(mag)[::-1]
        v = mag[order]
        cum = np.cumsum(weights[order])
        if v.size == 0 or v[0] == 0.0:
            return 0.0
        return float(np.max(v * cum ** (1.0 / spec.p)))
    return float(np.sum(weights * mag ** spec.p) ** (1.0 / spec.p))


def staggered_inner(a: TensorField, b: TensorField) -> float:
    """Face-sample inner product ``sum beta_ij gamma_ij h^n`` (all faces)."""
    if a.placement != STAGGERED or b.placement != STAGGERED:
        raise PlacementError("staggered_inner needs staggered operands")
    if a.grid.shape != b.grid.shape:
        raise ShapeError("operands must share a grid")
    vol = a.grid.cell_volume
    total = 0.0
    for i in range(a.n):
        for j in range(a.n):
            total += float(np.sum(a.comps[i][j] * b.comps[i][j]))
    return total * vol


def cell_inner(u: VectorField, v: VectorField) -> float:
    uu, vv = u.collocate().values, v.collocate().values
    return float(np.sum(uu * vv)) * u.grid.cell_volume


# ---------------------------------------------------------------------------
# incompatibility measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """Oriented straight segment with a constant matrix weight."""

    start: Tuple[float, ...]
    end: Tuple[float, ...]
    weight: np.ndarray  # (n, n), typically burgers x tangent

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.subtract(self.end, self.start)))


@dataclass(frozen=True)
class PointCharge:
    """Point of concentrated incompatibility (2d), one weight per row."""

    position: Tuple[float, ...]
    weight: Tuple[float, ...]


class IncompatibilityMeasure:
    """Row-wise curl of a matrix field, as a discrete vector measure.

    ``ac`` is a cell array of shape ``(*cells, n, n, n)``, antisymmetric
    in its last two indices, holding the absolutely continuous density
    (units 1/length).  ``points`` and ``segments`` carry the concentrated
    part symbolically so total variation is never inflated by
    rasterization.
    """

    def __init__(self, domain: Domain, ac: Optional[np.ndarray] = None,
                 points: Sequence[PointCharge] = (), segments: Sequence[Segment] = ()):
        n = domain.n
        self.domain = domain
        if ac is not None:
            ac = np.asarray(ac, dtype=float)
            if ac.shape != domain.grid.shape + (n, n, n):
                raise ShapeError("ac density must have shape (*cells, n, n, n)")
            skew = ac + np.swapaxes(ac, -1, -2)
            if np.abs(skew).max() > 1e-12 * max(np.abs(ac).max(), 1.0):
                raise ShapeError("ac density must be antisymmetric in its last two indices")
        self.ac = ac
        if points and n != 2:
            raise DimensionError("point charges are the 2d concentrated part")
        if segments and n != 3:
            raise DimensionError("weighted segments are the 3d concentrated part")
        for p in points:
            if not domain.contains_point(p.position):
                raise DomainError(f"point {p.position} lies outside the domain")
        for s in segments:
            _require_segment_inside(domain, s)
        self.points = tuple(points)
        self.segments = tuple(segments)

    @property
    def n(self) -> int:
        return self.domain.n

    def is_empty(self) -> bool:
        no_ac = self.ac is None or not np.any(self.ac)
        return no_ac and not self.points and not self.segments

    def __add__(self, other: "IncompatibilityMeasure") -> "IncompatibilityMeasure":
        if other.domain.grid.shape != self.domain.grid.shape:
            raise ShapeError("measures must share a grid")
        if self.ac is None:
            ac = None if other.ac is None else other.ac.copy()
        elif other.ac is None:
            ac = self.ac.copy()
        else:
            ac = self.ac + other.ac
        return IncompatibilityMeasure(
            self.domain, ac, self.points + other.points, self.segments + other.segments
        )

    def total_variation(self) -> float:
        """Mass of the measure: Frobenius cell sum plus concentrated parts."""
        tv = 0.0
        if self.ac is not None:
            mag = np.sqrt(np.einsum("...ijk,...ijk->...", self.ac, self.ac))
            tv += float(mag[self.domain.active].sum()) * self.domain.grid.cell_volume
        for p in self.points:
            tv += float(np.linalg.norm(p.weight))
        for s in self.segments:
            tv += float(np.linalg.norm(s.weight)) * s.length
        return tv

    def restrict(self, lo_cells: Sequence[int], size_cells: Sequence[int]) -> "IncompatibilityMeasure":
        """Restriction to a cell block (segments are clipped to the block)."""
        sub = self.domain.block_domain(lo_cells, size_cells)
        n = self.n
        ac = None
        if self.ac is not None:
            sl = tuple(slice(lo_cells[d], lo_cells[d] + size_cells[d]) for d in range(n))
            ac = self.ac[sl]
        lo = np.asarray(sub.grid.origin)
        hi = np.asarray(sub.grid.high)
        points = [
            p for p in self.points
            if np.all(np.asarray(p.position) >= lo) and np.all(np.asarray(p.position) <= hi)
        ]
        segments = []
        for s in self.segments:
            clipped = _clip_segment(np.asarray(s.start), np.asarray(s.end), lo, hi)
            if clipped is not None:
                a, b = clipped
                if np.linalg.norm(b - a) > 0:
                    segments.append(Segment(tuple(a), tuple(b), s.weight))
        return IncompatibilityMeasure(sub, ac, points, segments)

    def scaled_geometry(self, factor: float, new_domain: Domain) -> "IncompatibilityMeasure":
        """Push the measure onto a rescaled copy of the domain.

        Matches rescaling the field arguments: the density scales by
        1/factor, concentrated weights pick up factor^(n-1) per point and
        factor^(n-2) per unit of segment weight (lengths scale on their
        own), so total variation gains factor^(n-1) overall.
        """
        r = float(factor)
        n = self.n
        shift_old = np.asarray(self.domain.grid.origin)
        shift_new = np.asarray(new_domain.grid.origin)
        ac = None if self.ac is None else self.ac / r
        points = [
            PointCharge(
                tuple(shift_new + r * (np.asarray(p.position) - shift_old)),
                tuple(np.asarray(p.weight) * r ** (n - 1)),
            )
            for p in self.points
        ]
        segments = [
            Segment(
                tuple(shift_new + r * (np.asarray(s.start) - shift_old)),
                tuple(shift_new + r * (np.asarray(s.end) - shift_old)),
                s.weight * r ** (n - 2),
            )
            for s in self.segments
        ]
        return IncompatibilityMeasure(new_domain, ac, points, segments)


def total_variation(measure: IncompatibilityMeasure, domain: Optional[Domain] = None) -> float:
    """Total variation of a measure (optionally re-checked on a domain)."""
    if domain is not None and domain is not measure.domain:
        if domain.grid.shape != measure.domain.grid.shape:
            raise ShapeError("measure is not defined over this domain")
    return measure.total_variation()


def _require_segment_inside(domain: Domain, seg: Segment, samples: int = 17):
    a = np.asarray(seg.start, dtype=float)
    b = np.asarray(seg.end, dtype=float)
    for t in np.linspace(0.0, 1.0, samples):
        x = a + t * (b - a)
        if not domain.contains_point(x):
            raise DomainError(f"segment leaves the domain near {tuple(np.round(x, 6))}")
    w = np.asarray(seg.weight, dtype=float)
    if w.shape != (domain.n, domain.n):
        raise ShapeError("segment weight must be an n x n matrix")


def _clip_segment(a: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Liang-Barsky clip of segment [a, b] against the box [lo, hi]."""
    d = b - a
    t0, t1 = 0.0, 1.0
    for ax in range(len(lo)):
        if abs(d[ax]) < 1e-300:
            if a[ax] < lo[ax] or a[ax] > hi[ax]:
                return None
            continue
        ta = (lo[ax] - a[ax]) / d[ax]
        tb = (hi[ax] - a[ax]) / d[ax]
        ta, tb = min(ta, tb), max(ta, tb)
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 > t1:
            return None
    return a + t0 * d, a + t1 * d
