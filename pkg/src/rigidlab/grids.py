"""Regular grids and computational domains.

Layout conventions used everywhere else in the package:

* the domain is an axis-aligned box split into ``shape[d]`` cells of
  uniform spacing ``spacing[d]`` along each axis,
* scalar samples live at cell centers ``origin + (i + 1/2) h``,
* the component ``j`` of a staggered vector field lives on the faces
  normal to axis ``j``, at ``origin + i h`` along that axis (``N_j + 1``
  planes, the outermost two lying on the boundary).

Domains are either full boxes ("cube") or voxel masks of a Lipschitz
region embedded in a box.  Masked geometry is resolved at cell level;
whether the region is actually Lipschitz is the caller's responsibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import DimensionError, DomainError, ResolutionError, ShapeError


def _per_axis(value, n, cast=float) -> tuple:
    if np.isscalar(value):
        return tuple(cast(value) for _ in range(n))
    out = tuple(cast(v) for v in value)
    if len(out) != n:
        raise DimensionError(f"expected {n} per-axis values, got {len(out)}")
    return out


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product grid over an axis-aligned box."""

    n: int
    shape: Tuple[int, ...]
    spacing: Tuple[float, ...]
    origin: Tuple[float, ...]

    def __post_init__(self):
        if self.n not in (2, 3):
            raise DimensionError(f"dimension must be 2 or 3, got {self.n}")
        if len(self.shape) != self.n or len(self.spacing) != self.n or len(self.origin) != self.n:
            raise ShapeError("shape/spacing/origin must all have length n")
        if any(s < 2 for s in self.shape):
            raise ResolutionError("need at least 2 cells per axis")
        if any(h <= 0 for h in self.spacing):
            raise ShapeError("spacing must be positive")

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def side(self) -> Tuple[float, ...]:
        return tuple(N * h for N, h in zip(self.shape, self.spacing))

    @property
    def high(self) -> Tuple[float, ...]:
        return tuple(o + s for o, s in zip(self.origin, self.side))

    def cell_axis(self, axis: int) -> np.ndarray:
        """Center coordinates along one axis."""
        N, h, o = self.shape[axis], self.spacing[axis], self.origin[axis]
        return o + (np.arange(N) + 0.5) * h

    def face_axis(self, axis: int) -> np.ndarray:
        """Face-plane coordinates along one axis (N+1 values, ends on the boundary)."""
        N, h, o = self.shape[axis], self.spacing[axis], self.origin[axis]
        return o + np.arange(N + 1) * h

    def face_shape(self, axis: int) -> Tuple[int, ...]:
        s = list(self.shape)
        s[axis] += 1
        return tuple(s)

    def cell_centers(self) -> list:
        """Meshgrid ('ij') of center coordinates, one array per axis."""
        return np.meshgrid(*[self.cell_axis(d) for d in range(self.n)], indexing="ij")

    def face_points(self, axis: int) -> list:
        """Meshgrid of sample coordinates for faces normal to ``axis``."""
        axes = [self.face_axis(d) if d == axis else self.cell_axis(d) for d in range(self.n)]
        return np.meshgrid(*axes, indexing="ij")

    def point_to_cell(self, x: Sequence[float]) -> Tuple[int, ...]:
        idx = []
        for d in range(self.n):
            i = int(np.floor((x[d] - self.origin[d]) / self.spacing[d]))
            idx.append(min(max(i, 0), self.shape[d] - 1))
        return tuple(idx)


@dataclass(eq=False)
class Domain:
    """Axis-aligned cube or voxel mask of a connected region.

    Instances are treated as immutable after construction.  ``mask`` is
    None for cube domains; for masked domains it is a boolean cell array
    marking the region.
    """

    kind: str
    grid: Grid
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("cube", "mask"):
            raise DomainError(f"unknown domain kind {self.kind!r}")
        if self.kind == "mask":
            if self.mask is None or self.mask.shape != self.grid.shape:
                raise ShapeError("mask shape must match the grid")
            if self.mask.dtype != bool:
                raise ShapeError("mask must be boolean")
            if not self.mask.any():
                raise DomainError("mask has empty interior")
            if len(set(self.grid.spacing)) != 1:
                raise ShapeError("masked domains require isotropic spacing")
            structure = ndimage.generate_binary_structure(self.grid.n, 1)
            _, count = ndimage.label(self.mask, structure=structure)
            if count != 1:
                raise DomainError(f"mask must be connected, found {count} components")
            self.mask.setflags(write=False)

    # -- constructors -------------------------------------------------

    @classmethod
    def cube(cls, n: int, cells: int, side: float = 1.0, origin=0.0) -> "Domain":
        """Cube ``origin + (0, side)^n`` with ``cells`` cells per axis."""
        shape = _per_axis(cells, n, int)
        sides = _per_axis(side, n, float)
        org = _per_axis(origin, n, float)
        spacing = tuple(s / N for s, N in zip(sides, shape))
        return cls("cube", Grid(n, shape, spacing, org))

    @classmethod
    def scaled_cube(cls, center: Sequence[float], half_side: float, cells: int) -> "Domain":
        """Cube ``center + (-half_side, half_side)^n``."""
        center = tuple(float(c) for c in center)
        n = len(center)
        origin = tuple(c - half_side for c in center)
        return cls.cube(n, cells, side=2.0 * half_side, origin=origin)

    @classmethod
    def from_mask(cls, mask: np.ndarray, spacing: float, origin=0.0) -> "Domain":
        mask = np.asarray(mask, dtype=bool).copy()
        n = mask.ndim
        grid = Grid(n, mask.shape, _per_axis(spacing, n), _per_axis(origin, n))
        return cls("mask", grid, mask)

    # -- basic queries ------------------------------------------------

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def is_cube(self) -> bool:
        return self.kind == "cube"

    @cached_property
    def active(self) -> np.ndarray:
        """Boolean cell array of the region (all-true for cubes)."""
        if self.is_cube:
            a = np.ones(self.grid.shape, dtype=bool)
            a.setflags(write=False)
            return a
        return self.mask

    @property
    def volume(self) -> float:
        return float(self.active.sum()) * self.grid.cell_volume

    def contains_point(self, x: Sequence[float]) -> bool:
        for d in range(self.n):
            if not (self.grid.origin[d] <= x[d] <= self.grid.high[d]):
                return False
        if self.is_cube:
            return True
        return bool(self.active[self.grid.point_to_cell(x)])

    # -- distance fields ----------------------------------------------

    @cached_property
    def boundary_distance(self) -> np.ndarray:
        """Euclidean distance from each cell center to the region boundary.

        Exact for cubes; for masks a distance transform against the
        complement (the bounding box counts as outside), accurate to one
        cell.  Zero on inactive cells.
        """
        if self.is_cube:
            return self._cube_center_distance()
        h = self.grid.spacing[0]
        padded = np.pad(self.mask, 1, mode="constant", constant_values=False)
        dist = ndimage.distance_transform_edt(padded, sampling=h)
        dist = dist[tuple(slice(1, -1) for _ in range(self.n))]
        out = np.maximum(dist - 0.5 * h, 0.0)
        out[~self.mask] = 0.0
        out.setflags(write=False)
        return out

    @cached_property
    def chebyshev_distance(self) -> np.ndarray:
        """Max-norm distance from cell centers to the boundary (cube-adapted)."""
        if self.is_cube:
            return self._cube_center_distance()
        padded = np.pad(self.mask, 1, mode="constant", constant_values=False)
        steps = ndimage.distance_transform_cdt(padded, metric="chessboard")
        steps = steps[tuple(slice(1, -1) for _ in range(self.n))].astype(float)
        h = self.grid.spacing[0]
        out = np.maximum((steps - 0.5) * h, 0.0)
        out[~self.mask] = 0.0
        out.setflags(write=False)
        return out

    def _cube_center_distance(self) -> np.ndarray:
        dist = None
        for d in range(self.n):
            x = self.grid.cell_axis(d)
            lo, hi = self.grid.origin[d], self.grid.high[d]
            axis_dist = np.minimum(x - lo, hi - x)
            shape = [1] * self.n
            shape[d] = -1
            axis_dist = axis_dist.reshape(shape)
            dist = axis_dist if dist is None else np.minimum(dist, axis_dist)
        return np.broadcast_to(dist, self.grid.shape).copy()

    def block_distance(self, lo_cells: Sequence[int], hi_cells: Sequence[int]) -> float:
        """Max-norm distance from the cell block ``[lo, hi)`` to the boundary.

        For cubes this is exact box arithmetic; for masks it descends to
        the cell-center chessboard field (error at most one cell).
        """
        if self.is_cube:
            d = np.inf
            for ax in range(self.n):
                qlo = self.grid.origin[ax] + lo_cells[ax] * self.grid.spacing[ax]
                qhi = self.grid.origin[ax] + hi_cells[ax] * self.grid.spacing[ax]
                d = min(d, qlo - self.grid.origin[ax], self.grid.high[ax] - qhi)
            return float(d)
        sl = tuple(slice(lo_cells[ax], hi_cells[ax]) for ax in range(self.n))
        block = self.chebyshev_distance[sl]
        if block.size == 0:
            return 0.0
        h = self.grid.spacing[0]
        return float(max(block.min() - 0.5 * h, 0.0))

    # -- block extraction ---------------------------------------------

    def block_domain(self, lo_cells: Sequence[int], size_cells: Sequence[int]) -> "Domain":
        """Cube sub-domain made of whole cells, for per-cube solves."""
        for ax in range(self.n):
            if lo_cells[ax] < 0 or lo_cells[ax] + size_cells[ax] > self.grid.shape[ax]:
                raise DomainError("block extends outside the grid")
        origin = tuple(
            self.grid.origin[ax] + lo_cells[ax] * self.grid.spacing[ax] for ax in range(self.n)
        )
        grid = Grid(self.n, tuple(int(s) for s in size_cells), self.grid.spacing, origin)
        return Domain("cube", grid)
