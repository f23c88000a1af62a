"""Discrete differential operators on the staggered layout.

With scalars at cell centers and vector components on the faces normal
to their axis, the operators below form an exact sequence:

* ``grad`` differences cell values across interior faces,
* ``div`` is its negative transpose (finite-volume divergence),
* ``curl`` differences face values onto the strictly interior
  edge lattice (integer coordinates in the two differenced axes).

Because the curl never touches boundary-face samples, ``curl(grad u)``
vanishes identically (to roundoff) regardless of how the boundary faces
of the gradient are filled, and ``<div b, u> = -<b, grad u>`` holds
exactly whenever ``b`` vanishes on boundary faces.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import DimensionError, PlacementError, ResolutionError, ShapeError
from .fields import (
    CELL,
    STAGGERED,
    IncompatibilityMeasure,
    TensorField,
    VectorField,
    _sl,
)
from .grids import Domain


@dataclass(frozen=True)
class Stencil:
    """Finite-difference scheme selector.

    ``scheme`` is always the staggered first-order pair here (the layout
    guarantees the exact identities above); ``boundary`` controls how the
    gradient fills boundary faces: ``"extrapolate"`` (second order,
    one-sided), ``"zero"`` (homogeneous flux), or ``"flux"`` with given
    boundary data.
    """

    scheme: str = "staggered-first-order"
    boundary: str = "extrapolate"


def levi_civita() -> np.ndarray:
    """Rank-3 alternating symbol with eps[0,1,2] = 1."""
    eps = np.zeros((3, 3, 3))
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        eps[i, j, k] = 1.0
        eps[i, k, j] = -1.0
    return eps


def _diff(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (arr[_sl(arr.ndim, axis, slice(1, None))] - arr[_sl(arr.ndim, axis, slice(None, -1))]) / h


# ---------------------------------------------------------------------------
# gradient / divergence
# ---------------------------------------------------------------------------


def grad_scalar(values: np.ndarray, domain: Domain, boundary: str = "extrapolate",
                flux: Optional[dict] = None) -> list:
    """Staggered gradient of a cell-centered scalar.

    Interior faces carry the two-point difference; boundary faces are
    filled per ``boundary``: one-sided quadratic extrapolation (exact on
    affine data), zero, or prescribed ``flux[(axis, side)]`` arrays.
    """
    grid = domain.grid
    comps = []
    for j in range(domain.n):
        h = grid.spacing[j]
        out = np.zeros(grid.face_shape(j))
        out[_sl(out.ndim, j, slice(1, -1))] = _diff(values, j, h)
        if boundary == "extrapolate":
            v0 = values[_sl(values.ndim, j, 0)]
            v1 = values[_sl(values.ndim, j, 1)]
            v2 = values[_sl(values.ndim, j, 2)]
            out[_sl(out.ndim, j, 0)] = (-2.0 * v0 + 3.0 * v1 - v2) / h
            w0 = values[_sl(values.ndim, j, -1)]
            w1 = values[_sl(values.ndim, j, -2)]
            w2 = values[_sl(values.ndim, j, -3)]
            out[_sl(out.ndim, j, -1)] = (2.0 * w0 - 3.0 * w1 + w2) / h
        elif boundary == "zero":
            pass
        elif boundary == "flux":
            if flux is None:
                raise ShapeError("boundary='flux' needs flux data")
            out[_sl(out.ndim, j, 0)] = flux[(j, 0)]
            out[_sl(out.ndim, j, -1)] = flux[(j, 1)]
        else:
            raise ShapeError(f"unknown boundary treatment {boundary!r}")
        comps.append(out)
    return comps


def grad(u: VectorField, boundary: str = "extrapolate",
         flux_rows: Optional[Sequence[dict]] = None,
         stencil: Optional[Stencil] = None) -> TensorField:
    """Row-wise staggered gradient: ``(Du)_{ij} = d_j u_i``."""
    if stencil is not None:
        boundary = stencil.boundary
    if u.placement != CELL:
        raise PlacementError("grad expects a cell-centered vector field")
    rows = []
    for i in range(u.domain.n):
        flux = None if flux_rows is None else flux_rows[i]
        mode = boundary if flux is None else "flux"
        rows.append(grad_scalar(u.values[..., i], u.domain, mode, flux))
    return TensorField(u.domain, rows, STAGGERED)


def div_staggered(comps: Sequence[np.ndarray], domain: Domain) -> np.ndarray:
    grid = domain.grid
    out = np.zeros(grid.shape)
    for j in range(domain.n):
        out += _diff(comps[j], j, grid.spacing[j])
    return out


def div_rows(beta: TensorField) -> VectorField:
    """Finite-volume divergence of each row: ``(div b)_i = sum_j d_j b_ij``.

    Uses all faces including boundary ones, so it is the exact negative
    adjoint of ``grad`` on compactly supported fields and composes with
    ``grad`` to the mirrored Neumann Laplacian.
    """
    if beta.placement != STAGGERED:
        raise PlacementError("div_rows expects a staggered tensor field")
    n = beta.n
    out = np.empty(beta.grid.shape + (n,))
    for i in range(n):
        out[..., i] = div_staggered(beta.comps[i], beta.domain)
    return VectorField(beta.domain, out, CELL)


# ---------------------------------------------------------------------------
# curl
# ---------------------------------------------------------------------------


def curl_edges(comps: Sequence[np.ndarray], domain: Domain) -> Dict[Tuple[int, int], np.ndarray]:
    """Row curl on the interior edge lattice.

    For each axis pair ``j < k`` returns ``d_k b_j - d_j b_k`` sampled at
    points with integer coordinates ``1..N-1`` in axes ``j`` and ``k``
    and cell-centered coordinates elsewhere.  Only strictly interior
    samples are produced (the distributional curl of the open domain),
    which is what makes ``curl(grad u) = 0`` exact.
    """
    grid = domain.grid
    out = {}
    for j, k in combinations(range(domain.n), 2):
        a = _diff(comps[j], k, grid.spacing[k])
        a = a[_sl(a.ndim, j, slice(1, -1))]
        a = a[_sl(a.ndim, k, slice(None))]
        b = _diff(comps[k], j, grid.spacing[j])
        b = b[_sl(b.ndim, k, slice(1, -1))]
        out[(j, k)] = a - b
    return out


def edge_pair_to_cells(edge: np.ndarray, j: int, k: int, shape: Tuple[int, ...]) -> np.ndarray:
    """Average edge samples onto cells, using only the existing values.

    Interior cells average the four adjacent edge samples; cells in the
    first/last layer along ``j`` or ``k`` average the available ones, so
    constant densities stay exactly constant.
    """
    nd = len(shape)
    work = edge
    for axis in (j, k):
        N = shape[axis]
        padded_shape = list(work.shape)
        padded_shape[axis] = N + 1
        padded = np.zeros(padded_shape)
        padded[_sl(nd, axis, slice(1, N))] = work
        summed = (
            padded[_sl(nd, axis, slice(0, N))] + padded[_sl(nd, axis, slice(1, N + 1))]
        )
        count = np.full(N, 2.0)
        count[0] = 1.0
        count[-1] = 1.0
        cshape = [1] * nd
        cshape[axis] = N
        work = summed / count.reshape(cshape)
    return work


def curl_general(beta: TensorField) -> IncompatibilityMeasure:
    """Discrete row-wise curl as a measure with cell-averaged density.

    The density is antisymmetric in its trailing index pair by
    construction and vanishes to machine precision when ``beta`` is a
    staggered gradient.
    """
    if beta.placement != STAGGERED:
        raise PlacementError("curl_general expects a staggered tensor field")
    n = beta.n
    shape = beta.grid.shape
    ac = np.zeros(shape + (n, n, n))
    for i in range(n):
        edges = curl_edges(beta.comps[i], beta.domain)
        for (j, k), e in edges.items():
            cell = edge_pair_to_cells(e, j, k, shape)
            ac[..., i, j, k] = cell
            ac[..., i, k, j] = -cell
    return IncompatibilityMeasure(beta.domain, ac)


def curl_edge_data(beta: TensorField) -> list:
    """Exact interior-edge curl per row, keyed by the axis pair ``(j, k)``."""
    if beta.placement != STAGGERED:
        raise PlacementError("curl_edge_data expects a staggered tensor field")
    return [curl_edges(beta.comps[i], beta.domain) for i in range(beta.n)]


def dislocation_density_3d(measure: IncompatibilityMeasure) -> TensorField:
    """Matrix dislocation density: epsilon contraction of the 3d curl.

    ``alpha_il = sum_jk eps_ljk m_ijk``.  Because the density is
    antisymmetric in ``(j, k)``, the contraction doubles each independent
    entry, so ``|alpha| = sqrt(2) |m|`` pointwise; this is checked here.
    Ratio computations elsewhere stay on the third-order density, the
    matrix form is a convention-free view.
    """
    if measure.n != 3:
        raise DimensionError("matrix identification of the curl needs n = 3")
    ac = measure.ac
    if ac is None:
        ac = np.zeros(measure.domain.grid.shape + (3, 3, 3))
    alpha = np.einsum("ljk,...ijk->...il", levi_civita(), ac)
    norm_alpha = np.sqrt(np.einsum("...il,...il->...", alpha, alpha))
    norm_m = np.sqrt(np.einsum("...ijk,...ijk->...", ac, ac))
    scale = max(norm_m.max(), 1e-300)
    if np.abs(norm_alpha - np.sqrt(2.0) * norm_m).max() > 1e-12 * scale:
        raise ShapeError("contraction lost the sqrt(2) pointwise identity")
    return TensorField(measure.domain, alpha, CELL)


# ---------------------------------------------------------------------------
# circulation (discrete line integral on the dual lattice)
# ---------------------------------------------------------------------------


def circulation(beta: TensorField, row: int, plane: Tuple[int, int],
                fixed: Sequence[int], rect: Tuple[int, int, int, int]) -> float:
    """Discrete circulation of one row around a rectangle of cells.

    The loop runs counterclockwise in the cell-center lattice of the
    ``plane = (a, b)`` axes around the block ``[lo_a, hi_a) x [lo_b,
    hi_b)``; each step between neighboring cell centers samples the face
    it crosses.  ``fixed`` gives the cell index in the remaining axes.
    """
    a, b = plane
    lo_a, hi_a, lo_b, hi_b = rect
    if beta.placement != STAGGERED:
        raise PlacementError("circulation expects a staggered field")
    grid = beta.grid
    ha, hb = grid.spacing[a], grid.spacing[b]
    comp_a = beta.comps[row][a]
    comp_b = beta.comps[row][b]
    other = [ax for ax in range(beta.n) if ax not in (a, b)]
    base = [None] * beta.n
    for pos, ax in enumerate(other):
        base[ax] = fixed[pos]

    def leg(comp, face_axis, transverse_axis, face_indices, transverse_index, h, sign):
        s = 0.0
        for f in face_indices:
            ii = list(base)
            ii[face_axis] = f
            ii[transverse_axis] = transverse_index
            s += comp[tuple(ii)]
        return sign * h * s

    total = 0.0
    total += leg(comp_a, a, b, range(lo_a + 1, hi_a), lo_b, ha, +1.0)
    total += leg(comp_b, b, a, range(lo_b + 1, hi_b), hi_a - 1, hb, +1.0)
    total += leg(comp_a, a, b, range(lo_a + 1, hi_a), hi_b - 1, ha, -1.0)
    total += leg(comp_b, b, a, range(lo_b + 1, hi_b), lo_a, hb, -1.0)
    return float(total)


# ---------------------------------------------------------------------------
# reflection + mollification
# ---------------------------------------------------------------------------


def _pad_axis(arr: np.ndarray, axis: int, width: int, kind: str) -> np.ndarray:
    """Even extension along one axis: ``symmetric`` about the boundary
    plane for half-integer samples, ``mirror`` about the boundary sample
    for face arrays along their normal axis."""
    if width == 0:
        return arr
    if kind == "symmetric":
        lo = arr[_sl(arr.ndim, axis, slice(width - 1, None, -1))]
        hi = arr[_sl(arr.ndim, axis, slice(-1, -width - 1, -1))]
    elif kind == "mirror":
        lo = arr[_sl(arr.ndim, axis, slice(width, 0, -1))]
        hi = arr[_sl(arr.ndim, axis, slice(-2, -width - 2, -1))]
    else:
        raise ShapeError(f"unknown pad kind {kind!r}")
    return np.concatenate([lo, arr, hi], axis=axis)


def _bump_kernel(domain: Domain, radius: float) -> np.ndarray:
    grid = domain.grid
    axes = []
    for d in range(domain.n):
        h = grid.spacing[d]
        m = int(np.ceil(radius / h)) - 1
        axes.append(np.arange(-m, m + 1) * h)
    mesh = np.meshgrid(*axes, indexing="ij")
    r2 = sum(x ** 2 for x in mesh) / radius ** 2
    kern = np.maximum(0.0, 1.0 - r2) ** 4
    total = kern.sum()
    if total == 0.0:
        kern = np.zeros_like(kern)
        kern[tuple(s // 2 for s in kern.shape)] = 1.0
        return kern
    return kern / total


def extend_reflect_mollify(beta: TensorField, radius: float,
                           margin_cells: int = 0) -> TensorField:
    """Even reflection across every face followed by a bump convolution.

    The kernel is the compact polynomial bump ``(1 - |x|^2/r^2)^4``
    normalized discretely (mass exactly one), so constants are preserved
    and smooth fields change by O(h^2) at radius h.  With
    ``margin_cells > 0`` the result lives on a grid enlarged by that many
    cells per side, carrying the reflected data.
    """
    if not beta.domain.is_cube:
        raise ShapeError("reflection extension is defined for cube domains")
    grid = beta.grid
    hmin = min(grid.spacing)
    if radius < hmin:
        raise ResolutionError(f"mollifier radius {radius} is below the grid spacing {hmin}")
    kern = _bump_kernel(beta.domain, radius)
    pad = [k // 2 + margin_cells for k in kern.shape]
    half = [k // 2 for k in kern.shape]
    was_cell = beta.placement == CELL

    if margin_cells > 0:
        out_domain = Domain.cube(
            beta.n,
            tuple(grid.shape[d] + 2 * margin_cells for d in range(beta.n)),
            side=tuple(grid.side[d] + 2 * margin_cells * grid.spacing[d] for d in range(beta.n)),
            origin=tuple(grid.origin[d] - margin_cells * grid.spacing[d] for d in range(beta.n)),
        )
    else:
        out_domain = beta.domain

    def smooth(arr, normal_axis):
        work = arr
        for d in range(beta.n):
            kind = "mirror" if d == normal_axis else "symmetric"
            work = _pad_axis(work, d, pad[d], kind)
        work = ndimage.convolve(work, kern, mode="constant", cval=0.0)
        sl = tuple(slice(half[d], work.shape[d] - half[d]) for d in range(beta.n))
        return work[sl]

    if was_cell:
        vals = np.empty(out_domain.grid.shape + (beta.n, beta.n))
        for i in range(beta.n):
            for j in range(beta.n):
                vals[..., i, j] = smooth(beta.values[..., i, j], None)
        return TensorField(out_domain, vals, CELL)

    comps = []
    for i in range(beta.n):
        row = []
        for j in range(beta.n):
            row.append(smooth(beta.comps[i][j], j))
        comps.append(row)
    return TensorField(out_domain, comps, STAGGERED)
