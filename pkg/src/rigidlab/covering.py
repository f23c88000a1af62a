"""Whitney cube covers, partitions of unity, gluing, weighted Poincare.

The cover is built from a dyadic tile tree: a tile (cell block) of
half-side ``s`` is accepted at the first generation where its dilated
cube ``Q`` (same center, half-side ``r = 2s``) satisfies
``dist(Q, boundary) >= 2 r`` in the max norm; the parent's failure then
bounds ``dist <= 5.5 r < 6 r``, so every cube sits in the window
``[2r, 6r]``.  Inner cubes are the tiles themselves (half-side ``r/2``),
which tile the covered region exactly.

The tree floor is ``r = 2h``.  Cells too close to the boundary for any
admissible cube are attached to the nearest surviving cube; attachment
cells extend that cube's inner and outer cell sets (keeping the
characteristic-function chain intact cell-exactly) and take the flat
extension of its partition weight.  Distances between cubes and the
boundary are measured in the max norm, matching the cube geometry; the
Euclidean distance field is used only as the Poincare weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, optimize

from .errors import DegenerateInputError, ResolutionError, ShapeError
from .fields import CELL, TensorField
from .grids import Domain


@dataclass(frozen=True)
class WhitneyCube:
    """One accepted cube: dilated block plus its generating tile."""

    index: int
    lo: Tuple[int, ...]          # cell start of the dilated block
    size: int                    # cells per axis of the dilated block (2 * tile)
    tile_lo: Tuple[int, ...]
    tile_size: int
    generation: int
    half_side: float             # r, in length units

    def slices(self):
        return tuple(slice(l, l + self.size) for l in self.lo)

    def tile_slices(self):
        return tuple(slice(l, l + self.tile_size) for l in self.tile_lo)

    def center(self, grid) -> np.ndarray:
        return np.array([
            grid.origin[d] + (self.lo[d] + 0.5 * self.size) * grid.spacing[d]
            for d in range(len(self.lo))
        ])


@dataclass
class WhitneyCover:
    domain: Domain
    cubes: List[WhitneyCube]
    tile_owner: np.ndarray            # per-cell accepted tile index, -1 outside
    owner: np.ndarray                 # per-cell owner after attachment, -1 uncovered
    attached: np.ndarray              # bool, covered only through attachment
    covered: np.ndarray               # bool, owner >= 0
    uncovered_interior_fraction: float
    attached_fraction: float
    overlap_multiplicity: int

    def multiplicity_field(self, inner: bool = False, with_attachments: bool = True) -> np.ndarray:
        """Cell counts of the cube (or inner-cube) set system."""
        counts = np.zeros(self.domain.grid.shape, dtype=int)
        for cube in self.cubes:
            counts[cube.tile_slices() if inner else cube.slices()] += 1
        if with_attachments:
            counts[self.attached] += 1
        return counts

    def distance_window(self) -> List[Tuple[float, float]]:
        """Per-cube ``(dist(Q, boundary), half_side)`` pairs."""
        out = []
        for cube in self.cubes:
            hi = tuple(l + cube.size for l in cube.lo)
            out.append((self.domain.block_distance(cube.lo, hi), cube.half_side))
        return out

    def neighbor_pairs(self) -> List[Tuple[int, int]]:
        """Index pairs of geometrically overlapping cubes."""
        J = len(self.cubes)
        lo = np.array([c.lo for c in self.cubes])
        hi = np.array([[l + c.size for l in c.lo] for c in self.cubes])
        pairs = []
        for j in range(J):
            overlap = np.all((lo[j] < hi[j + 1:]) & (lo[j + 1:] < hi[j]), axis=1)
            for k in np.flatnonzero(overlap):
                pairs.append((j, int(j + 1 + k)))
        return pairs

    def export_lines(self) -> List[str]:
        grid = self.domain.grid
        neighbors: Dict[int, List[int]] = {j: [] for j in range(len(self.cubes))}
        for j, k in self.neighbor_pairs():
            neighbors[j].append(k)
            neighbors[k].append(j)
        lines = []
        for cube in self.cubes:
            c = cube.center(grid)
            coords = " ".join(format(x, ".9g") for x in c)
            nbrs = ",".join(str(k) for k in sorted(neighbors[cube.index]))
            lines.append(
                f"cube {cube.index} center {coords} half_side {cube.half_side:.9g} "
                f"generation {cube.generation} neighbors {nbrs}"
            )
        return lines


def whitney_cover(domain: Domain, accept_factor: float = 2.0,
                  interior_margin_cells: int = 8,
                  uncovered_tol: float = 1e-3) -> WhitneyCover:
    """Dyadic Whitney cover of a cube or masked domain.

    Requires an isotropic power-of-two grid (the tree halves cell
    blocks) with at least 8 cells per axis.  Fails with a resolution
    error if any interior cell (max-norm distance at least
    ``interior_margin_cells * h``) ends up uncovered.
    """
    grid = domain.grid
    N = grid.shape[0]
    if any(s != N for s in grid.shape):
        raise ResolutionError("whitney covers need equal cells per axis")
    if N < 8 or (N & (N - 1)) != 0:
        raise ResolutionError("whitney covers need a power-of-two grid, N >= 8")
    h = grid.spacing[0]
    n = domain.n
    active = domain.active

    accepted: List[WhitneyCube] = []
    tile_owner = np.full(grid.shape, -1, dtype=int)

    def visit(lo: Tuple[int, ...], t: int, generation: int):
        tile = tuple(slice(l, l + t) for l in lo)
        if not active[tile].any():
            return
        half = t // 2
        cube_lo = tuple(l - half for l in lo)
        cube_hi = tuple(l + t + half for l in lo)
        inside = all(cl >= 0 and ch <= N for cl, ch in zip(cube_lo, cube_hi))
        if t >= 2 and t % 2 == 0 and inside:
            r = t * h
            dist = domain.block_distance(cube_lo, cube_hi)
            if dist >= accept_factor * r:
                cube = WhitneyCube(
                    index=-1, lo=cube_lo, size=2 * t, tile_lo=lo, tile_size=t,
                    generation=generation, half_side=r,
                )
                accepted.append(cube)
                return
        if t >= 4:
            half_t = t // 2
            from itertools import product

            for offsets in product((0, half_t), repeat=n):
                visit(tuple(l + o for l, o in zip(lo, offsets)), half_t, generation + 1)

    visit((0,) * n, N, 0)
    accepted.sort(key=lambda c: (c.generation, c.tile_lo))
    cubes = [
        WhitneyCube(i, c.lo, c.size, c.tile_lo, c.tile_size, c.generation, c.half_side)
        for i, c in enumerate(accepted)
    ]
    for cube in cubes:
        tile_owner[cube.tile_slices()] = cube.index
    tile_owner[~active] = -1

    owner = tile_owner.copy()
    orphans = active & (tile_owner < 0)
    attached = np.zeros(grid.shape, dtype=bool)
    if orphans.any():
        if not cubes:
            raise ResolutionError("no admissible cube fits in the domain")
        covered0 = tile_owner >= 0
        _, idx = ndimage.distance_transform_edt(~covered0, return_indices=True)
        nearest = tile_owner[tuple(idx[d] for d in range(n))]
        owner[orphans] = nearest[orphans]
        attached = orphans
    covered = owner >= 0

    cheb = domain.chebyshev_distance
    interior = active & (cheb >= interior_margin_cells * h)
    int_total = int(interior.sum())
    uncovered_interior = int((interior & ~covered).sum())
    frac = uncovered_interior / int_total if int_total else 0.0
    if frac > uncovered_tol:
        raise ResolutionError(
            f"uncovered interior volume fraction {frac:.2e} exceeds {uncovered_tol:.0e}"
        )
    attached_fraction = float(attached.sum()) / max(int(active.sum()), 1)

    counts = np.zeros(grid.shape, dtype=int)
    for cube in cubes:
        counts[cube.slices()] += 1
    counts[attached] += 1
    overlap = int(counts[covered].max(initial=0))

    return WhitneyCover(
        domain=domain,
        cubes=cubes,
        tile_owner=tile_owner,
        owner=owner,
        attached=attached,
        covered=covered,
        uncovered_interior_fraction=frac,
        attached_fraction=attached_fraction,
        overlap_multiplicity=overlap,
    )


# ---------------------------------------------------------------------------
# partition of unity
# ---------------------------------------------------------------------------


@dataclass
class PartitionOfUnity:
    """Normalized squared-hat bumps subordinate to the cubes.

    ``phi[j]`` and ``dphi[j]`` are dense arrays over cube ``j``'s block;
    attached cells take the flat extension ``phi = 1`` of their owner
    (gradient zero), recorded separately.  Gradients are the closed-form
    derivatives of the normalized bumps, so ``sum_j phi_j = 1`` and
    ``sum_j Dphi_j = 0`` hold to roundoff on the covered region.
    """

    cover: WhitneyCover
    phi: List[np.ndarray]
    dphi: List[np.ndarray]
    c_pou: float
    partition_defect: float
    gradient_sum_defect: float


def _bump_and_gradient(cube: WhitneyCube, grid) -> Tuple[np.ndarray, np.ndarray]:
    n = len(cube.lo)
    r = cube.half_side
    center = cube.center(grid)
    axes = []
    for d in range(n):
        cells = np.arange(cube.lo[d], cube.lo[d] + cube.size)
        x = grid.origin[d] + (cells + 0.5) * grid.spacing[d]
        axes.append((x - center[d]) / r)
    mesh = np.meshgrid(*axes, indexing="ij")
    g = [np.maximum(0.0, 1.0 - np.abs(t)) for t in mesh]
    B = np.ones(g[0].shape)
    for gd in g:
        B = B * gd ** 2
    dB = np.empty(g[0].shape + (n,))
    for d in range(n):
        other = np.ones(g[0].shape)
        for e in range(n):
            if e != d:
                other = other * g[e] ** 2
        dB[..., d] = other * 2.0 * g[d] * (-np.sign(mesh[d])) / r
    return B, dB


def partition_of_unity(cover: WhitneyCover) -> PartitionOfUnity:
    grid = cover.domain.grid
    n = cover.domain.n
    shape = grid.shape
    sumB = np.zeros(shape)
    sumdB = np.zeros(shape + (n,))
    bumps = []
    for cube in cover.cubes:
        B, dB = _bump_and_gradient(cube, grid)
        bumps.append((B, dB))
        sl = cube.slices()
        sumB[sl] += B
        sumdB[sl] += dB
    supported = sumB > 0.0
    safe = np.where(supported, sumB, 1.0)
    phi = []
    dphi = []
    worst_grad = 0.0
    for cube, (B, dB) in zip(cover.cubes, bumps):
        sl = cube.slices()
        local_sum = safe[sl]
        p = B / local_sum
        dp = (dB - p[..., None] * sumdB[sl]) / local_sum[..., None]
        phi.append(p)
        dphi.append(dp)
        gmax = float(np.sqrt(np.einsum("...d,...d->...", dp, dp)).max(initial=0.0))
        worst_grad = max(worst_grad, gmax * cube.half_side)

    check = np.zeros(shape)
    for cube, p in zip(cover.cubes, phi):
        check[cube.slices()] += p
    check[cover.attached] = 1.0  # flat extension of the owner bump
    defect = float(np.abs(check[cover.covered] - 1.0).max(initial=0.0))

    dsum = np.zeros(shape + (n,))
    for cube, dp in zip(cover.cubes, dphi):
        dsum[cube.slices()] += dp
    interior = cover.covered & supported
    gsd = float(np.abs(dsum[interior]).max(initial=0.0))

    return PartitionOfUnity(cover, phi, dphi, worst_grad, defect, gsd)


# ---------------------------------------------------------------------------
# gluing
# ---------------------------------------------------------------------------


def glue_rotations(cover: WhitneyCover, pou: PartitionOfUnity,
                   rotations: Sequence[np.ndarray]):
    """Glued field ``R(x) = sum_j phi_j(x) R_j`` and its gradient.

    Returns ``(field, DR, diagnostics)`` where ``DR[..., i, l, k]`` is the
    closed-form ``sum_j d_k phi_j (R_j)_{il}``; because the partition
    gradients sum to zero, any constant shift of the rotations leaves
    ``DR`` unchanged.
    """
    if len(rotations) != len(cover.cubes):
        raise ShapeError("need exactly one rotation per cube")
    grid = cover.domain.grid
    n = cover.domain.n
    R = np.zeros(grid.shape + (n, n))
    DR = np.zeros(grid.shape + (n, n, n))
    for cube, p, dp, rot in zip(cover.cubes, pou.phi, pou.dphi, rotations):
        sl = cube.slices()
        R[sl] += p[..., None, None] * rot
        DR[sl] += dp[..., None, None, :] * rot[..., :, :, None]
    if cover.attached.any():
        owners = cover.owner[cover.attached]
        rot_arr = np.array(rotations)
        R[cover.attached] = rot_arr[owners]
    field = TensorField(cover.domain, R, CELL)
    diag = {
        "partition_defect": pou.partition_defect,
        "gradient_sum_defect": pou.gradient_sum_defect,
        "c_pou": pou.c_pou,
    }
    return field, DR, diag


# ---------------------------------------------------------------------------
# weighted Poincare step
# ---------------------------------------------------------------------------


@dataclass
class PoincareResult:
    minimizer: np.ndarray
    ratio: float
    numerator: float
    denominator: float
    exact_constant: bool


def masked_gradient(values: np.ndarray, active: np.ndarray, spacing) -> np.ndarray:
    """Per-axis differences that never reach across the region boundary.

    Central differences where both neighbors are active, one-sided where
    only one is, zero on isolated slabs.  ``values`` may carry trailing
    component axes.
    """
    nd = active.ndim
    trailing = values.ndim - nd
    out = np.zeros(values.shape + (nd,))
    for d in range(nd):
        h = spacing[d]
        up = np.roll(values, -1, axis=d)
        dn = np.roll(values, 1, axis=d)
        up_ok = np.roll(active, -1, axis=d)
        dn_ok = np.roll(active, 1, axis=d)
        sl_last = [slice(None)] * nd
        sl_last[d] = -1
        sl_first = [slice(None)] * nd
        sl_first[d] = 0
        up_ok = up_ok.copy()
        dn_ok = dn_ok.copy()
        up_ok[tuple(sl_last)] = False
        dn_ok[tuple(sl_first)] = False
        both = up_ok & dn_ok & active
        only_up = up_ok & ~dn_ok & active
        only_dn = dn_ok & ~up_ok & active
        shape_mask = (...,) + (None,) * trailing
        grad = np.zeros_like(values)
        grad = np.where(both[shape_mask], (up - dn) / (2 * h), grad)
        grad = np.where(only_up[shape_mask], (up - values) / h, grad)
        grad = np.where(only_dn[shape_mask], (values - dn) / h, grad)
        out[..., d] = grad
    return out


def _weighted_lp_constant(flat: np.ndarray, w: np.ndarray, p: float,
                          step_tol: float = 1e-10) -> np.ndarray:
    """Constant vector minimizing ``sum w |f - m|_2^p`` (convex).

    Closed form for p = 2; cyclic per-entry scalar minimization
    otherwise (each coordinate problem is smooth and convex).
    """
    mean = (w[:, None] * flat).sum(axis=0) / w.sum()
    if abs(p - 2.0) < 1e-14:
        return mean
    m = mean.copy()
    k = flat.shape[1]
    scale = float(np.abs(flat).max(initial=0.0)) + 1.0
    margin = 1e-12 * scale

    def cost_entry(entry, a):
        m[entry] = a
        d2 = np.einsum("ij,ij->i", flat - m, flat - m)
        return float(np.sum(w * d2 ** (0.5 * p)))

    for _ in range(80):
        biggest = 0.0
        for entry in range(k):
            a0 = m[entry]
            f0 = cost_entry(entry, a0)
            res = optimize.minimize_scalar(
                lambda a: cost_entry(entry, a),
                bracket=(a0 - 0.25, a0 + 0.25),
                method="brent", options={"xtol": 1e-12},
            )
            m[entry] = float(res.x) if res.fun < f0 - margin else a0
            biggest = max(biggest, abs(m[entry] - a0))
        if biggest < step_tol:
            break
    return m


def weighted_poincare(field, s: float, domain: Domain,
                      mask: Optional[np.ndarray] = None) -> PoincareResult:
    """Oscillation of a field against its boundary-weighted gradient.

    Returns the constant matrix minimizing ``|field - M|_{L^s}`` and the
    ratio ``|field - M|_{L^s}^s / int dist^s |Dfield|^s`` with the
    Euclidean boundary distance as weight.  A constant field is reported
    with the exact-constant flag instead of a 0/0 ratio.
    """
    if isinstance(field, TensorField):
        values = field.collocate().values
    else:
        values = np.asarray(field, dtype=float)
    grid = domain.grid
    n = domain.n
    active = domain.active if mask is None else (domain.active & mask)
    if not active.any():
        raise DegenerateInputError("empty integration region")
    flat = values[active].reshape(active.sum(), -1)
    w = np.full(flat.shape[0], grid.cell_volume)
    minimizer = _weighted_lp_constant(flat, w, s).reshape(values.shape[active.ndim:])

    diff = flat - minimizer.reshape(-1)
    numerator = float(np.sum(w * np.einsum("ij,ij->i", diff, diff) ** (0.5 * s)))

    D = masked_gradient(values, active, grid.spacing)
    Dflat = D.reshape(active.shape + (-1,))
    Dmag2 = np.einsum("...k,...k->...", Dflat, Dflat)
    dist = domain.boundary_distance
    denominator = float(np.sum(
        (dist[active] ** s) * Dmag2[active] ** (0.5 * s)
    )) * grid.cell_volume

    scale = float(np.abs(flat).max(initial=0.0))
    tiny = (1e-13 * max(scale, 1.0)) ** s * domain.volume
    if denominator <= tiny:
        if numerator <= tiny:
            return PoincareResult(minimizer, float("nan"), numerator, denominator, True)
        raise DegenerateInputError("nonconstant field with vanishing weighted gradient")
    return PoincareResult(minimizer, numerator / denominator, numerator, denominator, False)
