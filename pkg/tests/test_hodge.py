"""Hodge split certification and the critical-ratio diagnostics."""

import numpy as np
import pytest

import rigidlab as rl
from rigidlab.errors import ConsistencyError, DegenerateInputError, DomainError
from rigidlab.fields import STAGGERED, staggered_inner
from rigidlab.operators import curl_edges, grad
from rigidlab.poisson import DivCurlProblem, solve_div_curl


def tangential_divfree_field(dom, rng):
    comps = [[rng.normal(size=dom.grid.face_shape(j)) for j in range(dom.n)]
             for _ in range(dom.n)]
    W = rl.TensorField(dom, comps, STAGGERED)
    rows = [curl_edges(W.comps[i], dom) for i in range(dom.n)]
    Z, _ = solve_div_curl(DivCurlProblem(dom, rows))
    return Z


def test_split_certificates_on_random_fields():
    rng = np.random.default_rng(1)
    for n, N in ((2, 24), (3, 12)):
        dom = rl.Domain.cube(n, N)
        comps = [[rng.normal(size=dom.grid.face_shape(j)) for j in range(n)]
                 for _ in range(n)]
        beta = rl.TensorField(dom, comps, STAGGERED)
        split = rl.hodge_split(beta)
        assert split.div_residual < 1e-12
        assert split.trace_residual == 0.0
        assert split.curl_transfer_residual < 1e-12
        # the decomposition reconstructs beta at the rounding floor
        recon = split.gradient_part + split.residual
        for i in range(n):
            for j in range(n):
                gap = np.abs(recon.comps[i][j] - beta.comps[i][j]).max()
                scale = max(np.abs(split.gradient_part.comps[i][j]).max(),
                            np.abs(beta.comps[i][j]).max())
                assert gap <= 4 * np.spacing(scale)


def test_split_of_pure_gradient():
    dom = rl.Domain.cube(3, 16)
    beta = rl.gen_compatible(dom, 7, 0.4)
    split = rl.hodge_split(beta)
    assert rl.lp_norm(split.residual, 1.5) < 1e-10 * rl.lp_norm(beta, 1.5)


def test_split_of_tangential_divfree_field():
    rng = np.random.default_rng(2)
    dom = rl.Domain.cube(3, 10)
    Z = tangential_divfree_field(dom, rng)
    split = rl.hodge_split(Z)
    assert rl.lp_norm(split.gradient_part, 2) < 1e-10 * rl.lp_norm(Z, 2)
    assert rl.lp_norm(split.residual - Z, 2) < 1e-10 * rl.lp_norm(Z, 2)


def test_split_superposition():
    rng = np.random.default_rng(3)
    dom = rl.Domain.cube(3, 10)
    du = rl.gen_compatible(dom, 8, 0.5)
    Z = tangential_divfree_field(dom, rng)
    split = rl.hodge_split(du + Z)
    assert rl.lp_norm(split.residual - Z, 2) < 1e-9 * rl.lp_norm(Z, 2)
    assert rl.lp_norm(split.gradient_part - du, 2) < 1e-9 * rl.lp_norm(du, 2)


def test_split_idempotent():
    rng = np.random.default_rng(4)
    dom = rl.Domain.cube(2, 24)
    comps = [[rng.normal(size=dom.grid.face_shape(j)) for j in range(2)] for _ in range(2)]
    beta = rl.TensorField(dom, comps, STAGGERED)
    Y = rl.hodge_split(beta).residual
    again = rl.hodge_split(Y)
    assert rl.lp_norm(again.gradient_part, 2) < 1e-10 * rl.lp_norm(Y, 2)


def test_split_orthogonality():
    rng = np.random.default_rng(5)
    dom = rl.Domain.cube(2, 32)
    comps = [[rng.normal(size=dom.grid.face_shape(j)) for j in range(2)] for _ in range(2)]
    beta = rl.TensorField(dom, comps, STAGGERED)
    split = rl.hodge_split(beta)
    inner = staggered_inner(split.gradient_part, split.residual)
    bound = rl.lp_norm(split.gradient_part, 2) * rl.lp_norm(split.residual, 2)
    assert abs(inner) <= 1e-8 * bound


def test_split_left_rotation_equivariance():
    rng = np.random.default_rng(6)
    dom = rl.Domain.cube(3, 8)
    comps = [[rng.normal(size=dom.grid.face_shape(j)) for j in range(3)] for _ in range(3)]
    beta = rl.TensorField(dom, comps, STAGGERED)
    R = rl.rotation_from_axis_angle([0.4, -1.0, 0.2])
    s1 = rl.hodge_split(beta.left_multiply(R))
    s0 = rl.hodge_split(beta)
    rotated = s0.residual.left_multiply(R)
    scale = rl.lp_norm(rotated, 2)
    assert rl.lp_norm(s1.residual - rotated, 2) < 1e-12 * scale


def test_split_requires_cube():
    N = 16
    cube = rl.Domain.cube(2, N)
    cx, cy = cube.grid.cell_centers()
    dom = rl.Domain.from_mask(~((cx > 0.5) & (cy > 0.5)), 1.0 / N)
    beta = rl.TensorField.zeros(dom)
    with pytest.raises(DomainError):
        rl.hodge_split(beta)


def test_divcurl_ratio_scale_invariant():
    dom = rl.Domain.cube(3, 16)
    h = 1.0 / 16
    beta, m = rl.gen_screw_dislocation_3d(dom, 1.0, 2, (0.5 + 0.4 * h, 0.5 + 0.4 * h))
    Y = rl.hodge_split(beta).residual
    r1 = rl.divcurl_ratio(Y, measure=m)
    scaled_m = rl.IncompatibilityMeasure(
        m.domain, segments=[rl.Segment(s.start, s.end, 3.0 * s.weight) for s in m.segments]
    )
    r2 = rl.divcurl_ratio(Y * 3.0, measure=scaled_m)
    assert abs(r1 - r2) < 1e-12 * r1


def test_divcurl_ratio_rejects_bad_hypotheses():
    dom = rl.Domain.cube(2, 16)
    beta = rl.gen_compatible(dom, 9, 0.3)  # gradient: not tangential
    with pytest.raises(ConsistencyError):
        rl.divcurl_ratio(beta)
    # divergence-free and tangential but curl-free: ratio hypotheses fail
    Y = rl.hodge_split(beta).residual
    with pytest.raises((ConsistencyError, DegenerateInputError)):
        rl.divcurl_ratio(Y)


def test_divcurl_ratio_2d_grows_with_resolution():
    ratios = []
    for N in (32, 64, 128, 256):
        dom = rl.Domain.cube(2, N)
        h = 1.0 / N
        beta, m = rl.gen_point_dislocation_2d(dom, (1.0, 0.0), (0.5 + 0.4 * h, 0.5 + 0.4 * h))
        Y = rl.hodge_split(beta).residual
        ratios.append(rl.divcurl_ratio(Y, measure=m, p=2.0))
    assert all(b > a for a, b in zip(ratios, ratios[1:]))


def test_divcurl_ratio_3d_stable():
    ratios = []
    for N in (16, 32, 64):
        dom = rl.Domain.cube(3, N)
        h = 1.0 / N
        beta, m = rl.gen_screw_dislocation_3d(dom, 1.0, 2, (0.5 + 0.4 * h, 0.5 + 0.4 * h))
        Y = rl.hodge_split(beta).residual
        ratios.append(rl.divcurl_ratio(Y, measure=m))
    drift = abs(ratios[2] - ratios[1]) / ratios[1]
    assert drift <= 0.15
