"""Rotation/antisymmetric fitting, reports, pipeline, constants."""

import numpy as np
import pytest
from scipy import optimize

import rigidlab as rl
from rigidlab.errors import ConsistencyError
from rigidlab.fields import CELL, STAGGERED, NormSpec
from rigidlab.rigidity import (
    dist_SO,
    dist_SO_field,
    fit_antisymmetric,
    fit_rotation,
    rigidity_pipeline,
    rotation_2d,
    rotation_from_axis_angle,
)


def test_dist_SO_trivial_cases():
    R = rotation_from_axis_angle([0.2, 0.5, -0.1])
    assert dist_SO(R) < 1e-12
    assert dist_SO(2.0 * np.eye(3)) == pytest.approx(np.sqrt(3.0), rel=1e-12)
    assert dist_SO(0.25 * np.eye(2)) == pytest.approx(np.sqrt(2.0) * 0.75, rel=1e-12)


def test_dist_SO_matches_rotation_grid_2d():
    rng = np.random.default_rng(0)
    for _ in range(5):
        M = rng.normal(size=(2, 2))
        angles = np.linspace(0.0, 2 * np.pi, 70000, endpoint=False)
        best = min(np.linalg.norm(M - rotation_2d(t)) for t in angles)
        assert dist_SO(M) == pytest.approx(best, abs=1e-6)


def test_dist_SO_matches_rotation_grid_3d():
    rng = np.random.default_rng(1)
    M = rng.normal(size=(3, 3))
    # two-stage axis-angle grid refinement around the best candidate
    best = np.inf
    center = np.zeros(3)
    width = np.pi
    for stage in range(4):
        axis_vals = np.linspace(-width, width, 11)
        for vx in axis_vals:
            for vy in axis_vals:
                for vz in axis_vals:
                    v = center + np.array([vx, vy, vz])
                    d = np.linalg.norm(M - rotation_from_axis_angle(v))
                    if d < best:
                        best, best_v = d, v
        center, width = best_v, width / 5.0
    assert dist_SO(M) == pytest.approx(best, abs=1e-4)
    assert dist_SO(M) <= best + 1e-12


def test_dist_SO_field_matches_pointwise():
    rng = np.random.default_rng(2)
    for n in (2, 3):
        M = rng.normal(size=(40, n, n))
        batch = dist_SO_field(M)
        for k in range(40):
            assert batch[k] == pytest.approx(dist_SO(M[k]), abs=1e-10)


@pytest.mark.parametrize("p", [2.0, 1.5])
def test_fit_rotation_constant_field(p):
    for n in (2, 3):
        dom = rl.Domain.cube(n, 8)
        R0 = rotation_2d(1.2) if n == 2 else rotation_from_axis_angle([0.7, -0.3, 0.4])
        beta = rl.TensorField.constant(dom, R0)
        R, info = fit_rotation(beta, NormSpec(p))
        assert np.abs(R - R0).max() < 1e-12


def test_fit_rotation_matches_angle_grid_2d():
    # near-rigid field: brute-force angle grid at 1e-4 resolution
    dom = rl.Domain.cube(2, 12)
    rng = np.random.default_rng(3)
    W = np.array([[0.0, 1.0], [-1.0, 0.0]])
    R0 = rotation_2d(0.8)
    vals = np.broadcast_to(R0, dom.grid.shape + (2, 2)) + 1e-3 * rng.normal(
        size=dom.grid.shape + (1, 1)) * W
    beta = rl.TensorField(dom, vals, CELL)
    spec = NormSpec(1.5)
    R, info = fit_rotation(beta, spec)
    angles = np.arange(0.0, 2 * np.pi, 1e-4)
    objs = [rl.lp_norm(beta - rotation_2d(t), spec) for t in angles[::100]]
    coarse_best = angles[::100][int(np.argmin(objs))]
    fine = np.arange(coarse_best - 0.01, coarse_best + 0.01, 1e-4)
    objs = [rl.lp_norm(beta - rotation_2d(t), spec) for t in fine]
    grid_best = fine[int(np.argmin(objs))]
    assert info.parameters[0] == pytest.approx(grid_best, abs=2e-4)
    assert info.objective <= min(objs) + 1e-12


def test_fit_rotation_left_equivariance():
    dom = rl.Domain.cube(3, 8)
    beta = rl.gen_compatible(dom, 4, 0.2)
    R1 = rotation_from_axis_angle([1.0, 0.2, -0.5])
    R_base, _ = fit_rotation(beta, NormSpec(2.0))
    R_rot, _ = fit_rotation(beta.left_multiply(R1), NormSpec(2.0))
    assert np.abs(R_rot - R1 @ R_base).max() < 1e-10


def test_fit_rotation_optimality_against_alternatives():
    rng = np.random.default_rng(5)
    dom = rl.Domain.cube(3, 8)
    beta, _ = rl.generate(rl.CaseSpec("mixture", 3, 8, 77, (("dislocations", 0),)))
    spec = NormSpec(1.5)
    R, info = fit_rotation(beta, spec)
    base = rl.lp_norm(beta - R, spec)
    for _ in range(100):
        v = rng.normal(size=3)
        v *= rng.uniform(0, np.pi) / np.linalg.norm(v)
        alt = rl.lp_norm(beta - rotation_from_axis_angle(v), spec)
        assert base <= alt + 1e-10


def test_fit_antisymmetric_basics():
    dom = rl.Domain.cube(3, 8)
    A0 = np.array([[0.0, 0.3, -0.2], [-0.3, 0.0, 0.5], [0.2, -0.5, 0.0]])
    beta = rl.TensorField.constant(dom, A0)
    for p in (2.0, 1.5):
        A, _ = fit_antisymmetric(beta, NormSpec(p))
        assert np.abs(A - A0).max() < 1e-12

    # symmetric field projects to zero at p = 2
    rng = np.random.default_rng(6)
    vals = rng.normal(size=dom.grid.shape + (3, 3))
    vals = 0.5 * (vals + np.swapaxes(vals, -1, -2))
    sym = rl.TensorField(dom, vals, CELL)
    A, _ = fit_antisymmetric(sym, NormSpec(2.0))
    assert np.abs(A).max() < 1e-12


def test_fit_antisymmetric_matches_golden_section():
    # small amplitude keeps the optimum determinable well below 1e-8
    rng = np.random.default_rng(7)
    dom = rl.Domain.cube(2, 10)
    beta = rl.TensorField(dom, 0.01 * rng.normal(size=dom.grid.shape + (2, 2)), CELL)
    spec = NormSpec(1.5)
    A, _ = fit_antisymmetric(beta, spec)

    def objective(a):
        M = np.array([[0.0, a], [-a, 0.0]])
        return rl.lp_norm(beta - M, spec)

    res = optimize.minimize_scalar(objective, bracket=(-2.0, 0.0, 2.0), method="golden",
                                   options={"xtol": 1e-12})
    assert A[0, 1] == pytest.approx(float(res.x), abs=1e-8)


def test_fit_antisymmetric_optimality():
    rng = np.random.default_rng(8)
    dom = rl.Domain.cube(3, 6)
    beta = rl.TensorField(dom, rng.normal(size=dom.grid.shape + (3, 3)), CELL)
    spec = NormSpec(1.5)
    A, _ = fit_antisymmetric(beta, spec)
    base = rl.lp_norm(beta - A, spec)
    for _ in range(100):
        W = rng.normal(size=(3, 3))
        W = W - W.T
        assert base <= rl.lp_norm(beta - W, spec) + 1e-10


def test_korn_projection_property():
    rng = np.random.default_rng(9)
    dom = rl.Domain.cube(3, 8)
    beta = rl.TensorField(dom, rng.normal(size=dom.grid.shape + (3, 3)), CELL)
    A, _ = fit_antisymmetric(beta, NormSpec(2.0))
    assert rl.lp_norm(beta - A, 2) <= rl.lp_norm(beta, 2) + 1e-12


def test_rigidity_report_trivial_rotation():
    dom = rl.Domain.cube(3, 8)
    R0 = rotation_from_axis_angle([0.1, 0.7, 0.3])
    beta = rl.TensorField.constant(dom, R0)
    rep = rl.rigidity_report(beta, rl.IncompatibilityMeasure(dom))
    assert rep.lhs < 1e-11
    assert rep.rhs_elastic < 1e-11
    assert rep.rhs_incompat == 0.0
    assert rep.ratio == 0.0


def test_rigidity_report_compatible_matches_curl_free_route():
    dom = rl.Domain.cube(2, 24)
    beta = rl.gen_compatible(dom, 10, 0.6)
    rep = rl.rigidity_report(beta, rl.IncompatibilityMeasure(dom))
    assert rep.rhs_incompat == 0.0
    # same pipeline with the curl term disabled is the classical ratio
    assert rep.ratio == pytest.approx(rep.lhs / rep.rhs_elastic, rel=1e-12)
    assert np.isfinite(rep.ratio) and rep.ratio > 0


def test_korn_report_trivial_and_compatible():
    dom = rl.Domain.cube(2, 16)
    A0 = np.array([[0.0, 0.4], [-0.4, 0.0]])
    beta = rl.TensorField.constant(dom, A0)
    rep = rl.korn_report(beta, rl.IncompatibilityMeasure(dom))
    assert rep.lhs < 1e-12

    smooth = rl.gen_compatible(dom, 11, 0.5)
    rep2 = rl.korn_report(smooth, rl.IncompatibilityMeasure(dom))
    assert rep2.rhs_incompat == 0.0
    assert np.isfinite(rep2.ratio)


def test_korn_report_2d_dislocation_stable():
    ratios = []
    for N in (32, 64, 128):
        dom = rl.Domain.cube(2, N)
        h = 1.0 / N
        beta, m = rl.gen_point_dislocation_2d(dom, (1.0, 0.0), (0.5 + 0.4 * h, 0.5 + 0.4 * h))
        ratios.append(rl.korn_report(beta, m).ratio)
    drift = abs(ratios[2] - ratios[1]) / ratios[1]
    assert drift <= 0.15


def test_report_consistency_check_catches_wrong_measure():
    dom = rl.Domain.cube(2, 32)
    h = 1.0 / 32
    beta, m = rl.gen_point_dislocation_2d(dom, (1.0, 0.0), (0.5 + 0.4 * h, 0.5 + 0.4 * h))
    wrong = rl.IncompatibilityMeasure(
        dom, points=[rl.PointCharge(m.points[0].position, (3.0, 0.0))]
    )
    with pytest.raises(ConsistencyError):
        rl.rigidity_report(beta, wrong, check_consistency=True)
    # the true measure passes the same gate
    rl.rigidity_report(beta, m, check_consistency=True)


def test_report_validation_guarantees():
    dom = rl.Domain.cube(3, 10)
    beta, m = rl.generate(rl.CaseSpec("mixture", 3, 10, 5, (("dislocations", 0),)))
    rep = rl.rigidity_report(beta, m)
    R = rep.fitted
    assert np.abs(R @ R.T - np.eye(3)).max() < 1e-10
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-10)
    repk = rl.korn_report(beta, m)
    assert np.array_equal(repk.fitted, -repk.fitted.T)


def test_left_rotation_ratio_invariance():
    dom = rl.Domain.cube(2, 32)
    h = 1.0 / 32
    beta, m = rl.gen_point_dislocation_2d(dom, (0.8, 0.2), (0.5 + 0.4 * h, 0.5 + 0.4 * h))
    R1 = rotation_2d(0.9)
    r0 = rl.rigidity_report(beta, m).ratio
    r1 = rl.rigidity_report(beta.left_multiply(R1), m).ratio
    assert abs(r0 - r1) <= 1e-10 * max(r0, 1.0)


def test_spatial_scaling_invariance():
    dom = rl.Domain.cube(2, 32)
    h = 1.0 / 32
    beta, m = rl.gen_point_dislocation_2d(dom, (1.0, -0.4), (0.5 + 0.4 * h, 0.375 + 0.4 * h))
    rep = rl.rigidity_report(beta, m)
    beta_r, m_r = rl.scale_case(beta, m, 4.0)
    rep_r = rl.rigidity_report(beta_r, m_r)
    assert rep_r.ratio == pytest.approx(rep.ratio, rel=0.05)
    assert rep_r.lhs / rep.lhs == pytest.approx(4.0 ** (2 - 1), rel=1e-10)


def test_pipeline_cube_compatible_within_factor_two():
    dom = rl.Domain.cube(3, 16)
    beta = rl.gen_compatible(dom, 13, 0.4)
    res = rigidity_pipeline(beta, rl.IncompatibilityMeasure(dom), dom)
    assert res.constructive.ratio <= 2.0 * res.direct.ratio + 1e-12
    assert res.split is not None


def test_pipeline_lshape_constant_rotation():
    N = 32
    cube = rl.Domain.cube(2, N)
    cx, cy = cube.grid.cell_centers()
    dom = rl.Domain.from_mask(~((cx > 0.5) & (cy > 0.5)), 1.0 / N)
    R0 = rotation_2d(0.7)
    beta = rl.TensorField.constant(dom, R0)
    res = rigidity_pipeline(beta, rl.IncompatibilityMeasure(dom), dom)
    assert res.constructive.lhs < 1e-10
    assert np.abs(res.glued_rotation - R0).max() < 1e-10
    for row in res.cube_reports:
        assert row["lhs"] < 1e-10


def test_pipeline_lshape_piecewise_rotations():
    # two rotations with a smooth transition layer across x = 0.5
    N = 64
    cube = rl.Domain.cube(2, N)
    cx, cy = cube.grid.cell_centers()
    dom = rl.Domain.from_mask(~((cx > 0.5) & (cy > 0.5)), 1.0 / N)
    Ra, Rb = rotation_2d(0.25), rotation_2d(-0.35)

    def field(pts):
        t = np.clip((pts[0] - 0.45) / 0.1, 0.0, 1.0)
        blend = t * t * (3 - 2 * t)
        out = np.multiply.outer(1 - blend, Ra) + np.multiply.outer(blend, Rb)
        return out

    beta = rl.TensorField.sample(dom, field, STAGGERED)
    res = rigidity_pipeline(beta, rl.IncompatibilityMeasure(dom), dom)
    angles = []
    for cube_rep, cube_obj in zip(res.cube_reports, res.cover.cubes):
        center = cube_obj.center(dom.grid)
        if center[0] < 0.35 or center[0] > 0.65:
            block = beta.block(cube_obj.lo, (cube_obj.size,) * 2)
            R, _ = fit_rotation(block, NormSpec(2.0))
            target = Ra if center[0] < 0.5 else Rb
            angles.append(np.abs(R - target).max())
    assert angles and max(angles) < 1e-6
    assert np.isfinite(res.constructive.ratio)


def test_estimate_constant_rotations_and_monotonicity():
    rot_corpus = [rl.CaseSpec("rotation", 2, 16, 100 + k) for k in range(4)]
    best, rows = rl.estimate_constant(rot_corpus, "rigidity")
    assert best == 0.0
    assert len(rows) == 4

    compat = [rl.CaseSpec("gradient", 2, 16, 200 + k, (("amplitude", 0.3),)) for k in range(3)]
    base, _ = rl.estimate_constant(compat, "rigidity")
    h = 1.0 / 16
    bigger = compat + [rl.CaseSpec("edge-dislocation-2d", 2, 16, 300)]
    top, rows = rl.estimate_constant(bigger, "rigidity")
    assert top >= base
    assert all(np.isfinite(r["ratio"]) for r in rows)
