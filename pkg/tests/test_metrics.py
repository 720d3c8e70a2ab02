import math
from dataclasses import replace

import numpy as np
import pytest

from nilpotentizer import scenarios
from nilpotentizer.metrics import (
    DEFAULT_OPTIONS,
    FieldPack,
    GroupoidPoint,
    SolverOptions,
    _objective_and_grad,
    cc_distance_cone,
    cc_distance_manifold,
    comparison_ratio_scan,
    control_length,
    distance_matrix,
    groupoid_distance,
    manifold_pack,
    quasi_norm_element,
    reintegrate,
    solve_batch,
)

FAST = replace(DEFAULT_OPTIONS, segments=8, multistarts=2)


def _cfg(name):
    return scenarios.builtin(name)


def test_control_length_hand_value():
    pack = manifold_pack(_cfg("euclidean").structure())
    # 4 segments of constant speed (3, 4): length = 5
    U = np.tile(np.array([3.0, 4.0]), (1, 4, 1))
    assert np.allclose(control_length(pack, U), [5.0], atol=1e-12)


def test_euclidean_distance_is_straight_line():
    d = cc_distance_manifold(_cfg("euclidean").structure(),
                             (0.0, 0.0), (3.0, 4.0), 1.0, FAST)
    assert d.status == "converged"
    assert abs(d.value - 5.0) < 1e-6


def test_objective_gradient_matches_finite_differences():
    pack = manifold_pack(_cfg("grushin2").structure())
    rng = np.random.default_rng(12)
    B, K = 2, 4
    x0 = rng.uniform(-0.5, 0.5, (B, pack.dim))
    ys = rng.uniform(-0.5, 0.5, (B, pack.dim))
    U = rng.uniform(-0.5, 0.5, (B, K, pack.d1))
    lam = rng.uniform(-1.0, 1.0, (B, pack.dim))
    for wgt in (None, np.array([[1.0, 3.0], [2.0, 0.5]])):
        f0, g, _ = _objective_and_grad(pack, x0, ys, U, 2, lam, 10.0, wgt)
        num = np.zeros_like(U)
        h = 1e-6
        for b in range(B):
            for k in range(K):
                for a in range(pack.d1):
                    Up = U.copy(); Up[b, k, a] += h
                    Um = U.copy(); Um[b, k, a] -= h
                    fp, _, _ = _objective_and_grad(
                        pack, x0, ys, Up, 2, lam, 10.0, wgt)
                    fm, _, _ = _objective_and_grad(
                        pack, x0, ys, Um, 2, lam, 10.0, wgt)
                    num[b, k, a] = (fp[b] - fm[b]) / (2 * h)
        denom = max(np.abs(num).max(), 1.0)
        assert np.abs(g - num).max() / denom < 1e-5


def test_unit_state_scale_matches_unscaled_run():
    pack = manifold_pack(_cfg("grushin2").structure())
    x0s = np.array([[0.1, 0.0], [0.3, -0.2]])
    ys = np.array([[0.4, 0.1], [-0.2, 0.2]])
    r1 = solve_batch(pack, x0s, ys, FAST, state_scale=None)
    r2 = solve_batch(pack, x0s, ys, FAST, state_scale=np.ones(2))
    assert np.array_equal(r1.values, r2.values)
    assert np.array_equal(r1.controls, r2.controls)


def test_anisotropic_state_scale_reaches_same_optimum():
    pack = manifold_pack(_cfg("grushin2").structure())
    x0s = np.array([[0.1, 0.0]])
    ys = np.array([[0.4, 0.1]])
    r1 = solve_batch(pack, x0s, ys, FAST)
    r2 = solve_batch(pack, x0s, ys, FAST, state_scale=np.array([1.0, 4.0]))
    assert r1.statuses[0] == "converged" and r2.statuses[0] == "converged"
    assert abs(r1.values[0] - r2.values[0]) < 1e-5


def test_distance_is_symmetric_up_to_solver_tol():
    S = _cfg("grushin2").structure()
    opts = replace(DEFAULT_OPTIONS, segments=10, multistarts=3)
    a, b = (0.2, 0.1), (-0.3, 0.25)
    d1 = cc_distance_manifold(S, a, b, 1.0, opts)
    d2 = cc_distance_manifold(S, b, a, 1.0, opts)
    assert abs(d1.value - d2.value) < 2 * opts.solver_tol


def test_scale_identity_is_exact():
    S = _cfg("grushin2").structure()
    d1 = cc_distance_manifold(S, (0.15, 0.1), (0.55, 0.2), 1.0, FAST)
    d4 = cc_distance_manifold(S, (0.15, 0.1), (0.55, 0.2), 0.25, FAST)
    assert d4.value == 4.0 * d1.value


def test_grushin_vertical_distance_closed_form():
    # Geodesics from the singular line return to it after a half period;
    # the resulting distance to (0, y) is sqrt(2*pi*y).
    S = _cfg("grushin2").structure()
    opts = replace(DEFAULT_OPTIONS, segments=24, multistarts=4)
    d = cc_distance_manifold(S, (0.0, 0.0), (0.0, 0.3), 1.0, opts)
    assert d.status == "converged"
    assert abs(d.value - math.sqrt(2 * math.pi * 0.3)) < 5e-3


def test_distance_result_serialization():
    d = cc_distance_manifold(_cfg("euclidean").structure(),
                             (0.0, 0.0), (1.0, 0.0), 1.0, FAST)
    blob = d.to_json_dict()
    assert blob["status"] == "converged"
    assert abs(blob["value"] - 1.0) < 1e-6
    assert blob["residual"] >= 0.0


def test_reintegrate_agrees_with_reported_endpoint():
    S = _cfg("grushin2").structure()
    d = cc_distance_manifold(S, (0.2, 0.0), (0.5, 0.1), 1.0, FAST)
    pack = manifold_pack(S)
    end = reintegrate(pack, np.array([0.2, 0.0]),
                      np.asarray(d.controls), substeps=32)
    assert np.linalg.norm(end - np.array([0.5, 0.1])) < 5e-4


def test_distance_matrix_euclidean_points():
    pack = manifold_pack(_cfg("euclidean").structure())
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 4.0]])
    opts = replace(DEFAULT_OPTIONS, segments=6, multistarts=2)
    D, C, bad, St = distance_matrix(pack, pts, opts)
    assert bad == 0 and St.all()
    assert np.allclose(D, D.T, atol=1e-12)
    assert np.allclose(np.diag(D), 0.0)
    want = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    assert np.abs(D - want).max() < 1e-5


def test_cone_distance_heisenberg_generator():
    from nilpotentizer import build_cone, compute_rx
    nm = _cfg("heisenberg").natural_map()
    rep = compute_rx(nm, np.zeros(3))
    tc = build_cone(nm.algebra, rep.preimage)
    base = tc.base_point()
    e1 = tc.point_from_coords([1.0, 0.0, 0.0])
    opts = replace(DEFAULT_OPTIONS, segments=10, multistarts=3)
    d = cc_distance_cone(tc, base, e1, opts)
    assert d.status == "converged"
    assert abs(d.value - 1.0) < 5e-3


def test_groupoid_point_validation_and_scaling():
    with pytest.raises(ValueError):
        GroupoidPoint.at_scale((1.0, 0.0), (0.0, 0.0), 0.0)
    gp = GroupoidPoint.at_scale((1.0, 0.0), (0.0, 0.0), 0.5)
    gp2 = gp.debord_skandalis(2.0)
    assert gp2.t == 0.25 and gp2.y == gp.y and gp2.x == gp.x
    with pytest.raises(ValueError):
        gp.debord_skandalis(0.0)


def test_groupoid_boundary_scaling_dilates_cone_point():
    from nilpotentizer import build_cone, compute_rx
    nm = _cfg("grushin2").natural_map()
    rep = compute_rx(nm, np.zeros(2))
    tc = build_cone(nm.algebra, rep.preimage)
    p = tc.point_from_coords([0.5, 0.25])
    gp = GroupoidPoint.boundary(tc, p, (0.0, 0.0))
    assert gp.t == 0.0
    gp2 = gp.debord_skandalis(2.0)
    assert np.allclose(gp2.p.coords, (1.0, 1.0), atol=1e-12)


def test_groupoid_distance_interior_matches_manifold():
    S = _cfg("euclidean").structure()
    gp = GroupoidPoint.at_scale((0.3, 0.4), (0.0, 0.0), 0.5)
    v = groupoid_distance(S, gp, FAST)
    w = cc_distance_manifold(S, (0.0, 0.0), (0.3, 0.4), 0.5, FAST).value
    assert v == w


def test_quasi_norm_euclidean_oracle():
    nm = _cfg("euclidean").natural_map()
    gp = GroupoidPoint.at_scale((0.3, 0.4), (0.0, 0.0), 0.5)
    r = quasi_norm_element(nm, gp, FAST, multistarts=2)
    assert r.status == "converged"
    assert abs(r.value - 1.0) < 1e-6
    assert np.allclose(r.minimizer, (0.6, 0.8), atol=1e-6)
    assert r.residual < 1e-8


def test_comparison_scan_euclidean_ratios_are_one():
    cfg = _cfg("euclidean")
    report = comparison_ratio_scan(
        cfg.natural_map(), cfg.structure(),
        region=((-1.0, -1.0), (1.0, 1.0)), samples=6,
        t_grid=[0.5, 0.1],
        opts=replace(DEFAULT_OPTIONS, segments=8, multistarts=2,
                     endpoint_tol=1e-8, inner_maxiter=200),
        seed=5)
    assert np.isfinite(report.c_hat)
    for t, ratio in report.ratios:
        assert abs(ratio - 1.0) < 1e-5
