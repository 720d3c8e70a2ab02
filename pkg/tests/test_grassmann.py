import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nilpotentizer import scenarios
from nilpotentizer.grassmann import (
    ApproachPath,
    ConvergenceError,
    Subspace,
    conjugate_subspace,
    dilate_subspace,
    gap_distance,
    graded_limit_fixed,
    kernel,
    limit_along_path,
)


def _nm(name):
    return scenarios.builtin(name).natural_map()


def test_from_spanning_orthonormalizes():
    S = Subspace.from_spanning(np.array([[1.0, 1.0], [0.0, 1.0], [0.0, 0.0]]))
    B = S.basis
    assert S.dim == 2 and S.ambient_dim == 3
    assert np.allclose(B.T @ B, np.eye(2), atol=1e-12)


def test_kernel_hand_matrix():
    A = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    K = kernel(A)
    assert K.dim == 1
    assert abs(abs(K.basis[2, 0]) - 1.0) < 1e-12


def test_kernel_annihilates():
    rng = np.random.default_rng(1)
    for _ in range(10):
        A = rng.standard_normal((3, 6))
        K = kernel(A)
        assert K.dim == 3
        assert np.max(np.abs(A @ K.basis)) < 1e-10


def test_gap_known_angle():
    for theta in (1e-8, 1e-4, 0.3, 1.2):
        S1 = Subspace.from_spanning(np.array([[1.0], [0.0]]))
        S2 = Subspace.from_spanning(
            np.array([[math.cos(theta)], [math.sin(theta)]]))
        assert abs(gap_distance(S1, S2) - math.sin(theta)) < 1e-9


def test_gap_identity_and_symmetry():
    rng = np.random.default_rng(2)
    for _ in range(10):
        B = rng.standard_normal((5, 2))
        S = Subspace.from_spanning(B)
        assert gap_distance(S, S) < 1e-14
        C = rng.standard_normal((5, 2))
        T = Subspace.from_spanning(C)
        assert abs(gap_distance(S, T) - gap_distance(T, S)) < 1e-10


def test_gap_small_angles_resolved_below_sqrt_eps():
    eps = 1e-12
    S1 = Subspace.from_spanning(np.array([[1.0], [0.0]]))
    S2 = Subspace.from_spanning(np.array([[1.0], [eps]]))
    g = gap_distance(S1, S2)
    assert abs(g - eps) < 1e-14


def test_gap_dimension_mismatch():
    S1 = Subspace.from_spanning(np.eye(3)[:, :1])
    S2 = Subspace.from_spanning(np.eye(3)[:, :2])
    with pytest.raises(ValueError):
        gap_distance(S1, S2)
    S3 = Subspace.from_spanning(np.eye(4)[:, :1])
    with pytest.raises(ValueError):
        gap_distance(S1, S3)


def test_dilate_subspace_hand():
    S = Subspace.from_spanning(np.array([[1.0], [1.0]]))
    lam = 3.0
    D = dilate_subspace(lam, S, (1, 2))
    want = Subspace.from_spanning(np.array([[3.0], [9.0]]))
    assert gap_distance(D, want) < 1e-12


def test_graded_limit_fixed_hand():
    # span(e1 + e3) in weights (1, 1, 2) flows to span(e3) under blow-up
    S = Subspace.from_spanning(np.array([[1.0], [0.0], [1.0]]))
    G = graded_limit_fixed(S, (1, 1, 2))
    want = Subspace.from_spanning(np.array([[0.0], [0.0], [1.0]]))
    assert gap_distance(G, want) < 1e-12


def test_graded_limit_is_dilation_invariant():
    rng = np.random.default_rng(3)
    weights = (1, 1, 2, 3, 3)
    for _ in range(10):
        S = Subspace.from_spanning(rng.standard_normal((5, 2)))
        G = graded_limit_fixed(S, weights)
        for lam in (0.5, 2.0, 7.0):
            assert gap_distance(dilate_subspace(lam, G, weights), G) < 1e-9


def test_graded_limit_is_actual_limit():
    rng = np.random.default_rng(4)
    weights = (1, 1, 2)
    S = Subspace.from_spanning(rng.standard_normal((3, 2)))
    G = graded_limit_fixed(S, weights)
    gaps = [gap_distance(dilate_subspace(1.0 / t, S, weights), G)
            for t in (1e-2, 1e-4, 1e-6)]
    assert gaps[0] > gaps[1] > gaps[2] or gaps[2] < 1e-12


def test_approach_path_validation():
    with pytest.raises(ValueError):
        ApproachPath("bad", lambda t: (t,), t0=0.0)
    with pytest.raises(ValueError):
        ApproachPath("bad", lambda t: (t,), rho=1.0)
    with pytest.raises(ValueError):
        ApproachPath("bad", lambda t: (t,), max_steps=2)


def test_constant_path():
    p = ApproachPath.constant((0.5, -1.0))
    assert p.point(0.1) == (0.5, -1.0)
    assert p.point(1e-9) == (0.5, -1.0)
    sched = p.schedule()
    assert sched[0] == p.t0 and all(a > b for a, b in zip(sched, sched[1:]))


def test_limit_along_radial_grushin_path():
    nm = _nm("grushin2")
    path = ApproachPath("radial", lambda t: (t, 0.0))
    S, diag = limit_along_path(nm, path)
    want = Subspace.from_spanning(np.array([[0.0], [1.0], [-1.0]]))
    assert diag.converged
    assert gap_distance(S, want) < 1e-7
    assert diag.subalgebra_residual < 1e-10
    assert len(diag.rows) >= 3


def test_limit_reports_nonconvergence_on_oscillating_path():
    # Keep x(t)/t oscillating so the dilated kernel direction never settles.
    nm = _nm("grushin2")

    def osc(t):
        return (t * (2.0 + math.sin(1.0 / t)), 0.0)

    path = ApproachPath("osc", osc, max_steps=25)
    with pytest.raises(ConvergenceError) as exc:
        limit_along_path(nm, path)
    assert exc.value.gaps, "diagnostic gap history should be attached"


def test_conjugate_subspace_hand_value():
    nm = _nm("grushin2")
    alg = nm.algebra
    h = Subspace.from_spanning(np.array([[0.0], [1.0], [-1.0]]))
    g = alg.vector((1, 0, 0))
    got = conjugate_subspace(g, h)
    want = Subspace.from_spanning(np.array([[0.0], [1.0], [-2.0]]))
    assert gap_distance(got, want) < 1e-12


def test_conjugate_subspace_dimension_check():
    nm = _nm("grushin2")
    g = nm.algebra.vector((1, 0, 0))
    S = Subspace.from_spanning(np.eye(4)[:, :1])
    with pytest.raises(ValueError):
        conjugate_subspace(g, S)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_gap_is_a_metric_on_sampled_planes(seed):
    rng = np.random.default_rng(seed)
    planes = [Subspace.from_spanning(rng.standard_normal((4, 2)))
              for _ in range(3)]
    a = gap_distance(planes[0], planes[1])
    b = gap_distance(planes[1], planes[2])
    c = gap_distance(planes[0], planes[2])
    assert 0.0 <= a <= 1.0
    assert c <= a + b + 1e-9
