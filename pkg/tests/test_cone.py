from fractions import Fraction

import numpy as np
import pytest

from nilpotentizer import build_cone, compute_rx, scenarios
from nilpotentizer.cone import ConeError, ConePoint
from nilpotentizer.grassmann import (
    ApproachPath,
    Subspace,
    gap_distance,
    limit_along_path,
)


def _nm(name):
    return scenarios.builtin(name).natural_map()


def _span(*cols):
    return Subspace.from_spanning(np.array(cols, dtype=float).T)


def _poly_terms(p):
    return {k: v for k, v in p.terms.items() if v != 0}


def test_rx_grushin_origin():
    nm = _nm("grushin2")
    rep = compute_rx(nm, np.array([0.0, 0.0]))
    assert rep.ranks == (1, 2)
    assert rep.agreement_gap < 1e-12
    assert gap_distance(rep.preimage, _span((0, 1, 0))) < 1e-12


def test_rx_grushin_regular_point():
    nm = _nm("grushin2")
    rep = compute_rx(nm, np.array([0.7, -0.2]))
    assert rep.ranks == (2, 2)
    assert gap_distance(rep.preimage, _span((0, 0, 1))) < 1e-12


def test_origin_cone_frame_is_grushin_normal_form():
    nm = _nm("grushin2")
    rep = compute_rx(nm, np.array([0.0, 0.0]))
    tc = build_cone(nm.algebra, rep.preimage)
    assert tc.s_indices == (0, 2)
    assert tc.dim_s == 2
    frame = tc.horizontal_frame_polynomials()
    assert _poly_terms(frame[0][0]) == {(0, 0): Fraction(1)}
    assert _poly_terms(frame[0][1]) == {}
    assert _poly_terms(frame[1][0]) == {}
    assert _poly_terms(frame[1][1]) == {(1, 0): Fraction(1)}


def test_radial_cone_frame_grushin3():
    nm = _nm("grushin3")
    S, diag = limit_along_path(nm, ApproachPath("radial", lambda t: (t, 0.0)))
    want = _span((0, 1, 0, Fraction(-1, 2), 0),
                 (0, 0, 1, -1, 0),
                 (0, 0, 0, 0, 1))
    assert gap_distance(S, want) < 1e-7
    tc = build_cone(nm.algebra, S)
    assert tc.s_indices == (0, 3)
    frame = tc.horizontal_frame_polynomials()
    assert _poly_terms(frame[0][0]) == {(0, 0): Fraction(1)}
    assert _poly_terms(frame[1][1]) == {
        (2, 0): Fraction(1, 2),
        (1, 0): Fraction(1),
        (0, 0): Fraction(1, 2),
    }


def test_martinet_origin_cone_frozen_frame():
    nm = _nm("martinet")
    rep = compute_rx(nm, np.zeros(3))
    tc = build_cone(nm.algebra, rep.preimage)
    assert tc.s_indices == (0, 1, 3)
    frame = tc.horizontal_frame_polynomials()
    assert _poly_terms(frame[0][0]) == {(0, 0, 0): Fraction(1)}
    assert _poly_terms(frame[0][1]) == {}
    assert _poly_terms(frame[0][2]) == {(1, 1, 0): Fraction(-1, 3)}
    assert _poly_terms(frame[1][0]) == {}
    assert _poly_terms(frame[1][1]) == {(0, 0, 0): Fraction(1)}
    assert _poly_terms(frame[1][2]) == {(2, 0, 0): Fraction(1, 3)}


def test_compiled_frame_matches_polynomials():
    nm = _nm("grushin3")
    S, _ = limit_along_path(nm, ApproachPath("radial", lambda t: (t, 0.0)))
    tc = build_cone(nm.algebra, S)
    frame = tc.horizontal_frame_polynomials()
    compiled = tc.compiled_frame()
    rng = np.random.default_rng(8)
    for _ in range(10):
        s = rng.uniform(-1, 1, tc.dim_s)
        got = compiled(s)
        want = np.array([[float(p(s)) for p in row] for row in frame])
        assert np.allclose(got, want, atol=1e-12)


def test_cone_point_validation():
    nm = _nm("grushin2")
    rep = compute_rx(nm, np.zeros(2))
    tc = build_cone(nm.algebra, rep.preimage)
    with pytest.raises(ConeError):
        ConePoint(tc, (1.0, 2.0, 3.0))
    p = tc.point_from_coords((0.5, -0.25))
    assert len(p.coords) == 2


def test_dilate_point_scales_by_weights():
    nm = _nm("grushin2")
    rep = compute_rx(nm, np.zeros(2))
    tc = build_cone(nm.algebra, rep.preimage)
    p = tc.point_from_coords((0.5, -0.25))
    q = tc.dilate_point(2.0, p)
    # s-coordinates carry weights 1 and 2 at the origin cone
    assert np.allclose(q.coords, (1.0, -1.0), atol=1e-12)
    with pytest.raises(ConeError):
        tc.dilate_point(0.0, p)


def test_expected_codim_mismatch_raises():
    nm = _nm("grushin2")
    rep = compute_rx(nm, np.zeros(2))
    with pytest.raises(ConeError):
        build_cone(nm.algebra, rep.preimage, expected_codim=1)


def test_non_subalgebra_input_raises():
    nm = _nm("grushin2")
    bad = _span((1, 0, 0), (0, 1, 0))  # [e1, e2] = e3 escapes the span
    with pytest.raises(ConeError):
        build_cone(nm.algebra, bad)


def test_nongraded_subalgebra_cone_builds():
    # span(e1 + e2) is a subalgebra that is not dilation invariant; the
    # quotient still carries a frame once a transversal is chosen.
    nm = _nm("heisenberg")
    h = _span((1, 1, 0))
    tc = build_cone(nm.algebra, h)
    assert tc.dim_s == 2
    base = tc.base_point()
    assert np.allclose(base.coords, 0.0)


def test_base_point_and_vector_round_trip():
    nm = _nm("grushin2")
    rep = compute_rx(nm, np.zeros(2))
    tc = build_cone(nm.algebra, rep.preimage)
    coords = (0.3, -0.7)
    v = tc.vector_from_coords(coords)
    assert np.allclose(tc.s_coords(v.coeffs), coords, atol=1e-12)
    assert np.allclose(tc.h_coords(v.coeffs), 0.0, atol=1e-12)
