import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nilpotentizer.poly import Polynomial, PolyParseError, parse_polynomial


def test_parse_and_evaluate_hand_values():
    p = parse_polynomial("3*x0^2*x1 - x1 + 4", 2)
    assert p((2.0, 5.0)) == 3 * 4 * 5 - 5 + 4
    assert p((0.0, 0.0)) == 4
    q = parse_polynomial("x0", 1)
    assert q((7.5,)) == 7.5


def test_parse_accepts_whitespace_and_signs():
    p = parse_polynomial("  - x0 +2* x1^3 ", 2)
    assert p((1.0, 2.0)) == -1 + 2 * 8
    assert parse_polynomial("-3", 1)((9.0,)) == -3


def test_parse_implicit_products_rejected():
    with pytest.raises(PolyParseError):
        parse_polynomial("2x0", 1)


def test_parse_error_positions():
    with pytest.raises(PolyParseError) as err:
        parse_polynomial("x0^", 1)
    assert err.value.position == 3
    with pytest.raises(PolyParseError) as err:
        parse_polynomial("x0 + @", 1)
    assert err.value.position == 5


def test_parse_error_is_value_error():
    with pytest.raises(ValueError):
        parse_polynomial("x0^", 1)


def test_variable_out_of_range():
    with pytest.raises(PolyParseError):
        parse_polynomial("x2 + 1", 2)


def test_constant_and_zero():
    z = Polynomial.zero(3)
    assert z.is_zero()
    assert z((1.0, 2.0, 3.0)) == 0.0
    c = Polynomial.const(2, 5)
    assert c((0.3, 0.4)) == 5


def test_diff_matches_finite_difference():
    p = parse_polynomial("x0^3*x1 - 2*x0*x1^2 + x1", 2)
    dp = p.diff(0)
    x = (0.7, -1.3)
    h = 1e-6
    fd = (p((x[0] + h, x[1])) - p((x[0] - h, x[1]))) / (2 * h)
    assert abs(dp(x) - fd) < 1e-6


def test_substitute():
    p = parse_polynomial("x0^2 + x0*x1 + 3", 2)
    q = p.substitute(0, 2)
    assert q((0.0, 5.0)) == 4 + 10 + 3


def test_compile_matches_call():
    p = parse_polynomial("x0^2*x1 - x1^3 + 2", 2)
    ev = p.compile()
    pts = np.array([[0.1, 0.2], [1.5, -0.5], [0.0, 3.0]])
    got = ev(pts)
    want = np.array([p(tuple(row)) for row in pts])
    assert np.allclose(got, want, atol=1e-14)


def test_to_string_round_trip():
    p = parse_polynomial("x0^2 - 2*x1 + 3", 2)
    q = parse_polynomial(p.to_string(), 2)
    for pt in ((0.0, 0.0), (1.3, -2.1), (4.0, 0.5)):
        assert abs(p(pt) - q(pt)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.tuples(st.integers(0, 3), st.integers(0, 3)),
            st.integers(-5, 5),
        ),
        min_size=1,
        max_size=5,
    ),
    st.tuples(st.floats(-2, 2), st.floats(-2, 2)),
)
def test_terms_evaluation_matches_monomial_sum(term_list, point):
    terms = {}
    for exps, c in term_list:
        terms[exps] = terms.get(exps, 0) + c
    p = Polynomial(2, terms)
    want = sum(
        c * point[0] ** e0 * point[1] ** e1
        for (e0, e1), c in terms.items()
    )
    assert math.isclose(p(point), want, rel_tol=1e-12, abs_tol=1e-12)
