import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nilpotentizer import liealg
from nilpotentizer.liealg import (
    AlgebraError,
    adjoint_conjugate,
    bch_product,
    bracket,
    dilate,
    free_nilpotent,
    is_subalgebra,
    quasi_norm,
    validate_algebra,
)


def _necklace_dim(n, depth):
    """Number of Lyndon words of length <= depth on n letters (Witt)."""

    def mobius(m):
        if m == 1:
            return 1
        out, d, left = 1, 2, m
        primes = []
        while d * d <= left:
            if left % d == 0:
                cnt = 0
                while left % d == 0:
                    left //= d
                    cnt += 1
                if cnt > 1:
                    return 0
                primes.append(d)
            d += 1
        if left > 1:
            primes.append(left)
        return (-1) ** len(primes)

    total = 0
    for d in range(1, depth + 1):
        s = sum(mobius(e) * n ** (d // e) for e in range(1, d + 1) if d % e == 0)
        total += s // d
    return total


@pytest.mark.parametrize("depth", [1, 2, 3, 4, 5])
def test_free_algebra_dimensions_match_witt_formula(depth):
    alg = free_nilpotent(2, (1, 1), depth)
    assert alg.dim == _necklace_dim(2, depth)


def test_free_algebra_three_generators():
    alg = free_nilpotent(3, (1, 1, 1), 2)
    assert alg.dim == _necklace_dim(3, 2)  # 3 + 3 brackets


def test_weighted_generators_prune_by_weighted_degree():
    # generators of weight 1 and 2, depth 3: basis X, Y, [X, Y]
    alg = free_nilpotent(2, (1, 2), 3)
    assert alg.dim == 3
    assert alg.weights == (1, 2, 3)


def test_heisenberg_bracket_table():
    alg = free_nilpotent(2, (1, 1), 2)
    e1, e2, e3 = (alg.vector(tuple(int(i == j) for j in range(3)))
                  for i in range(3))
    assert bracket(e1, e2).coeffs == (0, 0, 1)
    assert bracket(e2, e1).coeffs == (0, 0, -1)
    assert all(c == 0 for c in bracket(e1, e3).coeffs)
    assert all(c == 0 for c in bracket(e2, e3).coeffs)


def test_step3_hall_basis_brackets():
    alg = free_nilpotent(2, (1, 1), 3)
    e = [alg.vector(tuple(int(i == j) for j in range(5))) for i in range(5)]
    assert bracket(e[0], e[1]).coeffs == (0, 0, 1, 0, 0)
    assert bracket(e[0], e[2]).coeffs == (0, 0, 0, 1, 0)
    assert bracket(e[1], e[2]).coeffs == (0, 0, 0, 0, 1)


def test_bch_frozen_against_published_series():
    # In this module's convention, bch(u, v) is the log of the group element
    # whose flow is "v first, then u"; against the usual series that is
    # bch_standard(v, u).  The degree-3 coefficients 1/12 come from the
    # classical expansion.
    alg = free_nilpotent(2, (1, 1), 3)
    e1 = alg.vector((1, 0, 0, 0, 0))
    e2 = alg.vector((0, 1, 0, 0, 0))
    assert bch_product(e1, e2).coeffs == (
        1, 1, Fraction(-1, 2), Fraction(1, 12), Fraction(-1, 12))
    assert bch_product(e2, e1).coeffs == (
        1, 1, Fraction(1, 2), Fraction(1, 12), Fraction(-1, 12))


def _heis_matrix(v):
    """Faithful 3x3 strictly-upper-triangular image of a Heisenberg element."""
    a, b, c = (Fraction(x) for x in v.coeffs)
    return [[Fraction(0), a, c], [Fraction(0), Fraction(0), b],
            [Fraction(0), Fraction(0), Fraction(0)]]


def _mat_mul(A, B):
    return [[sum(A[i][k] * B[k][j] for k in range(3)) for j in range(3)]
            for i in range(3)]


def _mat_exp(M):
    I = [[Fraction(int(i == j)) for j in range(3)] for i in range(3)]
    M2 = _mat_mul(M, M)
    return [[I[i][j] + M[i][j] + M2[i][j] / 2 for j in range(3)]
            for i in range(3)]


def _mat_log(E):
    K = [[E[i][j] - Fraction(int(i == j)) for j in range(3)] for i in range(3)]
    K2 = _mat_mul(K, K)
    return [[K[i][j] - K2[i][j] / 2 for j in range(3)] for i in range(3)]


def test_bch_matches_exact_matrix_group():
    """The product must agree with multiplication of unipotent matrices,
    computed in exact rational arithmetic."""
    import random

    alg = free_nilpotent(2, (1, 1), 2)
    rnd = random.Random(5)
    for _ in range(40):
        v = alg.vector(tuple(Fraction(rnd.randint(-4, 4), rnd.randint(1, 3))
                             for _ in range(3)))
        w = alg.vector(tuple(Fraction(rnd.randint(-4, 4), rnd.randint(1, 3))
                             for _ in range(3)))
        # group element of "flow w, then flow v" is exp(w) * exp(v)
        prod = _mat_mul(_mat_exp(_heis_matrix(w)), _mat_exp(_heis_matrix(v)))
        want = _mat_log(prod)
        assert _heis_matrix(bch_product(v, w)) == want


def test_bch_identity_and_inverse():
    alg = free_nilpotent(2, (1, 1), 3)
    zero = alg.vector((0,) * 5)
    v = alg.vector((1, Fraction(1, 2), -2, 0, 3))
    assert bch_product(zero, v).coeffs == v.coeffs
    assert bch_product(v, zero).coeffs == v.coeffs
    neg = alg.vector(tuple(-c for c in v.coeffs))
    assert all(c == 0 for c in bch_product(v, neg).coeffs)
    assert all(c == 0 for c in bch_product(neg, v).coeffs)


_small_fraction = st.fractions(
    min_value=-3, max_value=3, max_denominator=4)


@settings(max_examples=40, deadline=None)
@given(st.lists(_small_fraction, min_size=15, max_size=15))
def test_bch_associativity_exact(coeffs):
    alg = free_nilpotent(2, (1, 1), 3)
    a = alg.vector(tuple(coeffs[0:5]))
    b = alg.vector(tuple(coeffs[5:10]))
    c = alg.vector(tuple(coeffs[10:15]))
    left = bch_product(bch_product(a, b), c)
    right = bch_product(a, bch_product(b, c))
    assert left.coeffs == right.coeffs


@settings(max_examples=40, deadline=None)
@given(st.lists(_small_fraction, min_size=10, max_size=10))
def test_dilation_is_group_automorphism(coeffs):
    alg = free_nilpotent(2, (1, 1), 3)
    a = alg.vector(tuple(coeffs[0:5]))
    b = alg.vector(tuple(coeffs[5:10]))
    lam = Fraction(3, 2)
    lhs = dilate(lam, bch_product(a, b))
    rhs = bch_product(dilate(lam, a), dilate(lam, b))
    assert lhs.coeffs == rhs.coeffs


@settings(max_examples=40, deadline=None)
@given(st.lists(_small_fraction, min_size=15, max_size=15))
def test_conjugation_is_group_automorphism(coeffs):
    alg = free_nilpotent(2, (1, 1), 3)
    g = alg.vector(tuple(coeffs[0:5]))
    a = alg.vector(tuple(coeffs[5:10]))
    b = alg.vector(tuple(coeffs[10:15]))
    lhs = adjoint_conjugate(g, bch_product(a, b))
    rhs = bch_product(adjoint_conjugate(g, a), adjoint_conjugate(g, b))
    assert lhs.coeffs == rhs.coeffs


def test_conjugation_equals_sandwich_product():
    import random

    alg = free_nilpotent(2, (1, 1), 3)
    rnd = random.Random(17)
    for _ in range(30):
        g = alg.vector(tuple(Fraction(rnd.randint(-3, 3), rnd.randint(1, 4))
                             for _ in range(5)))
        v = alg.vector(tuple(Fraction(rnd.randint(-3, 3), rnd.randint(1, 4))
                             for _ in range(5)))
        neg = alg.vector(tuple(-c for c in g.coeffs))
        want = bch_product(bch_product(g, v), neg)
        assert adjoint_conjugate(g, v).coeffs == want.coeffs


def test_dilate_rejects_nonpositive():
    alg = free_nilpotent(2, (1, 1), 2)
    v = alg.vector((1, 0, 0))
    with pytest.raises(AlgebraError):
        dilate(0, v)
    with pytest.raises(AlgebraError):
        dilate(-2, v)


def test_dilate_weights():
    alg = free_nilpotent(2, (1, 1), 2)
    v = alg.vector((1, 1, 1))
    assert dilate(Fraction(2), v).coeffs == (2, 2, 4)


def test_quasi_norm_hand_values():
    alg = free_nilpotent(2, (1, 1), 2)
    assert quasi_norm(alg.vector((0, 0, 0))) == 0.0
    assert quasi_norm(alg.vector((1, 0, 0))) == 1.0
    assert quasi_norm(alg.vector((3, 4, 0))) == 5.0
    assert quasi_norm(alg.vector((0, 0, 2))) == math.sqrt(2.0)
    # max of block roots
    assert quasi_norm(alg.vector((3, 4, 2))) == 5.0


def test_quasi_norm_dyadic_homogeneity_is_exact():
    rng = np.random.default_rng(3)
    for alg in (free_nilpotent(2, (1, 1), 2), free_nilpotent(2, (1, 1), 3)):
        for _ in range(40):
            v = alg.vector(tuple(rng.uniform(-2, 2, alg.dim)))
            q = quasi_norm(v)
            for k in range(-3, 4):
                lam = 2.0 ** k
                assert quasi_norm(dilate(lam, v)) == lam * q


def test_validate_free_algebras():
    for alg in (free_nilpotent(2, (1, 1), 2), free_nilpotent(2, (1, 1), 4),
                free_nilpotent(3, (1, 1, 1), 3)):
        rep = validate_algebra(alg)
        assert rep.ok, rep.violations
        assert rep.max_jacobi_residual == 0


def test_is_subalgebra_reports():
    alg = free_nilpotent(2, (1, 1), 2)
    from nilpotentizer.grassmann import Subspace

    closed = Subspace.from_spanning(np.array([[1.0, 0.0],
                                              [0.0, 0.0],
                                              [0.0, 1.0]]))
    rep = is_subalgebra(alg, closed)
    assert rep.ok and rep.residual <= 1e-12

    open_ = Subspace.from_spanning(np.array([[1.0, 0.0],
                                             [0.0, 1.0],
                                             [0.0, 0.0]]))
    rep2 = is_subalgebra(alg, open_)
    assert not rep2.ok
    assert rep2.residual > 0.9


def test_vector_rejects_wrong_length():
    alg = free_nilpotent(2, (1, 1), 2)
    with pytest.raises(AlgebraError):
        alg.vector((1, 2))


def test_mixed_algebra_operations_rejected():
    a2 = free_nilpotent(2, (1, 1), 2)
    a3 = free_nilpotent(2, (1, 1), 3)
    with pytest.raises(AlgebraError):
        bracket(a2.vector((1, 0, 0)), a3.vector((1, 0, 0, 0, 0)))
