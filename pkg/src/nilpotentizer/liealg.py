"""Graded nilpotent Lie algebras over exact rationals.

Provides the free nilpotent algebra on weighted generators (Hall basis,
exact structure constants), the truncated group law obtained by multiplying
exponentials in the weight-truncated free associative algebra, graded
dilations, group conjugation, quasi-norms, and subalgebra residuals.

Sign convention for the group law: the product is defined so that composing
time-1 flows "first w, then v" corresponds to the product v*w, which gives

    v*w = v + w - 1/2 [v,w] + (1/12)([v,[v,w]] + [w,[w,v]]) + ...

i.e. the series of log(exp(w_hat) exp(v_hat)) in the associative algebra.
Conjugation below is the group conjugation g*v*g^{-1} = sum_k (-ad_g)^k(v)/k!
for this convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from math import factorial, frexp, ldexp

import numpy as np

from .poly import Polynomial

# --------------------------------------------------------------------------
# Hall trees. A tree is either an int (generator index) or a pair of trees.
# --------------------------------------------------------------------------


def _weight_root(x, w):
    """x ** (1/w) for x > 0 with the binary exponent extracted first, so
    scaling x by 2**(w*k) scales the result by exactly 2**k."""
    if w == 1:
        return x
    m, e = frexp(x)
    r = e % w
    m = m * (2.0 ** r)
    return ldexp(m ** (1.0 / w), (e - r) // w)


def tree_length(t):
    return 1 if isinstance(t, int) else tree_length(t[0]) + tree_length(t[1])


def tree_weight(t, weights):
    if isinstance(t, int):
        return weights[t]
    return tree_weight(t[0], weights) + tree_weight(t[1], weights)


def tree_foliage(t):
    if isinstance(t, int):
        return (t,)
    return tree_foliage(t[0]) + tree_foliage(t[1])


def tree_label(t, gen_labels):
    if isinstance(t, int):
        return gen_labels[t]
    return f"[{tree_label(t[0], gen_labels)},{tree_label(t[1], gen_labels)}]"


def _tree_encode(t):
    if isinstance(t, int):
        return (0, t)
    return (1, _tree_encode(t[0]), _tree_encode(t[1]))


def _tree_key(t):
    # Total order: generators first (by index), then by length, then
    # lexicographically on the leaf word, structure as final tiebreak.
    return (tree_length(t), tree_foliage(t), _tree_encode(t))


def _hall_trees(d, weights, N):
    """All Hall trees on d generators with weight sum <= N, in basis order."""
    min_w = min(weights)
    max_len = max(1, N // min_w)
    by_len = {1: sorted(range(d), key=_tree_key)}
    hall = list(by_len[1])
    for length in range(2, max_len + 1):
        new = []
        for la in range(1, length):
            lb = length - la
            for a in by_len.get(la, ()):
                for b in by_len.get(lb, ()):
                    if tree_weight(a, weights) + tree_weight(b, weights) > N:
                        continue
                    if _tree_key(a) >= _tree_key(b):
                        continue
                    if not isinstance(b, int) and _tree_key(b[0]) > _tree_key(a):
                        continue
                    new.append((a, b))
        new.sort(key=_tree_key)
        by_len[length] = new
        hall.extend(new)
    return hall


# --------------------------------------------------------------------------
# Weight-truncated free associative algebra: dict word(tuple of letters) -> Fraction.
# --------------------------------------------------------------------------


def _word_weight(word, weights):
    return sum(weights[i] for i in word)


def _assoc_add(A, B):
    out = dict(A)
    for w, c in B.items():
        s = out.get(w, Fraction(0)) + c
        if s:
            out[w] = s
        elif w in out:
            del out[w]
    return out


def _assoc_scale(A, c):
    c = Fraction(c)
    if not c:
        return {}
    return {w: v * c for w, v in A.items()}


def _assoc_mul(A, B, weights, N):
    out = {}
    for wa, ca in A.items():
        for wb, cb in B.items():
            w = wa + wb
            if _word_weight(w, weights) > N:
                continue
            s = out.get(w, Fraction(0)) + ca * cb
            if s:
                out[w] = s
            elif w in out:
                del out[w]
    return out


def _assoc_exp(A, weights, N):
    """exp of an element with no constant term, truncated at weight N."""
    out = {(): Fraction(1)}
    power = {(): Fraction(1)}
    k = 0
    while True:
        k += 1
        power = _assoc_mul(power, A, weights, N)
        if not power:
            return out
        out = _assoc_add(out, _assoc_scale(power, Fraction(1, factorial(k))))


def _assoc_log(P, weights, N):
    """log of an element with constant term 1, truncated at weight N."""
    B = dict(P)
    B.pop((), None)
    out = {}
    power = {(): Fraction(1)}
    k = 0
    while True:
        k += 1
        power = _assoc_mul(power, B, weights, N)
        if not power:
            return out
        out = _assoc_add(out, _assoc_scale(power, Fraction((-1) ** (k + 1), k)))


def _expand_tree(t, weights, N, cache):
    """Commutator expansion of a Hall tree in the associative algebra."""
    key = _tree_encode(t)
    if key in cache:
        return cache[key]
    if isinstance(t, int):
        out = {(t,): Fraction(1)}
    else:
        A = _expand_tree(t[0], weights, N, cache)
        B = _expand_tree(t[1], weights, N, cache)
        out = _assoc_add(_assoc_mul(A, B, weights, N),
                         _assoc_scale(_assoc_mul(B, A, weights, N), -1))
    cache[key] = out
    return out


def _solve_exact(rows, cols, mat, rhs):
    """Solve the exact linear system mat @ c = rhs.

    mat: dict (row_key, col_index) -> Fraction; rhs: dict row_key -> Fraction.
    Raises ValueError if inconsistent. Returns list of Fractions per column.
    """
    m = [[mat.get((r, c), Fraction(0)) for c in cols] + [rhs.get(r, Fraction(0))]
         for r in rows]
    nrows, ncols = len(m), len(cols)
    piv_rows = []
    r0 = 0
    for c in range(ncols):
        piv = next((r for r in range(r0, nrows) if m[r][c] != 0), None)
        if piv is None:
            continue
        m[r0], m[piv] = m[piv], m[r0]
        inv = 1 / m[r0][c]
        m[r0] = [x * inv for x in m[r0]]
        for r in range(nrows):
            if r != r0 and m[r][c] != 0:
                f = m[r][c]
                m[r] = [x - f * y for x, y in zip(m[r], m[r0])]
        piv_rows.append((r0, c))
        r0 += 1
        if r0 == nrows:
            break
    sol = [Fraction(0)] * ncols
    for r, c in piv_rows:
        sol[c] = m[r][-1]
    for r in range(nrows):
        if all(x == 0 for x in m[r][:-1]) and m[r][-1] != 0:
            raise ValueError("element does not lie in the span of Hall expansions")
    return sol


def _multidegree(word, d):
    md = [0] * d
    for letter in word:
        md[letter] += 1
    return tuple(md)


def _to_hall_coords(element, hall, expansions, d):
    """Exact coordinates of a Lie element (given associatively) in Hall basis."""
    hall_by_md = {}
    for i, t in enumerate(hall):
        hall_by_md.setdefault(_multidegree(tree_foliage(t), d), []).append(i)
    elem_by_md = {}
    for w, c in element.items():
        elem_by_md.setdefault(_multidegree(w, d), {})[w] = c
    coords = [Fraction(0)] * len(hall)
    for md, block in elem_by_md.items():
        cols = hall_by_md.get(md)
        if not cols:
            raise ValueError("element has a component outside the Hall span")
        mat = {}
        rows = set(block)
        for ci, hi in enumerate(cols):
            for w, c in expansions[hi].items():
                mat[(w, ci)] = c
                rows.add(w)
        rows = sorted(rows)
        sol = _solve_exact(rows, range(len(cols)), mat, block)
        for ci, hi in enumerate(cols):
            coords[hi] = sol[ci]
    return coords


# --------------------------------------------------------------------------
# Universal truncated group-law coefficients, per nilpotency depth.
# --------------------------------------------------------------------------

_BCH_CACHE = {}


def bch_terms(depth):
    """Coefficients of the truncated group law as (tree, coeff) pairs.

    Trees have leaves 0 (first argument) and 1 (second argument). Valid for
    any nilpotent algebra whose iterated brackets of length > depth vanish.
    """
    if depth not in _BCH_CACHE:
        weights = (1, 1)
        hall = _hall_trees(2, weights, depth)
        cache = {}
        expansions = [_expand_tree(t, weights, depth, cache) for t in hall]
        e0 = _assoc_exp({(0,): Fraction(1)}, weights, depth)
        e1 = _assoc_exp({(1,): Fraction(1)}, weights, depth)
        # product v*w corresponds to exp(w_hat) exp(v_hat): letter 0 = first arg.
        z = _assoc_log(_assoc_mul(e1, e0, weights, depth), weights, depth)
        coords = _to_hall_coords(z, hall, expansions, 2)
        _BCH_CACHE[depth] = tuple(
            (t, c) for t, c in zip(hall, coords) if c != 0
        )
    return _BCH_CACHE[depth]


# --------------------------------------------------------------------------
# The algebra proper.
# --------------------------------------------------------------------------


class AlgebraError(ValueError):
    pass


@dataclass(frozen=True)
class AlgebraReport:
    ok: bool
    violations: tuple
    max_jacobi_residual: Fraction


@dataclass(frozen=True)
class SubalgebraReport:
    residual: float
    ok: bool
    tol: float


class GradedLieAlgebra:
    """Finite-dimensional graded nilpotent Lie algebra.

    weights[i] is the grading weight of basis element i; structure constants
    are stored sparsely as brackets[(i, j)][k] = c, for i < j only (the other
    order is implied by antisymmetry). All constants are exact rationals.
    """

    def __init__(self, weights, depth, brackets, labels=None,
                 hall_trees=None, num_generators=None):
        weights = tuple(int(w) for w in weights)
        if any(w < 1 for w in weights):
            raise AlgebraError("all weights must be >= 1")
        if depth < max(weights, default=1):
            raise AlgebraError("depth must be >= max weight")
        dim = len(weights)
        norm = {}
        for (i, j), row in brackets.items():
            if not (0 <= i < dim and 0 <= j < dim):
                raise AlgebraError(f"bracket index ({i},{j}) out of range")
            if i == j:
                if any(Fraction(c) != 0 for c in row.values()):
                    raise AlgebraError(f"nonzero bracket [e{i},e{i}]")
                continue
            key, sign = ((i, j), 1) if i < j else ((j, i), -1)
            dst = norm.setdefault(key, {})
            for k, c in row.items():
                c = Fraction(c) * sign
                if k in dst and dst[k] != c:
                    raise AlgebraError(f"conflicting constants for ({i},{j},{k})")
                dst[k] = c
        self.weights = weights
        self.depth = int(depth)
        self.dim = dim
        self.brackets = {
            ij: {k: c for k, c in row.items() if c != 0}
            for ij, row in norm.items()
        }
        self.brackets = {ij: row for ij, row in self.brackets.items() if row}
        self.labels = tuple(labels) if labels else tuple(f"e{i+1}" for i in range(dim))
        self.hall_trees = tuple(hall_trees) if hall_trees is not None else None
        self.num_generators = num_generators
        by_w = {}
        for i, w in enumerate(self.weights):
            by_w.setdefault(w, []).append(i)
        self.weight_indices = {w: tuple(ix) for w, ix in sorted(by_w.items())}
        self._tensor = None
        self._bch_polys = None
        self._bch_jac = None

    # -- basic vectors ----------------------------------------------------

    def zero(self):
        return LieVector(self, (Fraction(0),) * self.dim)

    def e(self, i):
        c = [Fraction(0)] * self.dim
        c[i] = Fraction(1)
        return LieVector(self, c)

    def vector(self, coeffs):
        coeffs = tuple(coeffs)
        if len(coeffs) != self.dim:
            raise AlgebraError(f"expected {self.dim} coefficients, got {len(coeffs)}")
        return LieVector(self, coeffs)

    # -- core operations on raw coefficient sequences ----------------------

    def bracket_coeffs(self, xs, ys):
        out = [0] * self.dim
        for (i, j), row in self.brackets.items():
            s = xs[i] * ys[j] - xs[j] * ys[i]
            if isinstance(s, (int, float, Fraction)) and s == 0:
                continue
            for k, c in row.items():
                out[k] = out[k] + c * s
        return out

    def bracket_tensor(self):
        """Dense float structure tensor C[i,j,k] with [e_i,e_j] = sum_k C[i,j,k] e_k."""
        if self._tensor is None:
            C = np.zeros((self.dim, self.dim, self.dim))
            for (i, j), row in self.brackets.items():
                for k, c in row.items():
                    C[i, j, k] = float(c)
                    C[j, i, k] = -float(c)
            self._tensor = C
        return self._tensor

    def bracket_float(self, x, y):
        return np.einsum("ijk,i,j->k", self.bracket_tensor(), x, y)

    def bch_coeffs(self, xs, ys):
        memo = {}

        def ev(t):
            key = _tree_encode(t)
            if key in memo:
                return memo[key]
            if isinstance(t, int):
                val = list(xs) if t == 0 else list(ys)
            else:
                val = self.bracket_coeffs(ev(t[0]), ev(t[1]))
            memo[key] = val
            return val

        out = [0] * self.dim
        for tree, c in bch_terms(self.depth):
            val = ev(tree)
            out = [o + c * v for o, v in zip(out, val)]
        return out

    def dilate_coeffs(self, lam, xs):
        return [x * lam ** w for x, w in zip(xs, self.weights)]

    def conjugate_coeffs(self, gs, xs):
        """Group conjugation of v by g: sum_k (-ad_g)^k (v) / k!.

        In this module's product convention this equals
        bch(bch(g, v), -g); it is the map induced on logarithms by
        shifting the base point along the flow of g.
        """
        out = list(xs)
        term = list(xs)
        for k in range(1, self.depth + 1):
            term = self.bracket_coeffs(gs, term)
            if all(isinstance(t, (int, float, Fraction)) and t == 0 for t in term):
                break
            c = Fraction((-1) ** k, factorial(k))
            out = [o + c * t for o, t in zip(out, term)]
        return out

    def quasi_norm_coeffs(self, xs):
        arr = np.array([float(x) for x in xs])
        best = 0.0
        for w, idx in self.weight_indices.items():
            b = float(np.linalg.norm(arr[list(idx)]))
            if b > 0.0:
                best = max(best, _weight_root(b, w))
        return best

    # -- group law as an exact polynomial map ------------------------------

    def bch_polynomials(self):
        """The product map as dim exact polynomials in 2*dim variables
        (first argument coordinates, then second argument coordinates)."""
        if self._bch_polys is None:
            n = self.dim
            us = [Polynomial.variable(2 * n, i) for i in range(n)]
            vs = [Polynomial.variable(2 * n, n + i) for i in range(n)]
            polys = self.bch_coeffs(us, vs)
            self._bch_polys = tuple(
                p if isinstance(p, Polynomial) else Polynomial.const(2 * n, p)
                for p in polys
            )
        return self._bch_polys

    def bch_jacobians(self):
        """Exact Jacobian polynomials (d(product)/d(first), d/d(second))."""
        if self._bch_jac is None:
            n = self.dim
            polys = self.bch_polynomials()
            ju = tuple(tuple(p.diff(i) for i in range(n)) for p in polys)
            jv = tuple(tuple(p.diff(n + i) for i in range(n)) for p in polys)
            self._bch_jac = (ju, jv)
        return self._bch_jac

    # -- validation ---------------------------------------------------------

    def validate(self):
        violations = []
        for (i, j), row in self.brackets.items():
            for k, c in row.items():
                if c == 0:
                    continue
                if self.weights[k] != self.weights[i] + self.weights[j]:
                    violations.append(
                        f"grading: c[{i},{j}]^{k} nonzero but w_{k}={self.weights[k]} "
                        f"!= w_{i}+w_{j}={self.weights[i] + self.weights[j]}"
                    )
                if self.weights[i] + self.weights[j] > self.depth:
                    violations.append(
                        f"nilpotency: c[{i},{j}]^{k} nonzero with weight sum "
                        f"{self.weights[i] + self.weights[j]} > depth {self.depth}"
                    )
        max_res = Fraction(0)
        for i in range(self.dim):
            ei = self.e(i).coeffs
            for j in range(i + 1, self.dim):
                ej = self.e(j).coeffs
                for k in range(j + 1, self.dim):
                    ek = self.e(k).coeffs
                    jac = [
                        a + b + c
                        for a, b, c in zip(
                            self.bracket_coeffs(ei, self.bracket_coeffs(ej, ek)),
                            self.bracket_coeffs(ej, self.bracket_coeffs(ek, ei)),
                            self.bracket_coeffs(ek, self.bracket_coeffs(ei, ej)),
                        )
                    ]
                    res = max((abs(Fraction(x)) for x in jac), default=Fraction(0))
                    if res != 0:
                        max_res = max(max_res, res)
                        violations.append(
                            f"jacobi: triple ({i},{j},{k}) residual {res}"
                        )
        return AlgebraReport(ok=not violations, violations=tuple(violations),
                             max_jacobi_residual=max_res)

    # -- serialization -------------------------------------------------------

    def to_json_dict(self):
        constants = []
        for (i, j), row in sorted(self.brackets.items()):
            for k, c in sorted(row.items()):
                constants.append([i, j, k, c.numerator, c.denominator])
        return {
            "dim": self.dim,
            "weights": list(self.weights),
            "depth": self.depth,
            "constants": constants,
            "labels": list(self.labels),
        }

    def to_json(self):
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, doc):
        weights = doc["weights"]
        if len(weights) != doc.get("dim", len(weights)):
            raise AlgebraError("dim does not match weights length")
        brackets = {}
        for i, j, k, num, den in doc.get("constants", []):
            brackets.setdefault((i, j), {})[k] = Fraction(int(num), int(den))
        return cls(weights, doc["depth"], brackets, labels=doc.get("labels"))

    @classmethod
    def from_json(cls, text):
        return cls.from_json_dict(json.loads(text))

    def __repr__(self):
        return (f"GradedLieAlgebra(dim={self.dim}, depth={self.depth}, "
                f"weights={self.weights})")


class LieVector:
    """Element of a GradedLieAlgebra; coefficients rational or floating."""

    __slots__ = ("algebra", "coeffs")

    def __init__(self, algebra, coeffs):
        self.algebra = algebra
        self.coeffs = tuple(coeffs)

    def _same(self, other):
        if not isinstance(other, LieVector) or other.algebra is not self.algebra:
            raise AlgebraError("algebra mismatch")
        return other

    def __add__(self, other):
        self._same(other)
        return LieVector(self.algebra, [a + b for a, b in zip(self.coeffs, other.coeffs)])

    def __sub__(self, other):
        self._same(other)
        return LieVector(self.algebra, [a - b for a, b in zip(self.coeffs, other.coeffs)])

    def __neg__(self):
        return LieVector(self.algebra, [-a for a in self.coeffs])

    def __mul__(self, c):
        return LieVector(self.algebra, [a * c for a in self.coeffs])

    __rmul__ = __mul__

    def __eq__(self, other):
        return (isinstance(other, LieVector) and other.algebra is self.algebra
                and all(a == b for a, b in zip(self.coeffs, other.coeffs)))

    def __hash__(self):
        return hash((id(self.algebra), self.coeffs))

    def as_array(self):
        return np.array([float(c) for c in self.coeffs])

    def is_zero(self):
        return all(c == 0 for c in self.coeffs)

    def __repr__(self):
        parts = [
            f"{c}*{lbl}" for c, lbl in zip(self.coeffs, self.algebra.labels) if c != 0
        ]
        return "LieVector(" + (" + ".join(parts) if parts else "0") + ")"


# --------------------------------------------------------------------------
# Module-level operations (the public verbs).
# --------------------------------------------------------------------------


def bracket(u, v):
    u._same(v)
    return LieVector(u.algebra, u.algebra.bracket_coeffs(u.coeffs, v.coeffs))


def bch_product(u, v):
    """Group product of u and v (truncated exactly by nilpotency)."""
    u._same(v)
    return LieVector(u.algebra, u.algebra.bch_coeffs(u.coeffs, v.coeffs))


def dilate(lam, v):
    """Graded dilation: scales the weight-w component by lam**w."""
    if not lam > 0:
        raise AlgebraError("dilation parameter must be positive")
    return LieVector(v.algebra, v.algebra.dilate_coeffs(lam, v.coeffs))


def adjoint_conjugate(g, v):
    """Group conjugation of v by g, the action that tracks a base-point
    shift along the flow of g.  Equals bch_product(bch_product(g, v), -g)
    exactly in this module's product convention."""
    g._same(v)
    return LieVector(g.algebra, g.algebra.conjugate_coeffs(g.coeffs, v.coeffs))


def quasi_norm(v):
    """max over weights w of (Euclidean norm of the weight-w block)^(1/w)."""
    return v.algebra.quasi_norm_coeffs(v.coeffs)


def is_subalgebra(algebra, S, tol=1e-8):
    """Residual report: largest component of a basis-pair bracket outside S."""
    basis = np.asarray(getattr(S, "basis", S), dtype=float)
    if basis.ndim != 2 or basis.shape[0] != algebra.dim:
        raise AlgebraError("subspace ambient dimension mismatch")
    if basis.shape[1] == 0:
        return SubalgebraReport(residual=0.0, ok=True, tol=tol)
    q, _ = np.linalg.qr(basis)
    residual = 0.0
    k = q.shape[1]
    for i in range(k):
        for j in range(i + 1, k):
            w = algebra.bracket_float(q[:, i], q[:, j])
            out = w - q @ (q.T @ w)
            residual = max(residual, float(np.linalg.norm(out)))
    return SubalgebraReport(residual=residual, ok=residual <= tol, tol=tol)


def validate_algebra(algebra):
    return algebra.validate()


def free_nilpotent(num_generators, generator_weights, depth):
    """Free nilpotent algebra on weighted generators, truncated at weighted
    degree `depth`. Basis is the Hall basis; structure constants exact."""
    d = int(num_generators)
    if d < 1:
        raise AlgebraError("need at least one generator")
    gw = tuple(int(w) for w in generator_weights)
    if len(gw) != d:
        raise AlgebraError("generator_weights length must equal num_generators")
    if any(w < 1 for w in gw):
        raise AlgebraError("generator weights must be >= 1")
    N = int(depth)
    if N < max(gw):
        raise AlgebraError("depth must be >= max generator weight")

    hall = _hall_trees(d, gw, N)
    weights = [tree_weight(t, gw) for t in hall]
    cache = {}
    expansions = [_expand_tree(t, gw, N, cache) for t in hall]
    brackets = {}
    n = len(hall)
    for i in range(n):
        for j in range(i + 1, n):
            if weights[i] + weights[j] > N:
                continue
            prod = _assoc_add(
                _assoc_mul(expansions[i], expansions[j], gw, N),
                _assoc_scale(_assoc_mul(expansions[j], expansions[i], gw, N), -1),
            )
            coords = _to_hall_coords(prod, hall, expansions, d)
            row = {k: c for k, c in enumerate(coords) if c != 0}
            if row:
                brackets[(i, j)] = row
    gen_labels = [f"e{i+1}" for i in range(d)]
    labels = [tree_label(t, gen_labels) for t in hall]
    return GradedLieAlgebra(weights, N, brackets, labels=labels,
                            hall_trees=hall, num_generators=d)
