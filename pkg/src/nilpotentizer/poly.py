"""Exact multivariate polynomials over the rationals.

This is the shared coefficient ring for symbolic vector-field brackets,
for the group-law-as-polynomial-map machinery, and for cone frame fields.
Coefficients are `fractions.Fraction`, so every algebraic operation here is
exact; floating point only enters through `__call__` on float points or the
compiled evaluators.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

Exponents = tuple  # tuple[int, ...], length num_vars


def _as_fraction(c):
    if isinstance(c, Fraction):
        return c
    if isinstance(c, int):
        return Fraction(c)
    if isinstance(c, float):
        return Fraction(c)  # exact binary expansion
    if isinstance(c, str):
        return Fraction(c)
    raise TypeError(f"cannot use {type(c).__name__} as a polynomial coefficient")


class Polynomial:
    """Immutable polynomial in num_vars variables with Fraction coefficients.

    terms maps exponent tuples to nonzero Fractions. The zero polynomial has
    an empty terms dict.
    """

    __slots__ = ("num_vars", "terms")

    def __init__(self, num_vars, terms=None):
        if num_vars < 0:
            raise ValueError("num_vars must be >= 0")
        clean = {}
        for exps, c in (terms or {}).items():
            if len(exps) != num_vars:
                raise ValueError(f"exponent tuple {exps} has wrong length, expected {num_vars}")
            c = _as_fraction(c)
            if c != 0:
                clean[tuple(int(e) for e in exps)] = c
        object.__setattr__(self, "num_vars", num_vars)
        object.__setattr__(self, "terms", clean)

    def __setattr__(self, *a):
        raise AttributeError("Polynomial is immutable")

    # -- constructors -------------------------------------------------

    @staticmethod
    def zero(num_vars):
        return Polynomial(num_vars, {})

    @staticmethod
    def const(num_vars, c):
        return Polynomial(num_vars, {(0,) * num_vars: c})

    @staticmethod
    def variable(num_vars, i):
        if not 0 <= i < num_vars:
            raise ValueError(f"variable index {i} out of range for {num_vars} vars")
        exps = [0] * num_vars
        exps[i] = 1
        return Polynomial(num_vars, {tuple(exps): Fraction(1)})

    # -- predicates ----------------------------------------------------

    def is_zero(self):
        return not self.terms

    def is_constant(self):
        return all(all(e == 0 for e in exps) for exps in self.terms)

    def constant_value(self):
        return self.terms.get((0,) * self.num_vars, Fraction(0))

    def total_degree(self):
        if not self.terms:
            return 0
        return max(sum(e) for e in self.terms)

    # -- ring operations ------------------------------------------------

    def _check(self, other):
        if self.num_vars != other.num_vars:
            raise ValueError("polynomials over different variable counts")

    def __add__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.const(self.num_vars, other)
        self._check(other)
        terms = dict(self.terms)
        for exps, c in other.terms.items():
            terms[exps] = terms.get(exps, Fraction(0)) + c
        return Polynomial(self.num_vars, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.num_vars, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.const(self.num_vars, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            c = _as_fraction(other)
            return Polynomial(self.num_vars, {e: c * v for e, v in self.terms.items()})
        self._check(other)
        terms = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                terms[e] = terms.get(e, Fraction(0)) + c1 * c2
        return Polynomial(self.num_vars, terms)

    __rmul__ = __mul__

    def __pow__(self, k):
        if k < 0 or k != int(k):
            raise ValueError("only nonnegative integer powers")
        out = Polynomial.const(self.num_vars, 1)
        base = self
        k = int(k)
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return self.is_constant() and self.constant_value() == _as_fraction(other)
        return self.num_vars == other.num_vars and self.terms == other.terms

    def __hash__(self):
        return hash((self.num_vars, frozenset(self.terms.items())))

    # -- calculus -------------------------------------------------------

    def diff(self, i):
        """Exact partial derivative with respect to variable i."""
        terms = {}
        for exps, c in self.terms.items():
            k = exps[i]
            if k == 0:
                continue
            e = list(exps)
            e[i] = k - 1
            terms[tuple(e)] = c * k
        return Polynomial(self.num_vars, terms)

    def substitute(self, i, value):
        """Replace variable i by a scalar (exact for Fraction/int input)."""
        value = _as_fraction(value)
        terms = {}
        for exps, c in self.terms.items():
            e = list(exps)
            k = e[i]
            e[i] = 0
            e = tuple(e)
            terms[e] = terms.get(e, Fraction(0)) + c * value**k
        return Polynomial(self.num_vars, terms)

    # -- evaluation -------------------------------------------------------

    def __call__(self, point):
        """Evaluate at a point (sequence of length num_vars).

        Exact when the point entries are int/Fraction; float otherwise.
        """
        if len(point) != self.num_vars:
            raise ValueError("point has wrong dimension")
        exact = all(isinstance(p, (int, Fraction)) for p in point)
        total = Fraction(0) if exact else 0.0
        for exps, c in self.terms.items():
            v = c if exact else float(c)
            for p, e in zip(point, exps):
                if e:
                    v = v * p**e
            total = total + v
        return total

    def compile(self):
        """Return a float evaluator f(points) vectorized over rows.

        Accepts a single point (n,) or a batch (m, n); returns scalar or (m,).
        """
        n = self.num_vars
        if not self.terms:
            def ev_zero(pts):
                pts = np.asarray(pts, dtype=float)
                return 0.0 if pts.ndim == 1 else np.zeros(pts.shape[0])
            return ev_zero
        exps = np.array(list(self.terms.keys()), dtype=np.int64)      # (T, n)
        coeffs = np.array([float(c) for c in self.terms.values()])    # (T,)

        def ev(pts):
            pts = np.asarray(pts, dtype=float)
            single = pts.ndim == 1
            P = pts[None, :] if single else pts
            if P.shape[1] != n:
                raise ValueError("point has wrong dimension")
            mono = np.prod(P[:, None, :] ** exps[None, :, :], axis=2)  # (m, T)
            out = mono @ coeffs
            return float(out[0]) if single else out

        return ev

    # -- printing / parsing -------------------------------------------------

    def __repr__(self):
        return f"Polynomial({self.to_string()!r})"

    def to_string(self, var_names=None):
        if not self.terms:
            return "0"
        names = var_names or [f"x{i}" for i in range(self.num_vars)]
        pieces = []
        for exps, c in sorted(self.terms.items(), key=lambda kv: (-sum(kv[0]), kv[0])):
            factors = []
            for i, e in enumerate(exps):
                if e == 1:
                    factors.append(names[i])
                elif e > 1:
                    factors.append(f"{names[i]}^{e}")
            if not factors:
                body = str(c)
            elif abs(c) == 1:
                body = "*".join(factors)
            else:
                body = "*".join([str(abs(c))] + factors)
            if not pieces:
                pieces.append(("-" if c < 0 and factors else "") + body)
            else:
                sign = " - " if c < 0 else " + "
                if not factors:
                    body = str(abs(c))
                pieces.append(sign + body)
        return "".join(pieces)


class PolyParseError(ValueError):
    """Parse failure; carries the 0-based character position."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


def parse_polynomial(text, num_vars):
    """Parse strings like "x0^2*x1 - 3*x1" into a Polynomial.

    Grammar: sum of terms; term = factor ('*' factor)*;
    factor = number | var ('^' int); var = x0..x{num_vars-1}.
    Numbers may be integers or decimals (converted exactly).
    """
    s = text
    i = 0
    n = len(s)

    def skip_ws():
        nonlocal i
        while i < n and s[i].isspace():
            i += 1

    def parse_number():
        nonlocal i
        start = i
        while i < n and (s[i].isdigit() or s[i] == "."):
            i += 1
        tok = s[start:i]
        if not tok or tok == ".":
            raise PolyParseError("expected a number", start)
        try:
            return Fraction(tok)
        except ValueError:
            raise PolyParseError(f"bad number {tok!r}", start) from None

    def parse_factor():
        nonlocal i
        skip_ws()
        if i >= n:
            raise PolyParseError("unexpected end of input", i)
        if s[i] == "x":
            start = i
            i += 1
            d0 = i
            while i < n and s[i].isdigit():
                i += 1
            if d0 == i:
                raise PolyParseError("expected variable index after 'x'", start)
            idx = int(s[d0:i])
            if idx >= num_vars:
                raise PolyParseError(f"variable x{idx} out of range (num_vars={num_vars})", start)
            exp = 1
            skip_ws()
            if i < n and s[i] == "^":
                i += 1
                skip_ws()
                e0 = i
                while i < n and s[i].isdigit():
                    i += 1
                if e0 == i:
                    raise PolyParseError("expected integer exponent after '^'", e0)
                exp = int(s[e0:i])
            return Polynomial.variable(num_vars, idx) ** exp
        if s[i].isdigit() or s[i] == ".":
            return Polynomial.const(num_vars, parse_number())
        raise PolyParseError(f"unexpected character {s[i]!r}", i)

    def parse_term():
        p = parse_factor()
        nonlocal i
        while True:
            skip_ws()
            if i < n and s[i] == "*":
                i += 1
                p = p * parse_factor()
            else:
                return p

    skip_ws()
    if i >= n:
        raise PolyParseError("empty polynomial", 0)
    sign = 1
    if s[i] in "+-":
        sign = -1 if s[i] == "-" else 1
        i += 1
    result = parse_term() * sign
    while True:
        skip_ws()
        if i >= n:
            return result
        if s[i] == "+":
            sign = 1
        elif s[i] == "-":
            sign = -1
        else:
            raise PolyParseError(f"unexpected character {s[i]!r}", i)
        i += 1
        result = result + parse_term() * sign
