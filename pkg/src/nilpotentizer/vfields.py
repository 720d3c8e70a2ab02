"""Polynomial vector fields, brackets, flows, and graded realizations.

A weighted generating family of polynomial vector fields on R^m determines a
realization of the free nilpotent algebra on matching weighted generators:
each Hall basis element maps to the corresponding iterated field bracket.
This module builds that map, evaluates its (dilated) image pointwise, and
integrates flows of individual fields.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.integrate import solve_ivp

from . import liealg
from .poly import Polynomial, parse_polynomial


class FlowEscapedError(RuntimeError):
    pass


class StructureError(ValueError):
    pass


class VectorField:
    """Vector field on R^dim with exact polynomial components."""

    __slots__ = ("dim", "components", "_ev")

    def __init__(self, components):
        components = tuple(components)
        if not components:
            raise ValueError("vector field needs at least one component")
        dim = components[0].num_vars
        if len(components) != dim:
            raise ValueError(
                f"{len(components)} components but polynomials in {dim} variables"
            )
        for p in components:
            if p.num_vars != dim:
                raise ValueError("component variable counts disagree")
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "components", components)
        object.__setattr__(self, "_ev", None)

    def __setattr__(self, *a):
        raise AttributeError("VectorField is immutable")

    @staticmethod
    def zero(dim):
        return VectorField([Polynomial.zero(dim)] * dim)

    @staticmethod
    def from_strings(strings, dim):
        if len(strings) != dim:
            raise ValueError(f"expected {dim} component strings, got {len(strings)}")
        return VectorField([parse_polynomial(s, dim) if s.strip() not in ("0",)
                            else Polynomial.zero(dim) for s in strings])

    def _binop(self, other, op):
        if not isinstance(other, VectorField) or other.dim != self.dim:
            raise ValueError("vector field dimension mismatch")
        return VectorField([op(a, b) for a, b in zip(self.components, other.components)])

    def __add__(self, other):
        return self._binop(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._binop(other, lambda a, b: a - b)

    def __neg__(self):
        return VectorField([-p for p in self.components])

    def __mul__(self, c):
        return VectorField([p * c for p in self.components])

    __rmul__ = __mul__

    def __eq__(self, other):
        return (isinstance(other, VectorField) and other.dim == self.dim
                and other.components == self.components)

    def __hash__(self):
        return hash(self.components)

    def is_zero(self):
        return all(p.is_zero() for p in self.components)

    def __call__(self, x):
        """Componentwise evaluation; exact on int/Fraction points."""
        return [p(x) for p in self.components]

    def evaluator(self):
        """Compiled float evaluator: (m, dim) points -> (m, dim) values."""
        if self._ev is None:
            evs = [p.compile() for p in self.components]
            def ev(pts):
                pts = np.atleast_2d(np.asarray(pts, dtype=float))
                return np.stack([e(pts) for e in evs], axis=1)
            object.__setattr__(self, "_ev", ev)
        return self._ev

    def to_strings(self, var_names=None):
        return [p.to_string(var_names) for p in self.components]

    def __repr__(self):
        return f"VectorField({self.to_strings()})"


def lie_bracket(X, Y):
    """[X, Y] = (X . grad) Y - (Y . grad) X, exact."""
    if X.dim != Y.dim:
        raise ValueError("vector field dimension mismatch")
    dim = X.dim
    comps = []
    for j in range(dim):
        acc = Polynomial.zero(dim)
        for i in range(dim):
            acc = acc + X.components[i] * Y.components[j].diff(i)
            acc = acc - Y.components[i] * X.components[j].diff(i)
        comps.append(acc)
    return VectorField(comps)


def flow(field, x0, time=1.0, tol=1e-10, max_norm=1e8):
    """Time-`time` flow of `field` from x0. Raises FlowEscapedError if the
    trajectory leaves the ball of radius max_norm or the integrator stalls."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (field.dim,):
        raise ValueError(f"initial point must have shape ({field.dim},)")
    if time == 0.0:
        return x0.copy()
    ev = field.evaluator()

    def rhs(_t, y):
        return ev(y[None, :])[0]

    def escape(_t, y):
        return max_norm - float(np.max(np.abs(y)))

    escape.terminal = True
    escape.direction = -1

    sol = solve_ivp(rhs, (0.0, float(time)), x0, method="DOP853",
                    rtol=tol, atol=tol, events=escape)
    if sol.status == 1:
        raise FlowEscapedError("flow escaped")
    if sol.status != 0:
        raise FlowEscapedError(f"flow escaped: {sol.message}")
    return sol.y[:, -1]


@dataclass(frozen=True)
class SubRiemannianStructure:
    """Weighted bracket-generating family of polynomial fields on R^dim.

    generators: tuple of (VectorField, weight). gram: optional inner product
    on the weight-1 layer, as a tuple of tuples (defaults to identity).
    """

    dim: int
    generators: tuple
    depth: int
    gram: tuple = None
    name: str = ""

    def __post_init__(self):
        if not self.generators:
            raise StructureError("structure needs at least one generator")
        for idx, (field, w) in enumerate(self.generators):
            if not isinstance(field, VectorField) or field.dim != self.dim:
                raise StructureError(f"generator {idx} is not a field on R^{self.dim}")
            if int(w) != w or w < 1:
                raise StructureError(f"generator {idx} has weight {w}, need int >= 1")
        if self.depth < max(w for _, w in self.generators):
            raise StructureError("depth must be >= max generator weight")
        if self.gram is not None:
            g = np.asarray(self.gram, dtype=float)
            k = sum(1 for _, w in self.generators if w == 1)
            if g.shape != (k, k):
                raise StructureError(f"gram must be {k}x{k} for {k} weight-1 generators")
            if not np.allclose(g, g.T):
                raise StructureError("gram must be symmetric")
            if np.linalg.eigvalsh(g).min() <= 0:
                raise StructureError("gram must be positive definite")

    @property
    def weights(self):
        return tuple(int(w) for _, w in self.generators)

    def gram_matrix(self, size):
        if self.gram is None:
            return np.eye(size)
        return np.asarray(self.gram, dtype=float)


class NaturalMap:
    """Linear map from a free nilpotent algebra to polynomial vector fields,
    sending each Hall basis element to the matching iterated bracket."""

    def __init__(self, structure, algebra, fields):
        self.structure = structure
        self.algebra = algebra
        self.fields = tuple(fields)
        self._stack = None

    def realize(self, v, t=1.0):
        """The field of the dilated element: sum_j t^{w_j} v_j X_j, exact."""
        coeffs = v.coeffs if isinstance(v, liealg.LieVector) else tuple(v)
        out = VectorField.zero(self.structure.dim)
        for c, w, X in zip(coeffs, self.algebra.weights, self.fields):
            if c == 0:
                continue
            scale = c * Fraction(t) ** w if t != 1.0 else c
            out = out + X * scale
        return out

    def _stacked(self):
        if self._stack is None:
            evs = [X.evaluator() for X in self.fields]
            def stack(pts):
                pts = np.atleast_2d(np.asarray(pts, dtype=float))
                return np.stack([e(pts) for e in evs], axis=2)
            self._stack = stack
        return self._stack

    def eval_columns(self, x, t=1.0):
        """Matrix with column j = t^{w_j} X_j(x), shape (dim, algebra.dim)."""
        M = self._stacked()(np.asarray(x, dtype=float)[None, :])[0]
        if t != 1.0:
            M = M * np.power(float(t), np.array(self.algebra.weights))[None, :]
        return M

    def eval_columns_many(self, pts, t=1.0):
        """Batched eval_columns, shape (m, dim, algebra.dim)."""
        M = self._stacked()(pts)
        if t != 1.0:
            M = M * np.power(float(t), np.array(self.algebra.weights))[None, None, :]
        return M


def build_natural_map(structure):
    """Free nilpotent algebra on the structure's weighted generators plus the
    realization of every Hall basis element; checks bracket compatibility."""
    d = len(structure.generators)
    algebra = liealg.free_nilpotent(d, structure.weights, structure.depth)
    memo = {}

    def realize_tree(t):
        key = liealg._tree_encode(t)
        if key not in memo:
            if isinstance(t, int):
                memo[key] = structure.generators[t][0]
            else:
                memo[key] = lie_bracket(realize_tree(t[0]), realize_tree(t[1]))
        return memo[key]

    fields = [realize_tree(t) for t in algebra.hall_trees]
    nmap = NaturalMap(structure, algebra, fields)
    for i in range(algebra.dim):
        for j in range(i + 1, algebra.dim):
            if algebra.weights[i] + algebra.weights[j] > algebra.depth:
                continue
            lhs = lie_bracket(fields[i], fields[j])
            rhs = VectorField.zero(structure.dim)
            for k, c in algebra.brackets.get((i, j), {}).items():
                rhs = rhs + fields[k] * c
            if lhs != rhs:
                raise StructureError(
                    f"realization incompatible with bracket of basis pair ({i},{j})"
                )
    return nmap


def natural_t(nmap, v, t):
    """Vector field of the t-dilated element v."""
    return nmap.realize(v, t)


def natural_at(nmap, x, t=1.0):
    """Pointwise dilated realization matrix at x: column j = t^{w_j} X_j(x)."""
    return nmap.eval_columns(x, t)


@dataclass(frozen=True)
class HormanderReport:
    ok: bool
    rank: int
    dim: int
    point: tuple


def hormander_check(nmap, x, tol=1e-9):
    """Do the realized fields span the tangent space at x (to rank tol)?"""
    M = nmap.eval_columns(x)
    if M.size == 0:
        rank = 0
    else:
        s = np.linalg.svd(M, compute_uv=False)
        rank = int(np.sum(s > tol * max(s[0], 1.0)))
    return HormanderReport(ok=rank == nmap.structure.dim, rank=rank,
                           dim=nmap.structure.dim, point=tuple(float(c) for c in x))
