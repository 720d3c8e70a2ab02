"""Tangent cones as homogeneous spaces: cosets, frames, and rank reports.

A certified subalgebra h of a graded nilpotent algebra determines a
homogeneous space (group modulo the subgroup of h). Points are represented
canonically inside a coordinate complement S; the group acts on the left
through the truncated product; differentiating that action along weight-1
directions yields the horizontal frame that carries the cone's metric.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import grassmann, liealg, vfields
from .poly import Polynomial


class ConeError(ValueError):
    pass


def _exact_inverse(M):
    """Exact inverse of a square Fraction matrix (Gauss-Jordan)."""
    n = len(M)
    aug = [list(row) + [Fraction(int(i == j)) for j in range(n)]
           for i, row in enumerate(M)]
    for col in range(n):
        piv = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if piv is None:
            raise ConeError("splitting matrix is singular")
        aug[col], aug[piv] = aug[piv], aug[col]
        inv = 1 / aug[col][col]
        aug[col] = [x * inv for x in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [x - f * y for x, y in zip(aug[r], aug[col])]
    return [row[n:] for row in aug]


def _drop_first_var(p):
    """Re-index a polynomial that no longer involves variable 0."""
    terms = {}
    for exps, c in p.terms.items():
        if exps[0] != 0:
            raise ValueError("polynomial still involves variable 0")
        terms[exps[1:]] = c
    return Polynomial(p.num_vars - 1, terms)


def _snap_basis(basis, gap_tol=1e-7):
    """Row-echelon form of a subspace basis with entries snapped to small
    rationals, when that reproduces the same subspace.

    Limit subspaces arrive through SVDs, so a span as clean as
    {e2 - e3} carries 1e-16 noise that would otherwise leak into the exact
    splitting arithmetic and the frame polynomials."""
    n, k = basis.shape
    if k == 0:
        return [[] for _ in range(n)], basis
    R = basis.T.astype(float).copy()
    row = 0
    for col in range(n):
        if row == k:
            break
        piv = row + int(np.argmax(np.abs(R[row:, col])))
        if abs(R[piv, col]) < 1e-12:
            continue
        R[[row, piv]] = R[[piv, row]]
        R[row] = R[row] / R[row, col]
        for r in range(k):
            if r != row:
                R[r] = R[r] - R[r, col] * R[row]
        row += 1
    exact = [[Fraction(float(x)).limit_denominator(10 ** 6) for x in r]
             for r in R]
    snapped = np.array([[float(f) for f in r] for r in exact]).T
    try:
        cand = grassmann.Subspace.from_spanning(snapped, ambient_dim=n)
        orig = grassmann.Subspace.from_spanning(basis, ambient_dim=n)
        if cand.dim == orig.dim and \
                grassmann.gap_distance(cand, orig) < gap_tol:
            return [list(r) for r in zip(*exact)], snapped
    except (ValueError, ZeroDivisionError):
        pass
    return None, basis


def _bracket_closure(algebra, h):
    """Basis of the ideal generated by h: h plus iterated bracket images."""
    n = algebra.dim
    cur = h.basis
    while True:
        cols = [cur]
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1.0
            for j in range(cur.shape[1]):
                cols.append(np.asarray(
                    algebra.bracket_float(e, cur[:, j]), float).reshape(n, 1))
        nxt = grassmann.Subspace.from_spanning(
            np.hstack(cols), ambient_dim=n).basis
        if nxt.shape[1] == cur.shape[1]:
            return nxt
        cur = nxt


def _is_graded_subspace(algebra, h, tol=1e-9):
    if h.dim == 0:
        return True
    dilated = (2.0 ** np.asarray(algebra.weights, float))[:, None] * h.basis
    return grassmann.gap_distance(
        h, grassmann.Subspace.from_spanning(dilated, ambient_dim=algebra.dim)
    ) < tol


class TangentCone:
    """Homogeneous space G/H with canonical coset representatives in a
    coordinate complement S of h."""

    def __init__(self, algebra, h, expected_codim=None, tol=1e-8):
        report = liealg.is_subalgebra(algebra, h, tol=tol)
        if not report.ok:
            raise ConeError(f"not a subalgebra (residual {report.residual:.3e})")
        n = algebra.dim
        codim = n - h.dim
        if expected_codim is not None and codim != expected_codim:
            raise ConeError(
                f"codimension mismatch: h has codim {codim}, expected {expected_codim}"
            )
        self.algebra = algebra
        exact_rows, h_float = _snap_basis(h.basis)
        if exact_rows is not None and h.dim:
            h = grassmann.Subspace.from_spanning(h_float, ambient_dim=n)
        self.h = h
        self.h_basis = h_float
        self._h_exact_rows = exact_rows
        self.h_report = report
        self.dim_s = codim
        self.weight1_generators = tuple(
            i for i, w in enumerate(algebra.weights) if w == 1
        )
        # Complement S: greedy coordinate axes. Coordinates covering the
        # bracket ideal of h come first: corrections during coset
        # normalization then leave the h block immediately, which keeps the
        # normal form polynomial. A complement that traps a correction in a
        # feedback loop makes the normal form a power series instead; for a
        # non-graded h each candidate is validated symbolically before use.
        closure = _bracket_closure(algebra, h)
        defect = np.eye(n) - closure @ closure.T
        in_closure = [bool(np.linalg.norm(defect[:, i]) < 1e-9)
                      for i in range(n)]
        base_key = lambda i: (algebra.weights[i], i)
        orderings = [
            sorted(range(n), key=lambda i: (not in_closure[i],) + base_key(i)),
            sorted(range(n), key=base_key),
            sorted(range(n),
                   key=lambda i: (not in_closure[i], -algebra.weights[i], i)),
            sorted(range(n), key=lambda i: (-algebra.weights[i], i)),
        ]
        lazy = _is_graded_subspace(algebra, h)
        last_err = None
        for order in orderings:
            chosen = self._greedy_complement(order)
            if chosen is None:
                continue
            self._install_complement(chosen)
            if lazy:
                last_err = None
                break
            try:
                self.horizontal_frame_polynomials()
                last_err = None
                break
            except ConeError as err:
                last_err = err
                self._frame_polys = None
        if last_err is not None:
            raise last_err
        if not hasattr(self, "s_indices"):
            raise ConeError("could not complete a coordinate complement of h")

    def _greedy_complement(self, order):
        n = self.algebra.dim
        chosen = []
        base = self.h.basis
        rank = self.h.dim
        for i in order:
            if len(chosen) == self.dim_s:
                break
            cand = np.zeros((n, 1))
            cand[i, 0] = 1.0
            trial = np.hstack([base, cand])
            if np.linalg.matrix_rank(trial, tol=1e-10) > rank:
                base = trial
                rank += 1
                chosen.append(i)
        if len(chosen) != self.dim_s:
            return None
        return sorted(chosen)

    def _install_complement(self, chosen):
        n = self.algebra.dim
        self.s_indices = tuple(chosen)
        S = np.zeros((n, self.dim_s))
        for a, i in enumerate(chosen):
            S[i, a] = 1.0
        self.complement_basis = S
        # Exact splitting data: M = [S | H], inverted over the rationals so
        # the projector pair sums to the identity exactly.
        if self._h_exact_rows is not None:
            Hx = [list(row) for row in self._h_exact_rows]
        else:
            Hx = [[Fraction(float(self.h_basis[i, j]))
                   for j in range(self.h.dim)] for i in range(n)]
        M = [[Fraction(int(i == chosen[a])) for a in range(self.dim_s)]
             + Hx[i] for i in range(n)]
        Minv = _exact_inverse(M)
        self._minv_exact = Minv
        self._minv = np.array([[float(c) for c in row] for row in Minv])
        self._h_exact = Hx
        self._frame_polys = None
        self._jac_cache = None

    # -- coordinates --------------------------------------------------------

    def s_coords(self, vec):
        arr = np.asarray([float(c) for c in vec], dtype=float)
        return (self._minv @ arr)[: self.dim_s]

    def h_coords(self, vec):
        arr = np.asarray([float(c) for c in vec], dtype=float)
        return (self._minv @ arr)[self.dim_s:]

    def projector_h(self, vec):
        return self.h_basis @ self.h_coords(vec)

    def projector_s(self, vec):
        return self.complement_basis @ self.s_coords(vec)

    def vector_from_coords(self, coords):
        coords = np.asarray(coords, dtype=float)
        full = np.zeros(self.algebra.dim)
        full[list(self.s_indices)] = coords
        return self.algebra.vector(tuple(full))

    def point_from_coords(self, coords):
        return ConePoint(self, tuple(float(c) for c in coords))

    def base_point(self):
        return self.point_from_coords([0.0] * self.dim_s)

    def dilate_point(self, lam, p):
        """Graded dilation on the cone (S is spanned by coordinate axes, so
        it is dilation-invariant and acts diagonally on coordinates)."""
        if not lam > 0:
            raise ConeError("dilation parameter must be positive")
        ws = [self.algebra.weights[i] for i in self.s_indices]
        return self.point_from_coords(
            [c * float(lam) ** w for c, w in zip(p.coords, ws)]
        )

    # -- compiled group-law jacobians ---------------------------------------

    def _jacobians(self):
        if self._jac_cache is None:
            ju, jv = self.algebra.bch_jacobians()
            cu = [[p.compile() for p in row] for row in ju]
            cv = [[p.compile() for p in row] for row in jv]

            def ev(compiled, gvec, hvec):
                pt = np.concatenate([gvec, hvec])[None, :]
                n = self.algebra.dim
                return np.array([[compiled[i][j](pt)[0] for j in range(n)]
                                 for i in range(n)])

            self._jac_cache = (lambda g, h: ev(cu, g, h),
                               lambda g, h: ev(cv, g, h))
        return self._jac_cache

    # -- coset normal form ----------------------------------------------------

    def canonical_rep(self, g, tol=1e-12, max_iter=50):
        """Representative of the coset gH inside S, by Newton iteration on
        the h-component of the product g*h. Two starts must agree."""
        if isinstance(g, liealg.LieVector):
            if g.algebra is not self.algebra:
                raise ConeError("algebra mismatch")
            gvec = g.as_array()
        else:
            gvec = np.asarray(g, dtype=float)
        if self.h.dim == 0:
            return ConePoint(self, tuple(self.s_coords(gvec)))
        Hb = self.h_basis
        jac_u, jac_v = self._jacobians()

        def solve_from(c0):
            c = c0.copy()
            for _ in range(max_iter):
                prod = np.array([
                    float(x) for x in self.algebra.bch_coeffs(gvec, Hb @ c)
                ])
                F = self.h_coords(prod)
                if np.linalg.norm(F) <= tol:
                    return prod, c
                J = self._minv[self.dim_s:, :] @ jac_v(gvec, Hb @ c) @ Hb
                c = c - np.linalg.solve(J, F)
            raise ConeError(
                f"coset normal form did not converge (residual {np.linalg.norm(F):.3e})"
            )

        rep1, _ = solve_from(np.zeros(self.h.dim))
        rep2, _ = solve_from(-self.h_coords(gvec))
        if np.linalg.norm(rep1 - rep2) > 1e-10 * max(1.0, np.linalg.norm(rep1)):
            raise ConeError("coset representative ambiguous: starts disagree")
        return ConePoint(self, tuple(self.s_coords(rep1)))

    def left_translate(self, g, p):
        prod = self.algebra.bch_coeffs(
            g.as_array() if isinstance(g, liealg.LieVector) else np.asarray(g, float),
            p.vector().as_array(),
        )
        return self.canonical_rep(np.array([float(x) for x in prod]))

    # -- horizontal frame ------------------------------------------------------

    def horizontal_frame(self, p, method="implicit", fd_step=1e-6):
        """Frame vectors in S-coordinates: the derivative at 0 of
        eps -> canonical_rep((eps e) * p) for each weight-1 basis element."""
        svec = p.vector().as_array()
        n = self.algebra.dim
        if method == "fd":
            cols = []
            for e_idx in self.weight1_generators:
                evec = np.zeros(n)
                evec[e_idx] = 1.0

                def rep_at(eps):
                    w = np.array([
                        float(x)
                        for x in self.algebra.bch_coeffs(eps * evec, svec)
                    ])
                    return np.asarray(self.canonical_rep(w).coords)

                cols.append((rep_at(fd_step) - rep_at(-fd_step)) / (2 * fd_step))
            return [np.asarray(c) for c in cols]
        if method != "implicit":
            raise ValueError("method must be 'implicit' or 'fd'")
        jac_u, jac_v = self._jacobians()
        zero = np.zeros(n)
        Ju0 = jac_u(zero, svec)        # d(u*s)/du at u=0
        Jus = jac_u(svec, zero)        # d(w*h)/dw at (s, 0)
        Jvs = jac_v(svec, zero)        # d(w*h)/dh at (s, 0)
        rows_h = self._minv[self.dim_s:, :]
        cols = []
        for e_idx in self.weight1_generators:
            evec = np.zeros(n)
            evec[e_idx] = 1.0
            dw = Ju0 @ evec
            if self.h.dim:
                Jc = rows_h @ Jvs @ self.h_basis
                dc = -np.linalg.solve(Jc, rows_h @ Jus @ dw)
                drep = Jus @ dw + Jvs @ (self.h_basis @ dc)
            else:
                drep = Jus @ dw
            cols.append(drep[list(self.s_indices)])
        return cols

    def horizontal_frame_polynomials(self):
        """Exact frame: for each weight-1 basis element, the S-coordinate
        components as polynomials in the S-coordinates of the point."""
        if self._frame_polys is not None:
            return self._frame_polys
        n = self.algebra.dim
        k = self.dim_s
        nv = 1 + k  # variable 0 is the action parameter, then S coordinates
        svars = [Polynomial.variable(nv, 1 + a) for a in range(k)]
        svec = [Polynomial.zero(nv)] * n
        for a, i in enumerate(self.s_indices):
            svec = list(svec)
            svec[i] = svars[a]
        frames = []
        rows_h = self._minv_exact[self.dim_s:]
        for e_idx in self.weight1_generators:
            uvec = [Polynomial.zero(nv)] * n
            uvec[e_idx] = Polynomial.variable(nv, 0)
            w = self.algebra.bch_coeffs(uvec, svec)
            w = [x if isinstance(x, Polynomial) else Polynomial.const(nv, x)
                 for x in w]
            c = [Polynomial.zero(nv)] * self.h.dim
            for _ in range(2 * self.algebra.depth + 6):
                hvec = [sum((self._h_exact[i][j] * c[j] for j in range(self.h.dim)),
                            Polynomial.zero(nv)) for i in range(n)]
                prod = self.algebra.bch_coeffs(w, hvec)
                prod = [x if isinstance(x, Polynomial) else Polynomial.const(nv, x)
                        for x in prod]
                upd = [sum((rows_h[r][i] * prod[i] for i in range(n)),
                           Polynomial.zero(nv)) for r in range(self.h.dim)]
                if all(u.is_zero() for u in upd):
                    break
                c = [ci - ui for ci, ui in zip(c, upd)]
            else:
                worst = max(
                    (abs(float(cf)) for u in upd for cf in u.terms.values()),
                    default=0.0,
                )
                if worst > 1e-12:
                    raise ConeError("coset normal form did not stabilize symbolically")
            hvec = [sum((self._h_exact[i][j] * c[j] for j in range(self.h.dim)),
                        Polynomial.zero(nv)) for i in range(n)]
            rep = self.algebra.bch_coeffs(w, hvec)
            rep = [x if isinstance(x, Polynomial) else Polynomial.const(nv, x)
                   for x in rep]
            comps = []
            for i in self.s_indices:
                d = rep[i].diff(0).substitute(0, Fraction(0))
                comps.append(_drop_first_var(d))
            frames.append(tuple(comps))
        self._frame_polys = tuple(frames)
        return self._frame_polys

    def compiled_frame(self):
        """Float evaluator: points (m, dim_s) -> frame tensor (m, dim_s, #gen)."""
        polys = self.horizontal_frame_polynomials()
        evs = [[comp.compile() for comp in frame] for frame in polys]

        def ev(pts):
            pts = np.atleast_2d(np.asarray(pts, dtype=float))
            m = pts.shape[0]
            out = np.empty((m, self.dim_s, len(evs)))
            for a, frame in enumerate(evs):
                for i, comp in enumerate(frame):
                    out[:, i, a] = comp(pts)
            return out

        return ev

    def __repr__(self):
        return (f"TangentCone(dim_s={self.dim_s}, h_dim={self.h.dim}, "
                f"algebra_dim={self.algebra.dim})")


@dataclass(frozen=True)
class ConePoint:
    cone: TangentCone
    coords: tuple

    def __post_init__(self):
        if len(self.coords) != self.cone.dim_s:
            raise ConeError("cone point has wrong coordinate count")
        vec = self.cone.vector_from_coords(self.coords).as_array()
        resid = float(np.linalg.norm(self.cone.projector_h(vec)))
        if resid > 1e-10 * max(1.0, float(np.linalg.norm(vec))):
            raise ConeError(f"cone point leaves the complement (residual {resid:.3e})")

    def vector(self):
        return self.cone.vector_from_coords(self.coords)

    def __repr__(self):
        return f"ConePoint({np.round(np.asarray(self.coords), 12).tolist()})"


# --------------------------------------------------------------------------
# Module-level verbs.
# --------------------------------------------------------------------------


def build_cone(algebra, h, expected_codim=None, tol=1e-8):
    return TangentCone(algebra, h, expected_codim=expected_codim, tol=tol)


def canonical_rep(cone_, g):
    return cone_.canonical_rep(g)


def left_translate(cone_, g, p):
    return cone_.left_translate(g, p)


def horizontal_frame(cone_, p, method="implicit"):
    return cone_.horizontal_frame(p, method=method)


@dataclass(frozen=True)
class RxReport:
    ranks: tuple
    preimage: object  # Subspace
    point: tuple
    agreement_gap: float


def compute_rx(nmap, x, tol=1e-9):
    """Per-weight evaluation ranks at x and the preimage of the kernel of
    the graded evaluation map, built degree by degree: a weight-i basis
    combination belongs iff its field evaluates at x into the span of the
    evaluations of all lower-weight basis fields."""
    algebra = nmap.algebra
    x = np.asarray(x, dtype=float)
    M = vfields.natural_at(nmap, x, 1.0)
    weights = np.asarray(algebra.weights)
    n = algebra.dim
    m = nmap.structure.dim
    ranks = []
    parts = []
    Q_prev = np.zeros((m, 0))
    for i in range(1, algebra.depth + 1):
        le = np.where(weights <= i)[0]
        Mi = M[:, le]
        s = np.linalg.svd(Mi, compute_uv=False) if Mi.size else np.array([])
        ranks.append(int(np.sum(s > tol * max(s[0] if s.size else 0.0, 1e-300))))
        eq = np.where(weights == i)[0]
        if len(eq):
            A = M[:, eq]
            R = A - Q_prev @ (Q_prev.T @ A)
            null = grassmann.kernel(R, tol=tol)
            for col in range(null.dim):
                vec = np.zeros(n)
                vec[eq] = null.basis[:, col]
                parts.append(vec)
        if ranks[-1]:
            u, s2, _ = np.linalg.svd(Mi, full_matrices=False)
            Q_prev = u[:, : ranks[-1]]
    for a, b in zip(ranks, ranks[1:]):
        if b < a:
            raise ConeError("evaluation ranks decreased across degrees")
    if ranks[-1] != m:
        raise ConeError(f"Hörmander violated at x={tuple(float(c) for c in x)}")
    if parts:
        preimage = grassmann.Subspace.from_spanning(np.stack(parts, axis=1),
                                                    ambient_dim=n)
    else:
        preimage = grassmann.Subspace(np.zeros((n, 0)))
    limit = grassmann.graded_limit_fixed(
        grassmann.kernel(M, tol=tol), algebra.weights
    )
    gap = grassmann._gap_or_one(preimage, limit)
    if gap > 1e-8:
        raise ConeError(
            f"degreewise kernel disagrees with the dilation limit (gap {gap:.3e})"
        )
    return RxReport(ranks=tuple(ranks), preimage=preimage,
                    point=tuple(float(c) for c in x), agreement_gap=gap)
