"""Subspaces of a graded algebra and their dilation limits.

Kernels of the pointwise realization map live on a Grassmannian; scaling a
kernel by the inverse graded dilation and following a curve x(t) as t -> 0
produces the limit subspaces that determine tangent cones. This module
provides the subspace type, the dilation action, the gap metric, the exact
limit of a fixed subspace under dilation, and Cauchy-detected limits along
approach paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import liealg, vfields


class ConvergenceError(RuntimeError):
    def __init__(self, message, gaps=()):
        super().__init__(message)
        self.gaps = tuple(gaps)


class Subspace:
    """Linear subspace of R^n stored as an orthonormal column basis."""

    __slots__ = ("ambient_dim", "basis", "tol")

    def __init__(self, basis, tol=1e-12):
        basis = np.asarray(basis, dtype=float)
        if basis.ndim != 2:
            raise ValueError("basis must be a 2d column matrix")
        n, k = basis.shape
        if k > n:
            raise ValueError("more basis columns than ambient dimensions")
        if k:
            g = basis.T @ basis
            if np.max(np.abs(g - np.eye(k))) > 1e-12:
                raise ValueError("basis columns are not orthonormal to 1e-12")
        object.__setattr__(self, "ambient_dim", n)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "tol", float(tol))

    def __setattr__(self, *a):
        raise AttributeError("Subspace is immutable")

    @staticmethod
    def from_spanning(vectors, ambient_dim=None, tol=1e-12, rank_tol=1e-9):
        """Orthonormalize a spanning set (columns or list of vectors)."""
        A = np.asarray(vectors, dtype=float)
        if A.ndim == 1:
            A = A[:, None]
        if A.size == 0:
            n = ambient_dim if ambient_dim is not None else A.shape[0]
            return Subspace(np.zeros((n, 0)), tol=tol)
        norms = np.linalg.norm(A, axis=0)
        keep = norms > 0
        A = A[:, keep] / norms[keep]
        if A.shape[1] == 0:
            return Subspace(np.zeros((A.shape[0], 0)), tol=tol)
        u, s, _ = np.linalg.svd(A, full_matrices=False)
        rank = int(np.sum(s > rank_tol * s[0]))
        return Subspace(u[:, :rank], tol=tol)

    @property
    def dim(self):
        return self.basis.shape[1]

    def projector(self):
        return self.basis @ self.basis.T

    def project(self, v):
        v = np.asarray(v, dtype=float)
        return self.basis @ (self.basis.T @ v)

    def residual(self, v):
        """Norm of the component of v outside the subspace."""
        v = np.asarray(v, dtype=float)
        return float(np.linalg.norm(v - self.project(v)))

    def contains(self, v, tol=None):
        v = np.asarray(v, dtype=float)
        nv = np.linalg.norm(v)
        if nv == 0:
            return True
        return self.residual(v) <= (tol if tol is not None else self.tol) * max(nv, 1.0)

    def to_json_dict(self):
        return {
            "ambient_dim": self.ambient_dim,
            "dim": self.dim,
            "basis": self.basis.tolist(),
        }

    def __repr__(self):
        return f"Subspace(dim={self.dim} of R^{self.ambient_dim})"


def kernel(A, tol=1e-9):
    """Null space of a matrix as a Subspace; singular values below
    tol * sigma_max count as zero."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m, n = A.shape
    if n == 0:
        return Subspace(np.zeros((0, 0)))
    if not np.any(A):
        return Subspace(np.eye(n))
    _, s, vt = np.linalg.svd(A)
    rank = int(np.sum(s > tol * s[0]))
    return Subspace(vt[rank:].T)


def dilate_subspace(lam, S, weights):
    """Image of S under the graded dilation with parameter lam."""
    if not lam > 0:
        raise ValueError("dilation parameter must be positive")
    weights = np.asarray(weights)
    if len(weights) != S.ambient_dim:
        raise ValueError("weights length must match ambient dimension")
    scale = np.power(float(lam), weights.astype(float))
    return Subspace.from_spanning(S.basis * scale[:, None], ambient_dim=S.ambient_dim)


def gap_distance(S1, S2):
    """Sine of the largest principal angle between equidimensional subspaces."""
    if S1.ambient_dim != S2.ambient_dim:
        raise ValueError("ambient dimension mismatch")
    if S1.dim != S2.dim:
        raise ValueError("subspace dimension mismatch")
    if S1.dim == 0:
        return 0.0
    # Residual form (I - P2) B1: its largest singular value is sin(theta_max)
    # directly, with no cancellation for nearly equal subspaces.  The cosine
    # form sqrt(1 - smin^2) bottoms out near sqrt(machine eps).
    resid = S1.basis - S2.basis @ (S2.basis.T @ S1.basis)
    s = np.linalg.svd(resid, compute_uv=False)
    return float(np.clip(s.max(), 0.0, 1.0))


def _gap_or_one(S1, S2):
    if S1.dim != S2.dim:
        return 1.0
    return gap_distance(S1, S2)


def graded_limit_fixed(S, weights, tol=1e-9):
    """Limit of dilate_subspace(1/t, S) as t -> 0+.

    Computed per weight w: intersect S with the span of coordinates of
    weight <= w, project onto the weight-w coordinates, and collect the
    pieces (weighted leading-term echelonization).
    """
    weights = np.asarray(weights)
    n, k = S.basis.shape
    if len(weights) != n:
        raise ValueError("weights length must match ambient dimension")
    if k == 0:
        return S
    B = S.basis
    parts = []
    prev_null = 0
    for w in sorted(set(int(x) for x in weights)):
        rows_w = np.where(weights == w)[0]
        high = np.where(weights > w)[0]
        if len(high):
            M = B[high, :]
            _, s, vt = np.linalg.svd(M, full_matrices=True)
            rank = int(np.sum(s > tol * max(s[0] if len(s) else 0.0, 1e-300)))
            null = vt[rank:].T  # (k, m_w)
        else:
            null = np.eye(k)
        m_w = null.shape[1]
        count = m_w - prev_null
        prev_null = m_w
        if count <= 0:
            continue
        P = np.zeros((n, m_w))
        P[rows_w, :] = B[np.ix_(rows_w, range(k))] @ null
        u, s, _ = np.linalg.svd(P, full_matrices=False)
        parts.append(u[:, :count])
    if not parts:
        return Subspace(np.zeros((n, 0)))
    basis = np.hstack(parts)
    return Subspace.from_spanning(basis, ambient_dim=n)


def conjugate_subspace(g, S):
    """Image of S under the group conjugation v -> g^{-1} v g."""
    algebra = g.algebra
    if S.ambient_dim != algebra.dim:
        raise ValueError("subspace ambient dimension must equal algebra dim")
    cols = [
        np.array([float(c) for c in algebra.conjugate_coeffs(g.coeffs, S.basis[:, i])])
        for i in range(S.dim)
    ]
    if not cols:
        return S
    return Subspace.from_spanning(np.stack(cols, axis=1), ambient_dim=S.ambient_dim)


@dataclass(frozen=True)
class ApproachPath:
    """Curve t -> x(t) with a geometric evaluation schedule t0 * rho^k."""

    name: str
    point: object  # callable t -> sequence of floats
    t0: float = 0.1
    rho: float = 0.5
    max_steps: int = 40

    def __post_init__(self):
        if not self.t0 > 0:
            raise ValueError("t0 must be positive")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.max_steps < 3:
            raise ValueError("need at least 3 schedule points")

    def schedule(self):
        return [self.t0 * self.rho**k for k in range(self.max_steps + 1)]

    @staticmethod
    def constant(x, name="constant", **kw):
        x = tuple(float(c) for c in x)
        return ApproachPath(name=name, point=lambda t: x, **kw)


@dataclass(frozen=True)
class PathDiagnostics:
    rows: tuple  # (k, t_k, gap to previous or nan)
    converged: bool
    subalgebra_residual: float


def limit_along_path(nmap, path, gap_tol=1e-7, consecutive=3,
                     svd_tol=1e-9, subalgebra_tol=1e-8):
    """Limit of the inverse-dilated kernels of the realization along a path.

    At each schedule point t_k: S_k = dilate_subspace(1/t_k, kernel at
    x(t_k)). Convergence is declared when `consecutive` successive gaps fall
    below gap_tol; the limit must be a subalgebra.
    """
    algebra = nmap.algebra
    rows = []
    prev = None
    current = None
    streak = 0
    converged = False
    for k, t in enumerate(path.schedule()):
        x = np.asarray(path.point(t), dtype=float)
        K = kernel(vfields.natural_at(nmap, x, 1.0), tol=svd_tol)
        current = dilate_subspace(1.0 / t, K, algebra.weights)
        gap = float("nan") if prev is None else _gap_or_one(prev, current)
        rows.append((k, t, gap))
        if prev is not None and gap < gap_tol:
            streak += 1
            if streak >= consecutive:
                converged = True
                break
        elif prev is not None:
            streak = 0
        prev = current
    gaps = [g for _, _, g in rows if not np.isnan(g)]
    if not converged:
        raise ConvergenceError(
            "no convergence detected (gaps: "
            + ", ".join(f"{g:.3e}" for g in gaps[-6:]) + ")",
            gaps=gaps,
        )
    report = liealg.is_subalgebra(algebra, current, tol=subalgebra_tol)
    if not report.ok:
        raise ConvergenceError(
            f"path limit is not a subalgebra (residual {report.residual:.3e})",
            gaps=gaps,
        )
    return current, PathDiagnostics(rows=tuple(rows), converged=True,
                                    subalgebra_residual=report.residual)
