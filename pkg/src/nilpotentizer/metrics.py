"""Carnot-Carathéodory distance upper bounds and quasi-norms.

Distances are estimated by direct transcription: piecewise-constant controls
on the weight-1 fields, fixed-substep RK4 dynamics, an energy objective, and
an augmented-Lagrangian treatment of the endpoint constraint, with
deterministic multistarts. Gradients come from a hand-written adjoint sweep
of the RK4 graph, so solves can be batched across many endpoint pairs at
once. Scaled-time distances use the exact identity d_t = d_1 / t.

Quasi-norms minimize the graded max-norm subject to reaching y by the flow
of a dilated algebra element (epigraph formulation), or over a coset at the
t = 0 boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from . import vfields


@dataclass(frozen=True)
class SolverOptions:
    segments: int = 24
    substeps: int = 4
    multistarts: int = 8
    outer_iters: int = 6
    rho0: float = 50.0
    rho_growth: float = 10.0
    inner_maxiter: int = 100
    endpoint_tol: float = 1e-6
    solver_tol: float = 1e-3
    seed: int = 0


DEFAULT_OPTIONS = SolverOptions()


class _PackedPolys:
    """All components of a field matrix evaluated in two numpy ops.

    Collects the terms of every polynomial into one exponent table, builds
    the monomial matrix once per point batch, and scatters through a dense
    coefficient matrix. Removes the per-polynomial call overhead that
    dominates tiny-field integrations."""

    def __init__(self, polys, num_vars):
        self.n_out = len(polys)
        self.num_vars = num_vars
        expo_index = {}
        coef_rows = []
        for out_idx, p in enumerate(polys):
            for expo, c in p.terms.items():
                key = tuple(expo)
                if key not in expo_index:
                    expo_index[key] = len(expo_index)
                coef_rows.append((expo_index[key], out_idx, float(c)))
        self.expo = np.array(sorted(expo_index, key=expo_index.get),
                             dtype=np.int64).reshape(len(expo_index), num_vars)
        self.wmat = np.zeros((len(expo_index), self.n_out))
        for t, o, c in coef_rows:
            self.wmat[t, o] += c

    def __call__(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.expo.shape[0] == 0:
            return np.zeros((pts.shape[0], self.n_out))
        mono = np.prod(pts[:, None, :] ** self.expo[None, :, :], axis=2)
        return mono @ self.wmat


class FieldPack:
    """Compiled control system: dx/ds = F(x) u with F an (n x d1) field
    matrix, plus the Gram matrix of the control inner product."""

    def __init__(self, dim, d1, ev_f, ev_j, gram):
        self.dim = dim
        self.d1 = d1
        self.ev_f = ev_f      # (B, n) -> (B, n, d1)
        self.ev_j = ev_j      # (B, n) -> (B, n, d1, n)
        self.gram = np.asarray(gram, dtype=float)

    @staticmethod
    def _from_poly_grid(grid, dim, d1, gram):
        """grid[a][i] is the i-th component of field a (Polynomial in dim
        variables)."""
        flat_f = [grid[a][i] for i in range(dim) for a in range(d1)]
        packed_f = _PackedPolys(flat_f, dim)
        flat_j = [grid[a][i].diff(j)
                  for i in range(dim) for a in range(d1) for j in range(dim)]
        packed_j = _PackedPolys(flat_j, dim)
        packed_fj = _PackedPolys(flat_f + flat_j, dim)
        nf = len(flat_f)

        def ev_f(pts):
            out = packed_f(pts)
            return out.reshape(out.shape[0], dim, d1)

        def ev_j(pts):
            out = packed_j(pts)
            return out.reshape(out.shape[0], dim, d1, dim)

        g = np.eye(d1) if gram is None else np.asarray(gram, dtype=float)
        fp = FieldPack(dim, d1, ev_f, ev_j, g)

        def ev_fj(pts):
            out = packed_fj(pts)
            b = out.shape[0]
            return (out[:, :nf].reshape(b, dim, d1),
                    out[:, nf:].reshape(b, dim, d1, dim))

        fp.ev_fj = ev_fj
        return fp

    @staticmethod
    def from_vector_fields(fields, gram=None):
        fields = list(fields)
        dim = fields[0].dim
        grid = [list(f.components) for f in fields]
        return FieldPack._from_poly_grid(grid, dim, len(fields), gram)

    @staticmethod
    def from_cone(cone_, gram=None):
        polys = cone_.horizontal_frame_polynomials()
        grid = [list(frame) for frame in polys]
        return FieldPack._from_poly_grid(grid, cone_.dim_s, len(polys), gram)


def _forward(pack, x0, U, substeps, tape=None):
    """RK4 integration of dx/ds = F(x) u over [0, 1].

    x0: (B, n); U: (B, K, d1). Returns final states (B, n). When `tape` is a
    list, stage field and Jacobian values needed by the adjoint sweep are
    appended per step."""
    B, K, d1 = U.shape
    M = K * substeps
    h = 1.0 / M
    x = x0.copy()
    if tape is None:
        for m in range(M):
            u = U[:, m // substeps, :]
            k1 = np.einsum("bia,ba->bi", pack.ev_f(x), u)
            k2 = np.einsum("bia,ba->bi", pack.ev_f(x + 0.5 * h * k1), u)
            k3 = np.einsum("bia,ba->bi", pack.ev_f(x + 0.5 * h * k2), u)
            k4 = np.einsum("bia,ba->bi", pack.ev_f(x + h * k3), u)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return x
    for m in range(M):
        u = U[:, m // substeps, :]
        F1, J1 = pack.ev_fj(x)
        k1 = np.einsum("bia,ba->bi", F1, u)
        F2, J2 = pack.ev_fj(x + 0.5 * h * k1)
        k2 = np.einsum("bia,ba->bi", F2, u)
        F3, J3 = pack.ev_fj(x + 0.5 * h * k2)
        k3 = np.einsum("bia,ba->bi", F3, u)
        F4, J4 = pack.ev_fj(x + h * k3)
        k4 = np.einsum("bia,ba->bi", F4, u)
        tape.append((np.stack((F1, F2, F3, F4), axis=1),
                     np.stack((J1, J2, J3, J4), axis=1)))
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def _objective_and_grad(pack, x0, ys, U, substeps, lam, rho, wgt=None):
    """Augmented-Lagrangian value per problem and gradient wrt controls.

    rho: scalar or per-problem (B,) penalty weights. wgt: optional (B, n)
    positive weights applied to the endpoint constraint per coordinate;
    anisotropic charts leave the constraint Jacobian with rows of wildly
    different magnitude, and weighting restores a usable conditioning.
    Returns (per-problem objective (B,), gradient (B, K, d1), weighted
    defect (B, n))."""
    B, K, d1 = U.shape
    M = K * substeps
    h = 1.0 / M
    ds = 1.0 / K
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (B,))
    tape = []
    xM = _forward(pack, x0, U, substeps, tape=tape)
    defect = xM - ys
    if wgt is not None:
        defect = defect * wgt
    Gu = U @ pack.gram.T
    energy = ds * np.einsum("bka,bka->b", U, Gu)
    obj = energy + np.einsum("bi,bi->b", lam, defect) \
        + 0.5 * rho * np.einsum("bi,bi->b", defect, defect)
    grad = 2.0 * ds * Gu
    a = lam + rho[:, None] * defect
    if wgt is not None:
        a = a * wgt
    for m in range(M - 1, -1, -1):
        Fst, Jst = tape[m]
        u = U[:, m // substeps, :]
        Ju = np.einsum("bsiaj,ba->bsij", Jst, u)
        a4 = (h / 6.0) * a
        a3 = (2 * h / 6.0) * a + h * np.einsum("bij,bi->bj", Ju[:, 3], a4)
        a2 = (2 * h / 6.0) * a \
            + 0.5 * h * np.einsum("bij,bi->bj", Ju[:, 2], a3)
        a1 = (h / 6.0) * a + 0.5 * h * np.einsum("bij,bi->bj", Ju[:, 1], a2)
        astack = np.stack((a1, a2, a3, a4), axis=1)
        grad[:, m // substeps, :] += np.einsum("bsia,bsi->ba", Fst, astack)
        a = a + np.einsum("bsij,bsi->bj", Ju, astack)
    return obj, grad, defect


def _batched_lbfgs(fun, z0, maxiter=100, mem=8, gtol=1e-11, ftol=1e-13):
    """Limited-memory quasi-Newton descent run independently per block.

    fun(Z, idx) -> (f (b,), g (b, D)) for the blocks selected by idx. Each
    block keeps its own curvature history and line-search step, so one
    stiff problem cannot stall the rest of the batch; all evaluations stay
    vectorized, and finished blocks are compacted out of the working set."""
    B_total, D = z0.shape
    Z_out = z0.copy()
    idx = np.arange(B_total)
    Z = z0.copy()
    f, g = fun(Z, idx)
    f_out, g_out = f.copy(), g.copy()
    hist_s, hist_y, hist_r = [], [], []
    done = np.zeros(B_total, dtype=bool)
    stall_count = np.zeros(B_total, dtype=int)
    for _ in range(maxiter):
        B = Z.shape[0]
        gnorm = np.abs(g).max(axis=1)
        done |= gnorm <= gtol * np.maximum(1.0, np.abs(f))
        if bool(done.all()):
            break
        if done.mean() > 0.5:
            fin = done
            Z_out[idx[fin]] = Z[fin]
            f_out[idx[fin]] = f[fin]
            g_out[idx[fin]] = g[fin]
            keep = ~done
            idx, Z, f, g = idx[keep], Z[keep], f[keep], g[keep]
            hist_s = [h[keep] for h in hist_s]
            hist_y = [h[keep] for h in hist_y]
            hist_r = [h[keep] for h in hist_r]
            stall_count = stall_count[keep]
            done = np.zeros(Z.shape[0], dtype=bool)
            B = Z.shape[0]
        q = g.copy()
        alphas = []
        for s_k, y_k, r_k in zip(reversed(hist_s), reversed(hist_y),
                                 reversed(hist_r)):
            a = r_k * np.einsum("bd,bd->b", s_k, q)
            q -= a[:, None] * y_k
            alphas.append(a)
        if hist_r:
            yy = np.einsum("bd,bd->b", hist_y[-1], hist_y[-1])
            valid = hist_r[-1] > 0
            gamma = np.where(valid & (yy > 0),
                             1.0 / np.maximum(hist_r[-1] * yy, 1e-300), 1.0)
            q *= np.clip(gamma, 1e-8, 1e8)[:, None]
        for (s_k, y_k, r_k), a in zip(
                zip(hist_s, hist_y, hist_r), reversed(alphas)):
            b = r_k * np.einsum("bd,bd->b", y_k, q)
            q += (a - b)[:, None] * s_k
        d = -q
        gd = np.einsum("bd,bd->b", g, d)
        bad = gd >= 0
        if np.any(bad):
            d[bad] = -g[bad]
            gd[bad] = -np.einsum("bd,bd->b", g[bad], g[bad])
        step = np.where(done, 0.0, 1.0)
        accepted = done.copy()
        Z_new, f_new, g_new = Z.copy(), f.copy(), g.copy()
        for _bt in range(25):
            trial = Z + step[:, None] * d
            ft, gt = fun(trial, idx)
            ok = (~accepted) & (ft <= f + 1e-4 * step * gd) & np.isfinite(ft)
            Z_new[ok] = trial[ok]
            f_new[ok] = ft[ok]
            g_new[ok] = gt[ok]
            accepted |= ok
            if bool(accepted.all()):
                break
            step = np.where(accepted, step, step * 0.5)
            if float(step[~accepted].max(initial=0.0)) < 1e-14:
                break
        done |= ~accepted
        s_vec = Z_new - Z
        y_vec = g_new - g
        sy = np.einsum("bd,bd->b", s_vec, y_vec)
        ss = np.einsum("bd,bd->b", s_vec, s_vec)
        yy = np.einsum("bd,bd->b", y_vec, y_vec)
        valid = (sy > 1e-10 * np.sqrt(np.maximum(ss * yy, 0.0))) & accepted \
            & ~done
        rho = np.where(valid, 1.0 / np.where(sy > 0, sy, 1.0), 0.0)
        hist_s.append(s_vec)
        hist_y.append(y_vec)
        hist_r.append(rho)
        if len(hist_s) > mem:
            hist_s.pop(0)
            hist_y.pop(0)
            hist_r.pop(0)
        small = np.abs(f - f_new) <= ftol * np.maximum(1.0, np.abs(f))
        stall_count = np.where(small, stall_count + 1, 0)
        done |= stall_count >= 3
        Z, f, g = Z_new, f_new, g_new
    Z_out[idx] = Z
    f_out[idx] = f
    g_out[idx] = g
    return Z_out, f_out, g_out


def control_length(pack, U):
    """Control-norm integral per problem: sum_k |u_k|_G * ds."""
    K = U.shape[1]
    Gu = U @ pack.gram.T
    seg = np.sqrt(np.maximum(np.einsum("bka,bka->bk", U, Gu), 0.0))
    return seg.sum(axis=1) / K


def reintegrate(pack, x0, U, substeps=None, with_trajectory=False):
    """Re-run the dynamics for stored controls (certification helper).

    x0: (n,) or (B, n); U matching (K, d1) or (B, K, d1). Returns final
    states, or the full (M+1, n) state trajectory for a single problem."""
    substeps = substeps if substeps is not None else DEFAULT_OPTIONS.substeps
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    U = np.asarray(U, dtype=float)
    if U.ndim == 2:
        U = U[None, :, :]
    if not with_trajectory:
        return _forward(pack, x0, U, substeps)
    K = U.shape[1]
    M = K * substeps
    h = 1.0 / M
    xs = np.empty((M + 1, x0.shape[1]))
    xs[0] = x0[0]
    x = x0[0].copy()
    for m in range(M):
        u = U[0, m // substeps, :]
        k1 = pack.ev_f(x[None, :])[0] @ u
        k2 = pack.ev_f((x + 0.5 * h * k1)[None, :])[0] @ u
        k3 = pack.ev_f((x + 0.5 * h * k2)[None, :])[0] @ u
        k4 = pack.ev_f((x + h * k3)[None, :])[0] @ u
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        xs[m + 1] = x
    return xs


@dataclass
class BatchResult:
    values: np.ndarray          # (B,) control-norm integrals of best controls
    controls: np.ndarray        # (B, K, d1)
    residuals: np.ndarray       # (B,) endpoint defect norms
    statuses: list              # per problem: "converged" / "unconverged"
    history: list               # per restart: (B,) best-so-far values


def solve_batch(pack, x0s, ys, opts=DEFAULT_OPTIONS, warm=None,
                state_scale=None):
    """Minimize path energy for B endpoint problems simultaneously.

    x0s, ys: (B, n). warm: optional (B, K, d1) controls used as the first
    start (replacing one noise start). All multistarts are stacked into one
    augmented-Lagrangian solve; independent problems have block-diagonal
    gradients, so a joint quasi-Newton run leaves them uncoupled.

    state_scale: optional (n,) or (B, n) positive weights for the endpoint
    constraint. Near a singular point the coordinates reachable only via
    brackets shrink much faster than the horizontal ones, and an unweighted
    constraint either ignores the small coordinates or stalls on them.
    Residuals and tolerances are measured in the weighted coordinates.

    endpoint_tol is relative to the endpoint separation (floored at 1e-4):
    an absolute tolerance lets the solver trade away a fixed defect, which
    at small separations is worth a finite fraction of the distance."""
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    B, n = x0s.shape
    if state_scale is None:
        wgt = None
        ep_scale = np.maximum(np.linalg.norm(ys - x0s, axis=1), 1e-4)
    else:
        wgt = np.broadcast_to(
            np.asarray(state_scale, dtype=float), (B, n)).copy()
        ep_scale = np.maximum(
            np.linalg.norm((ys - x0s) * wgt, axis=1), 1e-4)
    K, d1 = opts.segments, pack.d1
    S = opts.multistarts
    rng = np.random.default_rng(opts.seed)

    F0 = pack.ev_f(x0s)
    straight = np.empty((B, d1))
    for b in range(B):
        straight[b] = np.linalg.lstsq(F0[b], ys[b] - x0s[b], rcond=None)[0]
    base = np.repeat(straight[:, None, :], K, axis=1)

    scale = np.maximum(
        np.linalg.norm(base, axis=(1, 2), keepdims=True) / np.sqrt(K), 0.5)
    mags = [0.5, 1.0, 2.0, 0.75, 1.5, 3.0, 0.5]
    grid = (np.arange(K) + 0.5) / K
    modes = np.stack([np.cos(np.pi * f * grid) for f in (1, 2, 3)]
                     + [np.sin(np.pi * f * grid) for f in (1, 2)])  # (5, K)
    starts = []
    for s in range(S):
        if s == 0:
            starts.append(warm.copy() if warm is not None else base.copy())
        elif s == 1 and warm is not None:
            starts.append(base.copy())
        else:
            # smooth low-frequency perturbations reach curved optima that
            # white noise at this resolution cannot
            coeff = rng.standard_normal((B, modes.shape[0], d1))
            bump = np.einsum("bfa,fk->bka", coeff, modes) / np.sqrt(modes.shape[0])
            mag = mags[(s - 1) % len(mags)]
            starts.append(base + scale * mag * bump)
    U = np.concatenate(starts, axis=0)          # (S*B, K, d1)
    x0_full = np.tile(x0s, (S, 1))
    ys_full = np.tile(ys, (S, 1))
    wgt_full = None if wgt is None else np.tile(wgt, (S, 1))

    def _weighted(d):
        return d if wgt_full is None else d * wgt_full

    # Scale the initial penalty to the straight-line defect so that closing
    # a large gap is always cheaper than ignoring it; a flat small penalty
    # lets the energy term pull every start back to u = 0.
    defect0 = np.linalg.norm(_weighted(
        _forward(pack, x0_full, np.tile(base, (S, 1, 1)), opts.substeps)
        - ys_full), axis=1)
    rho = opts.rho0 * np.clip(1.0 / np.maximum(defect0, 1e-4), 1.0, 1e4)
    lam = np.zeros((S * B, n))
    for outer in range(opts.outer_iters):
        def fun(Z, idx):
            Uz = Z.reshape(len(idx), K, d1)
            obj, grad, _ = _objective_and_grad(
                pack, x0_full[idx], ys_full[idx], Uz, opts.substeps,
                lam[idx], rho[idx],
                None if wgt_full is None else wgt_full[idx])
            return obj, grad.reshape(len(idx), K * d1)

        # loose gradient tolerance early; only the final outers need the
        # endpoint pinned down to full precision
        gtol = max(1e-11, 1e-5 * 0.03 ** outer)
        Z, _, _ = _batched_lbfgs(fun, U.reshape(S * B, K * d1),
                                 maxiter=opts.inner_maxiter, gtol=gtol)
        U = Z.reshape(S * B, K, d1)
        defect = _weighted(_forward(pack, x0_full, U, opts.substeps)
                           - ys_full)
        lam = lam + rho[:, None] * defect
        rho = np.minimum(rho * opts.rho_growth, 1e7)
        # stop once every problem has at least one start inside a safety
        # margin of the endpoint tolerance; remaining outers only polish
        # starts that lost the selection anyway
        per_start = np.linalg.norm(defect, axis=1).reshape(S, B)
        if outer >= 1 and np.all(per_start.min(axis=0)
                                 <= 0.2 * opts.endpoint_tol * ep_scale):
            break
        if outer < opts.outer_iters - 1:
            # restart blocks that fell into the zero-control stationary
            # point while still far from the target
            resid_now = np.linalg.norm(defect, axis=1)
            stuck = (np.abs(U).max(axis=(1, 2)) < 1e-8) & \
                (resid_now > opts.endpoint_tol * np.tile(ep_scale, S))
            if np.any(stuck):
                ns = int(stuck.sum())
                coeff = rng.standard_normal((ns, modes.shape[0], d1))
                bump = np.einsum("bfa,fk->bka", coeff, modes) \
                    / np.sqrt(modes.shape[0])
                U[stuck] = 1.5 * np.maximum(
                    resid_now[stuck, None, None] ** 0.5, 0.5) * bump
                lam[stuck] = 0.0

    resid = np.linalg.norm(defect, axis=1).reshape(S, B)
    vals = control_length(pack, U).reshape(S, B)
    controls = U.reshape(S, B, K, d1)
    feas = resid <= opts.endpoint_tol * ep_scale[None, :]

    history = []
    best_vals = np.full(B, np.inf)
    best_idx = np.full(B, -1)
    any_res = np.full(B, np.inf)
    any_idx = np.zeros(B, dtype=int)
    for s in range(S):
        better = feas[s] & (vals[s] < best_vals)
        best_vals[better] = vals[s][better]
        best_idx[better] = s
        closer = resid[s] < any_res
        any_res[closer] = resid[s][closer]
        any_idx[closer] = s
        snapshot = np.where(np.isfinite(best_vals), best_vals,
                            vals[any_idx, np.arange(B)])
        history.append(snapshot.copy())

    values = np.empty(B)
    out_controls = np.empty((B, K, d1))
    residuals = np.empty(B)
    statuses = []
    for b in range(B):
        if best_idx[b] >= 0:
            s = int(best_idx[b])
            statuses.append("converged")
        else:
            s = int(any_idx[b])
            statuses.append("unconverged")
        values[b] = vals[s, b]
        out_controls[b] = controls[s, b]
        residuals[b] = resid[s, b]
    return BatchResult(values=values, controls=out_controls,
                       residuals=residuals, statuses=statuses,
                       history=history)


@dataclass(frozen=True)
class DistanceResult:
    value: float
    controls: np.ndarray
    trajectory: np.ndarray
    history: tuple
    status: str
    residual: float

    def to_json_dict(self):
        return {
            "value": self.value,
            "status": self.status,
            "residual": self.residual,
            "restarts": len(self.history),
        }


def _single_result(pack, x0, result, opts, scale=1.0):
    traj = reintegrate(pack, np.asarray(x0, float), result.controls[0],
                       substeps=opts.substeps, with_trajectory=True)
    return DistanceResult(
        value=float(result.values[0]) * scale,
        controls=result.controls[0] * scale,
        trajectory=traj,
        history=tuple(float(h[0]) * scale for h in result.history),
        status=result.statuses[0],
        residual=float(result.residuals[0]),
    )


def manifold_pack(structure):
    fields = [f for f, w in structure.generators if w == 1]
    return FieldPack.from_vector_fields(
        fields, gram=structure.gram_matrix(len(fields)))


def cc_distance_manifold(structure, x, y, t=1.0, opts=DEFAULT_OPTIONS):
    """Distance upper bound at scale t. Solved once at t = 1; the value at
    scale t is d_1 / t exactly and the controls scale accordingly."""
    if not t > 0:
        raise ValueError("t must be positive")
    pack = manifold_pack(structure)
    res = solve_batch(pack, np.asarray(x, float)[None, :],
                      np.asarray(y, float)[None, :], opts)
    return _single_result(pack, x, res, opts, scale=1.0 / float(t))


def cc_distance_cone(cone_, p, q, opts=DEFAULT_OPTIONS, pack=None, gram=None):
    """Distance upper bound between two cone points (S-coordinates)."""
    if pack is None:
        pack = FieldPack.from_cone(cone_, gram=gram)
    res = solve_batch(pack, np.asarray(p.coords, float)[None, :],
                      np.asarray(q.coords, float)[None, :], opts)
    return _single_result(pack, p.coords, res, opts)


def _concat_controls(u1, u2):
    """Double-speed concatenation of two K-segment controls into one.

    The combined control traverses the first path on [0, 1/2] and the
    second on [1/2, 1]; each new segment takes the integral average of the
    compressed schedule, so the summed length is preserved up to the
    piecewise resampling error."""
    K = u1.shape[0]
    full = np.concatenate([u1, u2], axis=0)          # 2K segments on [0, 1]
    cum = np.concatenate([np.zeros((1, full.shape[1])),
                          np.cumsum(full, axis=0)]) / (2 * K)

    def integral(t):
        f = np.clip(t, 0.0, 1.0) * 2 * K
        lo = min(int(f), 2 * K - 1)
        return cum[lo] + (f - lo) * full[lo] / (2 * K)

    bounds = np.stack([integral(m / K) for m in range(K + 1)])
    return np.diff(bounds, axis=0) * 2 * K


def distance_matrix(pack, points, opts=DEFAULT_OPTIONS, warm=None,
                    chunk_blocks=1024, repair_sweeps=2, state_scale=None):
    """Symmetric matrix of pairwise distance upper bounds.

    points: (m, n). warm: optional (m, m, K, d1) controls from a previous
    scale. Pairs are solved in chunks of at most chunk_blocks stacked
    problems (pairs times multistarts) to bound memory and let finished
    blocks retire early.

    Entries that violate the triangle inequality by more than the
    discretization margin are re-solved warm-started from the double-speed
    concatenation of the two shorter legs; a missed optimum on a hard pair
    shows up as exactly such a violation. Pairs still unconverged after the
    sweeps get one cold re-solve with a shifted seed and extra starts.
    Returns (matrix, controls (m, m, K, d1), unconverged count, converged
    (m, m) bool mask)."""
    points = np.asarray(points, dtype=float)
    m = points.shape[0]
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    D = np.zeros((m, m))
    C = np.zeros((m, m, opts.segments, pack.d1))
    St = np.ones((m, m), dtype=bool)
    if not pairs:
        return D, C, 0, St
    per_chunk = max(1, chunk_blocks // max(1, opts.multistarts))
    for lo in range(0, len(pairs), per_chunk):
        chunk = pairs[lo:lo + per_chunk]
        x0s = np.stack([points[i] for i, _ in chunk])
        ys = np.stack([points[j] for _, j in chunk])
        w = None
        if warm is not None:
            w = np.stack([warm[i, j] for i, j in chunk])
        res = solve_batch(pack, x0s, ys, opts, warm=w,
                          state_scale=state_scale)
        for (i, j), v, u, st in zip(chunk, res.values, res.controls,
                                    res.statuses):
            D[i, j] = D[j, i] = v
            C[i, j] = u
            C[j, i] = -u[::-1]
            St[i, j] = St[j, i] = st == "converged"
    # triangle-violation margin in the units of this matrix; the points of
    # a late blow-up row sit a factor t closer than the cone net they mirror
    off = D[np.triu_indices(m, 1)]
    mscale = float(np.median(off[off > 0])) if np.any(off > 0) else 1.0
    margin = max(5e-3, 5.0 * opts.solver_tol) * max(mscale, 1e-12)
    for _ in range(repair_sweeps):
        through = D[:, :, None] + D[None, :, :]
        via = through.min(axis=1)
        argvia = through.argmin(axis=1)
        offenders = [(i, j) for i, j in pairs if D[i, j] - via[i, j] > margin]
        if not offenders:
            break
        x0s = np.stack([points[i] for i, _ in offenders])
        ys = np.stack([points[j] for _, j in offenders])
        w = np.stack([
            _concat_controls(C[i, argvia[i, j]], C[argvia[i, j], j])
            for i, j in offenders])
        res = solve_batch(pack, x0s, ys, opts, warm=w,
                          state_scale=state_scale)
        for (i, j), v, u, st in zip(offenders, res.values, res.controls,
                                    res.statuses):
            if st == "converged" and v < D[i, j]:
                D[i, j] = D[j, i] = v
                C[i, j] = u
                C[j, i] = -u[::-1]
                St[i, j] = St[j, i] = True
    stuck = [(i, j) for i, j in pairs if not St[i, j]]
    if stuck:
        rescue_opts = replace(opts, seed=opts.seed + 7919,
                              multistarts=opts.multistarts + 2)
        x0s = np.stack([points[i] for i, _ in stuck])
        ys = np.stack([points[j] for _, j in stuck])
        w = np.stack([C[i, j] for i, j in stuck])
        res = solve_batch(pack, x0s, ys, rescue_opts, warm=w,
                          state_scale=state_scale)
        for (i, j), v, u, st in zip(stuck, res.values, res.controls,
                                    res.statuses):
            if st == "converged":
                D[i, j] = D[j, i] = v
                C[i, j] = u
                C[j, i] = -u[::-1]
                St[i, j] = St[j, i] = True
    bad = int(len(pairs) - sum(St[i, j] for i, j in pairs))
    return D, C, bad, St


def point_to_set_distances(pack, sources, targets, opts=DEFAULT_OPTIONS,
                           chunk_blocks=1024, state_scale=None):
    """Distance upper bounds from each source to each target."""
    sources = np.atleast_2d(np.asarray(sources, float))
    targets = np.atleast_2d(np.asarray(targets, float))
    ns, nt = sources.shape[0], targets.shape[0]
    x0s = np.repeat(sources, nt, axis=0)
    ys = np.tile(targets, (ns, 1))
    per_chunk = max(1, chunk_blocks // max(1, opts.multistarts))
    vals = np.empty(ns * nt)
    statuses = []
    for lo in range(0, ns * nt, per_chunk):
        res = solve_batch(pack, x0s[lo:lo + per_chunk],
                          ys[lo:lo + per_chunk], opts,
                          state_scale=state_scale)
        vals[lo:lo + per_chunk] = res.values
        statuses.extend(res.statuses)
    return vals.reshape(ns, nt), statuses


# --------------------------------------------------------------------------
# Groupoid points, quasi-norms, comparison scan.
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupoidPoint:
    """Either a positive-scale point (y, x, t) or a boundary point (cone
    point over x at t = 0)."""

    x: tuple
    t: float
    y: tuple = None
    cone: object = None
    p: object = None

    @staticmethod
    def at_scale(y, x, t):
        if not t > 0:
            raise ValueError("t must be positive on the manifold branch")
        return GroupoidPoint(x=tuple(map(float, x)), t=float(t),
                             y=tuple(map(float, y)))

    @staticmethod
    def boundary(cone_, p, x):
        return GroupoidPoint(x=tuple(map(float, x)), t=0.0, cone=cone_, p=p)

    def debord_skandalis(self, lam):
        """The scaling action: fixes points, divides the scale by lam."""
        if not lam > 0:
            raise ValueError("lam must be positive")
        if self.t > 0:
            return GroupoidPoint.at_scale(self.y, self.x, self.t / lam)
        return GroupoidPoint.boundary(self.cone,
                                      self.cone.dilate_point(lam, self.p),
                                      self.x)


def groupoid_distance(structure, gp, opts=DEFAULT_OPTIONS):
    """d(y, x) at scale t for interior points; cone distance to the base
    point on the boundary."""
    if gp.t > 0:
        return cc_distance_manifold(structure, gp.x, gp.y, gp.t, opts).value
    cone_ = gp.cone
    return cc_distance_cone(cone_, cone_.base_point(), gp.p, opts).value


@dataclass(frozen=True)
class QuasiNormResult:
    value: float
    minimizer: tuple
    residual: float
    status: str


def _flow_endpoint(nmap, vcoeffs, x, t, steps=64):
    """Fixed-step RK4 endpoint of the dilated element's flow (float path)."""
    weights = np.asarray(nmap.algebra.weights, dtype=float)
    scaled = np.asarray(vcoeffs, dtype=float) * np.power(float(t), weights)
    cols = nmap.eval_columns_many  # (B, n, dim_g)
    x = np.asarray(x, dtype=float)
    h = 1.0 / steps
    z = x.copy()
    for _ in range(steps):
        k1 = cols(z[None, :])[0] @ scaled
        k2 = cols((z + 0.5 * h * k1)[None, :])[0] @ scaled
        k3 = cols((z + 0.5 * h * k2)[None, :])[0] @ scaled
        k4 = cols((z + h * k3)[None, :])[0] @ scaled
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return z


def quasi_norm_element(nmap, gp, opts=DEFAULT_OPTIONS, multistarts=4):
    """Minimal quasi-norm of an algebra element carrying x to y at scale t;
    on the boundary, minimal quasi-norm over the coset of the cone point.

    Epigraph form: minimize s subject to |v_w|^2 <= s^(2w) per weight w,
    plus the endpoint (or coset) constraint."""
    algebra = nmap.algebra
    n = algebra.dim
    wblocks = sorted(algebra.weight_indices.items())
    if gp.t > 0:
        x = np.asarray(gp.x, float)
        y = np.asarray(gp.y, float)
        M = vfields.natural_at(nmap, x, gp.t)
        v0 = np.linalg.lstsq(M, y - x, rcond=None)[0]

        def endpoint(v):
            return _flow_endpoint(nmap, v, x, gp.t) - y

        rng = np.random.default_rng(opts.seed)
        best = None
        for start in range(multistarts):
            v_init = v0 if start == 0 else v0 + 0.3 * rng.standard_normal(n) \
                * max(1.0, np.linalg.norm(v0))
            s_init = algebra.quasi_norm_coeffs(v_init) + 1e-3
            z0 = np.concatenate([[s_init], v_init])
            cons = [{"type": "eq", "fun": lambda z: endpoint(z[1:])}]
            for w, idx in wblocks:
                cons.append({
                    "type": "ineq",
                    "fun": (lambda z, w=w, idx=list(idx):
                            z[0] ** (2 * w) - float(np.sum(z[1:][idx] ** 2))),
                })
            cons.append({"type": "ineq", "fun": lambda z: z[0]})
            res = minimize(lambda z: z[0], z0, method="SLSQP",
                           constraints=cons,
                           options={"maxiter": 200, "ftol": 1e-12})
            v = res.x[1:]
            resid = float(np.linalg.norm(endpoint(v)))
            val = algebra.quasi_norm_coeffs(v)
            if resid <= opts.endpoint_tol and (best is None or val < best[0]):
                best = (val, v, resid)
        if best is None:
            return QuasiNormResult(value=float("inf"), minimizer=(float("nan"),) * n,
                                   residual=float("inf"), status="possibly infinite")
        return QuasiNormResult(value=float(best[0]),
                               minimizer=tuple(map(float, best[1])),
                               residual=best[2], status="converged")

    # Boundary branch: minimize over the coset rep * h.
    cone_ = gp.cone
    rep = gp.p.vector().as_array()
    Hb = cone_.h.basis
    kh = Hb.shape[1]

    def vec_of(c):
        return np.array([
            float(x) for x in algebra.bch_coeffs(rep, Hb @ c)
        ]) if kh else rep

    if kh == 0:
        v = rep
        return QuasiNormResult(value=algebra.quasi_norm_coeffs(v),
                               minimizer=tuple(map(float, v)),
                               residual=0.0, status="converged")
    z0 = np.concatenate([[algebra.quasi_norm_coeffs(rep) + 1e-3], np.zeros(kh)])
    cons = []
    for w, idx in wblocks:
        cons.append({
            "type": "ineq",
            "fun": (lambda z, w=w, idx=list(idx):
                    z[0] ** (2 * w) - float(np.sum(vec_of(z[1:])[idx] ** 2))),
        })
    cons.append({"type": "ineq", "fun": lambda z: z[0]})
    res = minimize(lambda z: z[0], z0, method="SLSQP", constraints=cons,
                   options={"maxiter": 300, "ftol": 1e-12})
    v = vec_of(res.x[1:])
    return QuasiNormResult(value=algebra.quasi_norm_coeffs(v),
                           minimizer=tuple(map(float, v)),
                           residual=0.0,
                           status="converged" if res.success else "stalled")


@dataclass(frozen=True)
class ComparisonReport:
    c_hat: float
    per_decade: tuple       # (t_decade_top, c_hat within that decade)
    ratios: tuple           # (t, ratio) pairs
    excluded: int
    drift: float            # relative drift of c_hat across two finest decades


def comparison_ratio_scan(nmap, structure, region, samples=24,
                          t_grid=None, opts=DEFAULT_OPTIONS, seed=0):
    """Empirical two-sided comparison of quasi-norm and distance.

    region: (low, high) box corners for base points x. Pairs are generated
    by flowing random small elements, so they stay reachable."""
    if t_grid is None:
        t_grid = [10 ** (-k / 3.0) for k in range(1, 10)]
    rng = np.random.default_rng(seed)
    low = np.asarray(region[0], float)
    high = np.asarray(region[1], float)
    n = nmap.algebra.dim
    ratios = []
    excluded = 0
    for t in t_grid:
        for _ in range(max(1, samples // len(t_grid))):
            x = low + rng.random(len(low)) * (high - low)
            v = rng.standard_normal(n) * 0.4
            y = _flow_endpoint(nmap, v, x, t)
            if np.linalg.norm(y - x) < 1e-12:
                excluded += 1
                continue
            qn = quasi_norm_element(
                nmap, GroupoidPoint.at_scale(y, x, t), opts, multistarts=2)
            if qn.status != "converged":
                excluded += 1
                continue
            dist = cc_distance_manifold(structure, x, y, t, opts)
            if dist.status != "converged" or dist.value <= 0 or qn.value <= 0:
                excluded += 1
                continue
            ratios.append((float(t), float(qn.value / dist.value)))
    if not ratios:
        raise RuntimeError("comparison scan produced no usable samples")
    c_of = lambda rs: max(max(r, 1.0 / r) for r in rs)
    decades = {}
    for t, r in ratios:
        key = int(np.floor(np.log10(t)))
        decades.setdefault(key, []).append(r)
    per_decade = tuple(sorted(
        (10.0 ** (k + 1), c_of(rs)) for k, rs in decades.items()
    ))
    finest = sorted(decades.keys())[:2]
    if len(finest) == 2:
        c1, c2 = c_of(decades[finest[0]]), c_of(decades[finest[1]])
        drift = abs(c1 - c2) / max(c1, c2)
    else:
        drift = 0.0
    return ComparisonReport(
        c_hat=c_of([r for _, r in ratios]),
        per_decade=per_decade,
        ratios=tuple(ratios),
        excluded=excluded,
        drift=float(drift),
    )
