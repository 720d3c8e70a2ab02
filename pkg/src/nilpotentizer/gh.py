"""Empirical pointed Gromov-Hausdorff convergence for blown-up structures.

The pipeline: sample a finite net in a ball of the candidate cone, push it
onto the manifold through the dilation chart at scale t, measure both
pairwise distance matrices, and record the worst paired discrepancy as t
shrinks. The chart is an explicit correspondence between the two nets, so
half the distortion plus the net fineness is an upper bound for the pointed
Gromov-Hausdorff distance between the cone ball and the rescaled manifold
ball. Only upper bounds come out of this; a generic correspondence search
is out of scope.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import qmc

from . import cone as cone_mod
from . import grassmann, metrics, vfields


class GHError(RuntimeError):
    pass


# Study solvers run hundreds of small endpoint problems; a shorter control
# grid than the single-distance default keeps the batch affordable, and the
# discretization bias cancels between the two matrices being compared (both
# sides of every distortion row are solved on the same grid).
STUDY_OPTS = metrics.SolverOptions(
    segments=10, substeps=1, multistarts=3, inner_maxiter=80,
    solver_tol=5e-3, seed=0)


@dataclass
class PointedNet:
    """Finite metric net in a pointed ball, with its distance matrix.

    points: (m, d) coordinates; row `base` is the base point. matrix holds
    pairwise distance upper bounds. fineness is the largest distance from a
    random probe set in the same ball to the net (estimated, conservative).
    controls keeps the solver controls for warm-starting later solves, and
    cone records the chart the points live in (None for manifold nets).
    """

    points: np.ndarray
    radius: float
    matrix: np.ndarray
    fineness: float
    base: int = 0
    cone: object = None
    controls: np.ndarray = None
    unconverged: int = 0

    def __post_init__(self):
        m = self.points.shape[0]
        if self.matrix.shape != (m, m):
            raise GHError("matrix shape does not match point count")
        if not 0 <= self.base < m:
            raise GHError("base index out of range")

    @property
    def size(self):
        return self.points.shape[0]


@dataclass
class StudyRow:
    t: float
    distortion: float
    gap: float
    net_size: int
    gh_bound: float
    unconverged_pairs: int = 0
    escaped: int = 0
    flagged: bool = False


@dataclass
class ConvergenceTable:
    rows: list
    slope: float
    fineness: float
    scenario: str = ""

    def __post_init__(self):
        ts = [r.t for r in self.rows]
        if any(b >= a for a, b in zip(ts, ts[1:])):
            raise GHError("schedule must be strictly decreasing")

    def to_csv(self, path):
        lines = ["t,D,gap,net_size,gh_bound"]
        for r in self.rows:
            lines.append(f"{r.t:.10g},{r.distortion:.10g},{r.gap:.10g},"
                         f"{r.net_size},{r.gh_bound:.10g}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def summary(self):
        return {
            "scenario": self.scenario,
            "slope": self.slope,
            "fineness": self.fineness,
            "final_distortion": self.rows[-1].distortion if self.rows else None,
            "flagged_rows": [r.t for r in self.rows if r.flagged],
            "rows": [
                {"t": r.t, "D": r.distortion, "gap": r.gap,
                 "net_size": r.net_size, "gh_bound": r.gh_bound,
                 "unconverged_pairs": r.unconverged_pairs,
                 "escaped": r.escaped}
                for r in self.rows
            ],
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=1)
            fh.write("\n")


def default_schedule(k_max=8, t0=0.2, ratio=0.5):
    return [t0 * ratio ** k for k in range(k_max)]


def _chart_weights(c):
    return np.array([c.algebra.weights[i] for i in c.s_indices], dtype=float)


def _quasi_norms(pts, weights):
    """Vectorized homogeneous quasi-norm of chart coordinate rows."""
    pts = np.atleast_2d(pts)
    out = np.zeros(pts.shape[0])
    for w in sorted(set(int(x) for x in weights)):
        block = pts[:, weights == w]
        b = np.linalg.norm(block, axis=1)
        out = np.maximum(out, b ** (1.0 / w))
    return out


def _axis_extents(pack, dim, R, weights, opts):
    """Per-axis, per-sign reach of the ball B(0,R) along chart axes.

    A ladder of magnitudes (cR)^w * 2^{-i} is solved in one batch for each
    signed axis; the extent is the largest ladder point still inside the
    ball. Path cones need this measured, not derived: their charts are not
    dilation-invariant, so no homogeneity shortcut applies, and a quasi-norm
    box can overshoot the true vertical reach by an order of magnitude."""
    ladder = [2.0 ** -i for i in range(6)]
    x0s, ys, owner = [], [], []
    for j in range(dim):
        for sign in (1.0, -1.0):
            for i, frac in enumerate(ladder):
                p = np.zeros(dim)
                p[j] = sign * (1.3 * R) ** weights[j] * frac
                x0s.append(np.zeros(dim))
                ys.append(p)
                owner.append((j, sign, i))
    res = metrics.solve_batch(pack, np.asarray(x0s), np.asarray(ys), opts)
    lo = np.zeros(dim)
    hi = np.zeros(dim)
    for (j, sign, i), v in zip(owner, res.values):
        if v <= R:
            mag = (1.3 * R) ** weights[j] * ladder[i]
            if sign > 0:
                hi[j] = max(hi[j], mag)
            else:
                lo[j] = max(lo[j], mag)
    smallest = [(1.3 * R) ** weights[j] * ladder[-1] * 0.5 for j in range(dim)]
    hi = np.maximum(hi, smallest)
    lo = np.maximum(lo, smallest)
    return lo, hi


def sample_ball_cone(c, R, n, seed, opts=None, box_factor=1.25,
                     filter_opts=None, probes_per_point=4):
    """Low-discrepancy net of n points (base included) in the cone ball B(0,R).

    The draw box is calibrated first: the ball's reach along each signed
    chart axis is measured, and Halton candidates are drawn from the box
    those extents span, stretched by box_factor. Candidates are kept when
    their extent-scaled quasi-norm is at most box_factor and their solved
    distance to the base is at most R. If fewer than n/2 candidates survive
    a budget of ~8n draws the box is enlarged once and the draw repeated;
    fewer than n/2 after that is an error.

    Fineness is estimated from 4n probe points drawn the same way: each
    probe is paired with the base and its nearest accepted points in the
    coordinate-difference quasi-norm, those few distances are solved, and
    the max over in-ball probes of the min solved distance is reported.
    Restricting the candidate set only overestimates the fineness, so the
    estimate stays on the safe side of any bound built from it.
    """
    if not R > 0:
        raise GHError("radius must be positive")
    if n < 2:
        raise GHError("need at least two net points")
    if opts is None:
        opts = STUDY_OPTS
    if filter_opts is None:
        filter_opts = replace(opts, multistarts=max(2, opts.multistarts // 2))
    pack = metrics.FieldPack.from_cone(c)
    dim = c.dim_s
    weights = _chart_weights(c)
    sampler = qmc.Halton(d=dim, seed=seed)
    base_pt = np.zeros(dim)

    ext_lo, ext_hi = _axis_extents(
        pack, dim, R, weights,
        replace(opts, multistarts=max(4, opts.multistarts)))

    def draw(m, factor):
        raw = sampler.random(m)
        lo = -factor ** weights * ext_lo
        hi = factor ** weights * ext_hi
        cand = lo[None, :] + raw * (hi - lo)[None, :]
        scaled = np.where(cand >= 0, cand / ext_hi[None, :],
                          -cand / ext_lo[None, :])
        return cand[_quasi_norms(scaled, weights) <= factor]

    need = n - 1
    accepted = []
    factor = box_factor
    for attempt in range(2):
        drawn = 0
        budget = 8 * n
        while drawn < budget and len(accepted) < need:
            m = min(budget - drawn, max(32, 2 * (need - len(accepted))))
            cand = draw(m, factor)
            drawn += m
            if cand.shape[0] == 0:
                continue
            res = metrics.solve_batch(
                pack, np.tile(base_pt, (cand.shape[0], 1)), cand, filter_opts)
            keep = res.values <= R
            accepted.extend(cand[keep])
        if len(accepted) >= need:
            break
        if attempt == 0 and len(accepted) < n // 2:
            factor *= 1.5
            continue
        break
    if len(accepted) < max(1, n // 2):
        raise GHError(
            f"ball sampling starved: {len(accepted)} of {need} candidates "
            f"accepted inside radius {R} (box factor {factor:.2f})")
    pts = np.vstack([base_pt] + [p for p in accepted[:need]])

    D, C, bad, _ = metrics.distance_matrix(pack, pts, opts)

    # fineness probes
    n_probes = probes_per_point * n
    probes = []
    drawn = 0
    while drawn < 4 * n_probes and len(probes) < n_probes:
        cand = draw(max(32, n_probes - len(probes)), factor)
        drawn += max(32, n_probes - len(probes))
        probes.extend(cand)
    probes = np.asarray(probes[:n_probes])
    fineness = 0.0
    if probes.shape[0]:
        # short probe-to-net hops converge from the straight start alone;
        # a missed one only inflates the fineness, which is the safe side
        probe_opts = replace(filter_opts, multistarts=1)
        x0s, ys, owner = [], [], []
        for pi, q in enumerate(probes):
            diffs = pts - q[None, :]
            qn = _quasi_norms(diffs, weights)
            order = [j for j in np.argsort(qn) if j != 0]
            targets = [0] + order[:2]
            for j in targets:
                x0s.append(q)
                ys.append(pts[j])
                owner.append((pi, j))
        res = metrics.solve_batch(pack, np.asarray(x0s), np.asarray(ys),
                                  probe_opts)
        per_probe = {}
        in_ball = {}
        for (pi, j), v in zip(owner, res.values):
            per_probe[pi] = min(per_probe.get(pi, np.inf), v)
            if j == 0:
                in_ball[pi] = v <= R
        vals = [per_probe[pi] for pi in per_probe if in_ball.get(pi, False)]
        if vals:
            fineness = float(max(vals))

    return PointedNet(points=pts, radius=R, matrix=D, fineness=fineness,
                      base=0, cone=c, controls=C, unconverged=bad)


def correspondence_map(nm, path, t, net, flow_tol=1e-11):
    """Push a cone net onto the manifold through the dilation chart at t.

    Each net point's chart coordinates are read as the coset representative
    v in the complement, and the image is the time-1 flow of the t-dilated
    realization of v started at path.point(t). Returns (points, escaped):
    rows of points are manifold coordinates, rows listed in escaped hold
    NaN because the flow blew past the integration guard.
    """
    c = net.cone
    if c is None:
        raise GHError("net carries no cone chart to map from")
    x_t = np.asarray(path.point(t), dtype=float)
    m = net.size
    out = np.full((m, nm.structure.dim), np.nan)
    escaped = []
    for i in range(m):
        v = c.vector_from_coords(net.points[i])
        fld = vfields.natural_t(nm, v, t)
        try:
            y = vfields.flow(fld, x_t, time=1.0, tol=flow_tol)
        except vfields.FlowEscapedError:
            escaped.append(i)
            continue
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > 1e8:
            escaped.append(i)
            continue
        out[i] = y
    return out, escaped


def distortion(net_a, net_b, pairing=None):
    """Worst paired distance discrepancy between two nets.

    pairing maps indices of net_a to indices of net_b (identity when
    omitted) and must send base to base; the base row is part of the max.
    """
    if net_a.size != net_b.size:
        raise GHError(f"net sizes differ: {net_a.size} vs {net_b.size}")
    if pairing is None:
        pairing = np.arange(net_a.size)
    pairing = np.asarray(pairing, dtype=int)
    if sorted(pairing.tolist()) != list(range(net_b.size)):
        raise GHError("pairing is not a bijection")
    if pairing[net_a.base] != net_b.base:
        raise GHError("pairing must map base to base")
    M = net_b.matrix[np.ix_(pairing, pairing)]
    return float(np.max(np.abs(net_a.matrix - M)))


def _image_scales(cloud):
    """Constraint weights from the spread of the image cloud.

    At scale t the chart squeezes coordinate j like t^{w_j}; weighting the
    endpoint constraint by the reciprocal spread keeps the solve conditioned
    uniformly in t."""
    std = cloud.std(axis=0)
    floor = max(float(std.max()), 1e-12) * 1e-9
    w = 1.0 / np.maximum(std, floor)
    return w / w.min()


def study_subspace(nm, path):
    """Limit subspace a convergence study should compare against.

    Constant paths use the graded germ at the point; moving paths use the
    limit of the inverse-dilated kernels along the path."""
    probe = np.asarray(path.point(path.t0), dtype=float)
    again = np.asarray(path.point(path.t0 * path.rho), dtype=float)
    if np.allclose(probe, again):
        return cone_mod.compute_rx(nm, probe).preimage
    S, diag = grassmann.limit_along_path(nm, path)
    if not diag.converged:
        raise grassmann.ConvergenceError(
            f"path {path.name!r} did not settle on a limit subspace")
    return S


def convergence_study(nm, S, path, R=1.0, n=30, schedule=None, seed=0,
                      opts=None, flow_tol=1e-11, scenario="",
                      svd_tol=1e-9, verbose=False):
    """Distortion table for the blow-up along a path against its cone.

    S is the limit subspace of the dilated kernels along the path (from
    grassmann.limit_along_path); the cone is built once from it. For each
    t in the schedule the net is mapped through the chart, manifold
    distances at scale t are computed as (distance at scale 1)/t, and the
    row records the distortion, the kernel gap at that t, and the bound
    distortion/2 + fineness. Rows with more than 10% unconverged pairs or
    any escaped flow are flagged. The fitted log-log slope of D against t
    is descriptive only.
    """
    if schedule is None:
        schedule = default_schedule()
    schedule = [float(t) for t in schedule]
    if any(b >= a for a, b in zip(schedule, schedule[1:])) or \
            any(t <= 0 for t in schedule):
        raise GHError("schedule must be positive and strictly decreasing")
    if opts is None:
        opts = STUDY_OPTS

    c = cone_mod.build_cone(nm.algebra, S)
    net = sample_ball_cone(c, R, n, seed, opts=opts)
    pack_m = metrics.manifold_pack(nm.structure)
    alg_weights = nm.algebra.weights

    rows = []
    prev_controls = None
    prev_keep = None
    for k, t_k in enumerate(schedule):
        images, escaped = correspondence_map(nm, path, t_k, net,
                                             flow_tol=flow_tol)
        keep = [i for i in range(net.size) if i not in escaped]
        if 0 not in keep:
            raise GHError(f"base point escaped at t={t_k:g}")
        cloud = images[keep]
        wgt = _image_scales(cloud)

        if k == 0 or prev_controls is None:
            warm = t_k * net.controls[np.ix_(keep, keep)]
        elif keep == prev_keep:
            warm = 0.5 * prev_controls
        else:
            warm = None
        # the cascaded warm start carries the whole optimum from the scale
        # above, so each row runs a single start per pair; the repair and
        # rescue passes inside distance_matrix guard the cascade
        row_opts = opts if warm is None else replace(opts, multistarts=1)
        D1, C1, bad, _ = metrics.distance_matrix(
            pack_m, cloud, row_opts, warm=warm, state_scale=wgt)
        prev_controls, prev_keep = C1, keep

        sub = net.matrix[np.ix_(keep, keep)]
        cone_net = PointedNet(points=net.points[keep], radius=net.radius,
                              matrix=sub, fineness=net.fineness, base=0)
        mani_net = PointedNet(points=cloud, radius=net.radius,
                              matrix=D1 / t_k, fineness=float("nan"), base=0)
        d_k = distortion(cone_net, mani_net)

        ker = grassmann.kernel(nm.eval_columns(np.asarray(path.point(t_k))),
                               tol=svd_tol)
        try:
            gap = grassmann.gap_distance(
                grassmann.dilate_subspace(1.0 / t_k, ker, alg_weights), S)
        except ValueError:
            gap = float("nan")

        npairs = len(keep) * (len(keep) - 1) // 2
        flagged = bool(escaped) or (npairs > 0 and bad > 0.1 * npairs) \
            or not np.isfinite(gap)
        rows.append(StudyRow(t=t_k, distortion=d_k, gap=gap,
                             net_size=len(keep),
                             gh_bound=d_k / 2.0 + net.fineness,
                             unconverged_pairs=bad, escaped=len(escaped),
                             flagged=flagged))
        if verbose:
            print(f"  t={t_k:.6g} D={d_k:.6f} gap={gap:.2e} "
                  f"bad={bad} escaped={len(escaped)}")

    ds = np.array([max(r.distortion, 1e-16) for r in rows])
    ts = np.array([r.t for r in rows])
    slope = float(np.polyfit(np.log(ts), np.log(ds), 1)[0]) \
        if len(rows) >= 2 else float("nan")
    return ConvergenceTable(rows=rows, slope=slope, fineness=net.fineness,
                            scenario=scenario)
