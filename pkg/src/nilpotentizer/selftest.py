"""Built-in acceptance checks, runnable as `nilpotentizer selftest`.

Each criterion function exercises one advertised guarantee of the package
on the bundled example structures and returns a CriterionResult with a
pass flag, a short measurement summary, and its wall time.  The test
suite calls the same functions, so every tolerance lives here once.
"""

from __future__ import annotations

import math
import random
import sys
import time
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache

import numpy as np

from . import cone, gh, grassmann, liealg, metrics, scenarios, vfields

__all__ = ["CriterionResult", "CRITERIA", "run_all"]


@dataclass(frozen=True)
class CriterionResult:
    index: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"[{self.index:2d}] {tag}  {self.name}: {self.detail} ({self.seconds:.1f}s)"


@lru_cache(maxsize=None)
def _cfg(name):
    return scenarios.builtin(name)


@lru_cache(maxsize=None)
def _nm(name):
    return _cfg(name).natural_map()


def _span(cols):
    arr = np.array(cols, dtype=float).T
    return grassmann.Subspace.from_spanning(arr)


# -- criterion 1: classification of Grushin path limits ---------------------

_LAMBDAS = (0.0, 1.0, -1.0, 2.0)


def _lambda_limit_expected(dim, lam):
    if dim == 3:
        return _span([[0.0, 1.0, -lam]])
    return _span([
        [0.0, 0.0, 1.0, -lam, 0.0],
        [0.0, 1.0, 0.0, -0.5 * lam * lam, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
    ])


def _sqrt_limit_expected(dim):
    if dim == 3:
        return _span([[0.0, 0.0, 1.0]])
    return _span([
        [0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
    ])


@lru_cache(maxsize=None)
def _path_limit_rows():
    """(structure, label, limit, diagnostics, gap to expected) for every
    classified Grushin path."""
    rows = []
    for name in ("grushin2", "grushin3"):
        nm = _nm(name)
        dim = nm.algebra.dim
        for lam in _LAMBDAS:
            path = grassmann.ApproachPath(
                name=f"({lam}*t, 0)",
                point=lambda t, lam=lam: (lam * t, 0.0),
            )
            S, diag = grassmann.limit_along_path(nm, path)
            gap = grassmann.gap_distance(S, _lambda_limit_expected(dim, lam))
            rows.append((name, f"lam={lam}", S, diag, gap))
        sqrt_path = grassmann.ApproachPath(
            name="(sqrt(t), 0)",
            point=lambda t: (math.sqrt(t), 0.0),
            max_steps=60,
        )
        S, diag = grassmann.limit_along_path(nm, sqrt_path)
        gap = grassmann.gap_distance(S, _sqrt_limit_expected(dim))
        rows.append((name, "sqrt", S, diag, gap))
    return tuple(rows)


def c01_path_limit_classification():
    t0 = time.perf_counter()
    rows = _path_limit_rows()
    worst = max(gap for *_, gap in rows)
    all_converged = all(diag.converged for _, _, _, diag, _ in rows)
    secs = time.perf_counter() - t0
    passed = worst <= 1e-6 and all_converged and secs < 10.0
    detail = (f"{len(rows)} paths, worst gap to expected limit {worst:.2e}"
              f" (tol 1e-06), all converged={all_converged}")
    return CriterionResult(1, "Grushin path-limit classification", passed,
                           detail, secs)


# -- criterion 2: fixed-point graded limits agree with the rank filtration --

@lru_cache(maxsize=None)
def _fixed_point_rows():
    rows = []
    grid = np.linspace(-1.0, 1.0, 5)
    for name in ("grushin2", "grushin3"):
        nm = _nm(name)
        weights = nm.algebra.weights
        for a in grid:
            for b in grid:
                x = np.array([a, b])
                K = grassmann.kernel(nm.eval_columns(x))
                G = grassmann.graded_limit_fixed(K, weights)
                R = cone.compute_rx(nm, x)
                gap = grassmann.gap_distance(G, R.preimage)
                rows.append((name, (float(a), float(b)), G, gap))
    return tuple(rows)


def c02_fixed_point_consistency():
    t0 = time.perf_counter()
    rows = _fixed_point_rows()
    worst = max(gap for *_, gap in rows)
    secs = time.perf_counter() - t0
    passed = worst <= 1e-8 and secs < 5.0
    detail = (f"{len(rows)} grid points on two structures, worst gap "
              f"{worst:.2e} (tol 1e-08)")
    return CriterionResult(2, "fixed-point kernel consistency", passed,
                           detail, secs)


# -- criterion 3: every limit subspace is a subalgebra ----------------------

def c03_limits_are_subalgebras():
    t0 = time.perf_counter()
    worst = 0.0
    count = 0
    for name, _, S, _, _ in _path_limit_rows():
        rep = liealg.is_subalgebra(_nm(name).algebra, S)
        worst = max(worst, rep.residual)
        count += 1
    for name, _, G, _ in _fixed_point_rows():
        rep = liealg.is_subalgebra(_nm(name).algebra, G)
        worst = max(worst, rep.residual)
        count += 1
    secs = time.perf_counter() - t0
    passed = worst <= 1e-8
    detail = f"{count} limit subspaces, worst bracket residual {worst:.2e} (tol 1e-08)"
    return CriterionResult(3, "limit subspaces close under brackets", passed,
                           detail, secs)


# -- criterion 4: base-point shifts act by conjugation ----------------------

def c04_shift_conjugation():
    t0 = time.perf_counter()
    nm = _nm("grushin2")
    alg = nm.algebra
    h_ref = next(S for nm_name, label, S, _, _ in _path_limit_rows()
                 if nm_name == "grushin2" and label == "lam=1.0")
    worst = 0.0
    for idx, gname in ((0, "e1"), (1, "e2")):
        coeffs = [0.0] * alg.dim
        coeffs[idx] = 1.0
        gvec = alg.vector(tuple(coeffs))

        def shifted(t, gvec=gvec):
            fld = vfields.natural_t(nm, gvec, t)
            return tuple(vfields.flow(fld, np.array([t, 0.0]),
                                      time=1.0, tol=1e-12))

        path = grassmann.ApproachPath(name=f"shifted by {gname}", point=shifted)
        S, diag = grassmann.limit_along_path(nm, path)
        expected = grassmann.conjugate_subspace(gvec, h_ref)
        gap = grassmann.gap_distance(S, expected)
        worst = max(worst, gap)
        if not diag.converged:
            worst = max(worst, 1.0)
    secs = time.perf_counter() - t0
    passed = worst <= 1e-5
    detail = f"shifts by e1, e2; worst gap to conjugated limit {worst:.2e} (tol 1e-05)"
    return CriterionResult(4, "shifted paths limit to conjugates", passed,
                           detail, secs)


# -- criterion 5: exact group-law identities in rational arithmetic ---------

def c05_exact_group_identities():
    t0 = time.perf_counter()
    rnd = random.Random(2026)
    algebras = (liealg.free_nilpotent(2, (1, 1), 2),
                liealg.free_nilpotent(2, (1, 1), 3))

    def rvec(alg):
        return alg.vector(tuple(
            Fraction(rnd.randint(-3, 3), rnd.randint(1, 4))
            for _ in range(alg.dim)))

    failures = 0
    trials = 0
    for alg in algebras:
        for _ in range(100):
            a, b, c = rvec(alg), rvec(alg), rvec(alg)
            ab = liealg.bch_product(a, b)
            assoc_l = liealg.bch_product(ab, c)
            assoc_r = liealg.bch_product(a, liealg.bch_product(b, c))
            if assoc_l.coeffs != assoc_r.coeffs:
                failures += 1
            for lam in (Fraction(2), Fraction(3, 2)):
                lhs = liealg.dilate(lam, ab)
                rhs = liealg.bch_product(liealg.dilate(lam, a),
                                         liealg.dilate(lam, b))
                if lhs.coeffs != rhs.coeffs:
                    failures += 1
            conj_ab = liealg.adjoint_conjugate(c, ab)
            conj_sep = liealg.bch_product(liealg.adjoint_conjugate(c, a),
                                          liealg.adjoint_conjugate(c, b))
            if conj_ab.coeffs != conj_sep.coeffs:
                failures += 1
            trials += 4
    secs = time.perf_counter() - t0
    passed = failures == 0 and secs < 5.0
    detail = (f"{trials} exact identities on two free algebras, "
              f"{failures} failures, required exact equality")
    return CriterionResult(5, "group law exact identities", passed,
                           detail, secs)


# -- criterion 6: flow composition matches the group product ----------------

def c06_flow_composition_decay():
    t0 = time.perf_counter()
    floor = 1e-11
    worst_detail = []
    passed = True
    for name, order in (("grushin2", 2), ("heisenberg", 2)):
        cfg = _cfg(name)
        nm = _nm(name)
        alg = nm.algebra
        rng = np.random.default_rng(66)
        max_defect = 0.0
        min_slope = math.inf
        noise_runs = 0
        for _ in range(20):
            v = alg.vector(tuple(rng.uniform(-0.6, 0.6, alg.dim)))
            w = alg.vector(tuple(rng.uniform(-0.6, 0.6, alg.dim)))
            x = rng.uniform(-0.8, 0.8, cfg.dim)
            vw = liealg.bch_product(v, w)
            ts, ds = [], []
            for k in range(3, 11):
                t = 2.0 ** -k
                y = vfields.flow(vfields.natural_t(nm, w, t), x, tol=1e-12)
                z = vfields.flow(vfields.natural_t(nm, v, t), y, tol=1e-12)
                zz = vfields.flow(vfields.natural_t(nm, vw, t), x, tol=1e-12)
                ts.append(t)
                ds.append(float(np.linalg.norm(z - zz)))
            max_defect = max(max_defect, max(ds))
            above = [(math.log(t), math.log(d))
                     for t, d in zip(ts, ds) if d > floor]
            if len(above) <= 2:
                noise_runs += 1
                continue
            slope = np.polyfit([p[0] for p in above],
                               [p[1] for p in above], 1)[0]
            min_slope = min(min_slope, slope)
            if slope < order + 0.5:
                passed = False
        slope_txt = "n/a" if min_slope is math.inf else f"{min_slope:.2f}"
        worst_detail.append(
            f"{name}: max defect {max_defect:.1e}, {noise_runs}/20 at noise "
            f"floor, min slope {slope_txt}")
    secs = time.perf_counter() - t0
    if secs >= 30.0:
        passed = False
    detail = "; ".join(worst_detail)
    return CriterionResult(6, "flow composition decay order", passed,
                           detail, secs)


# -- criterion 7: integrator against closed-form flows ----------------------

def c07_closed_form_flows():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0

    nm2 = _nm("grushin2")
    alg2 = nm2.algebra
    for _ in range(100):
        a, b, c = rng.uniform(-1.0, 1.0, 3)
        x0, y0 = rng.uniform(-1.0, 1.0, 2)
        t = float(rng.uniform(0.05, 1.2))
        v = alg2.vector((a, b, c))
        z = vfields.flow(vfields.natural_t(nm2, v, t),
                         np.array([x0, y0]), tol=1e-12)
        want = np.array([
            x0 + t * a,
            y0 + t * b * x0 + t * t * (a * b / 2.0 + c),
        ])
        worst = max(worst, float(np.max(np.abs(z - want))))

    nm3 = _nm("grushin3")
    alg3 = nm3.algebra
    for _ in range(100):
        a, b, c, d, f = rng.uniform(-1.0, 1.0, 5)
        x0, y0 = rng.uniform(-1.0, 1.0, 2)
        t = float(rng.uniform(0.05, 1.2))
        v = alg3.vector((a, b, c, d, f))
        z = vfields.flow(vfields.natural_t(nm3, v, t),
                         np.array([x0, y0]), tol=1e-12)
        want = np.array([
            x0 + t * a,
            y0 + t * b * (x0 * x0 + t * a * x0 + t * t * a * a / 3.0)
            + 2.0 * t * t * c * (x0 + t * a / 2.0)
            + 2.0 * t ** 3 * d,
        ])
        worst = max(worst, float(np.max(np.abs(z - want))))

    secs = time.perf_counter() - t0
    passed = worst <= 1e-8
    detail = f"200 random flows on two structures, worst error {worst:.2e} (tol 1e-08)"
    return CriterionResult(7, "integrator matches closed-form flows", passed,
                           detail, secs)


# -- criterion 8: cone charts, frames, and metric homogeneity ---------------

def _poly_error(poly, want):
    """Largest coefficient discrepancy between poly and the monomial dict
    want (exponent tuple -> coefficient)."""
    err = 0.0
    seen = set()
    for mono, coef in poly.terms.items():
        tgt = want.get(tuple(mono), 0.0)
        err = max(err, abs(float(coef) - tgt))
        seen.add(tuple(mono))
    for mono, coef in want.items():
        if mono not in seen:
            err = max(err, abs(coef))
    return err


def c08_cone_charts():
    t0 = time.perf_counter()
    problems = []

    nm2 = _nm("grushin2")
    alg2 = nm2.algebra
    rx = cone.compute_rx(nm2, np.array([0.0, 0.0]))
    origin_cone = cone.build_cone(alg2, rx.preimage)
    if origin_cone.s_indices != (0, 2):
        problems.append(f"origin chart coordinates {origin_cone.s_indices}")
    frame = origin_cone.horizontal_frame_polynomials()
    ferr = max(
        _poly_error(frame[0][0], {(0, 0): 1.0}),
        _poly_error(frame[0][1], {}),
        _poly_error(frame[1][0], {}),
        _poly_error(frame[1][1], {(1, 0): 1.0}),
    )
    if ferr > 1e-10:
        problems.append(f"origin frame error {ferr:.2e}")

    sqrt_cone = cone.build_cone(alg2, _sqrt_limit_expected(3))
    if sqrt_cone.s_indices != (0, 1):
        problems.append(f"sqrt-limit chart coordinates {sqrt_cone.s_indices}")
    sframe = sqrt_cone.horizontal_frame_polynomials()
    serr = max(
        _poly_error(sframe[0][0], {(0, 0): 1.0}),
        _poly_error(sframe[0][1], {}),
        _poly_error(sframe[1][0], {}),
        _poly_error(sframe[1][1], {(0, 0): 1.0}),
    )
    if serr > 1e-10:
        problems.append(f"sqrt-limit frame error {serr:.2e}")

    opts = replace(metrics.DEFAULT_OPTIONS, segments=24, multistarts=4)

    nmh = _nm("heisenberg")
    rxh = cone.compute_rx(nmh, np.zeros(3))
    hcone = cone.build_cone(nmh.algebra, rxh.preimage)
    res = metrics.cc_distance_cone(
        hcone, hcone.base_point(), hcone.point_from_coords([1.0, 0.0, 0.0]),
        opts)
    herr = abs(res.value - 1.0)
    if res.status != "converged" or herr > 1e-3:
        problems.append(f"unit horizontal distance error {herr:.2e} ({res.status})")

    base = origin_cone.base_point()
    pack = metrics.FieldPack.from_cone(origin_cone)
    hom_err = 0.0
    for coords in ((0.4, 0.15), (-0.3, 0.25)):
        p = origin_cone.point_from_coords(coords)
        d1 = metrics.cc_distance_cone(origin_cone, base, p, opts, pack=pack)
        for lam in (0.5, 2.0):
            pl = origin_cone.dilate_point(lam, p)
            dl = metrics.cc_distance_cone(origin_cone, base, pl, opts,
                                          pack=pack)
            hom_err = max(hom_err, abs(dl.value - lam * d1.value))
    if hom_err > 2.0 * opts.solver_tol:
        problems.append(f"dilation homogeneity error {hom_err:.2e}")

    secs = time.perf_counter() - t0
    passed = not problems
    detail = ("frames exact, unit distance error "
              f"{herr:.1e}, homogeneity error {hom_err:.1e}"
              if passed else "; ".join(problems))
    return CriterionResult(8, "cone charts and metric homogeneity", passed,
                           detail, secs)


# -- criterion 9: empirical convergence of the blow-ups ---------------------

def _study_specs():
    radial = grassmann.ApproachPath(name="(t, 0)",
                                    point=lambda t: (t, 0.0))
    origin2 = grassmann.ApproachPath.constant((0.0, 0.0), name="origin")
    radial3 = grassmann.ApproachPath(name="(t, 0)",
                                     point=lambda t: (t, 0.0))
    origin_h = grassmann.ApproachPath.constant((0.0, 0.0, 0.0), name="origin")
    return (
        ("grushin2", radial, "grushin2 along (t, 0)"),
        ("grushin2", origin2, "grushin2 at the origin"),
        ("grushin3", radial3, "grushin3 along (t, 0)"),
        ("heisenberg", origin_h, "heisenberg at the origin"),
    )


def c09_blowup_convergence():
    t0 = time.perf_counter()
    slack = 2.0 * gh.STUDY_OPTS.solver_tol
    const_cap = 3.0 * gh.STUDY_OPTS.solver_tol
    problems = []
    summaries = []
    for name, path, label in _study_specs():
        nm = _nm(name)
        S = gh.study_subspace(nm, path)
        t_study = time.perf_counter()
        table = gh.convergence_study(nm, S, path, R=1.0, n=30,
                                     schedule=gh.default_schedule(8),
                                     seed=11, scenario=label)
        dt = time.perf_counter() - t_study
        ds = [row.distortion for row in table.rows]
        if len(ds) != 8:
            problems.append(f"{label}: {len(ds)} rows")
        if any(ds[k + 1] > ds[k] + slack for k in range(len(ds) - 1)):
            problems.append(f"{label}: distortion not non-increasing {ds}")
        if ds[-1] >= 0.05 * 2.0:
            problems.append(f"{label}: final distortion {ds[-1]:.3e}")
        if any(row.flagged for row in table.rows):
            problems.append(f"{label}: flagged rows")
        if path.point(0.01) == path.point(0.005) and name == "grushin2":
            if any(d > const_cap for d in ds):
                problems.append(f"{label}: self-similar study above solver "
                                f"noise, max {max(ds):.2e}")
        summaries.append(f"{label}: max D {max(ds):.1e} in {dt:.0f}s")
    secs = time.perf_counter() - t0
    if secs >= 300.0:
        problems.append(f"wall time {secs:.0f}s")
    passed = not problems
    detail = "; ".join(summaries if passed else problems)
    return CriterionResult(9, "pointed convergence studies", passed,
                           detail, secs)


# -- criterion 10: quasi-norm versus distance comparison --------------------

def c10_norm_distance_comparison():
    t0 = time.perf_counter()
    problems = []

    cfg_e = _cfg("euclidean")
    opts_e = replace(metrics.DEFAULT_OPTIONS, segments=12, multistarts=2,
                     endpoint_tol=1e-8, inner_maxiter=200)
    rep_e = metrics.comparison_ratio_scan(
        _nm("euclidean"), cfg_e.structure(),
        region=((-1.0, -1.0), (1.0, 1.0)), samples=12,
        t_grid=[10.0 ** (-k / 3.0) for k in range(1, 7)],
        opts=opts_e)
    dev = max(abs(r - 1.0) for _, r in rep_e.ratios)
    if dev > 1e-6:
        problems.append(f"euclidean ratio deviation {dev:.2e}")

    cfg_g = _cfg("grushin2")
    opts_g = replace(metrics.DEFAULT_OPTIONS, multistarts=4)
    rep_g = metrics.comparison_ratio_scan(
        _nm("grushin2"), cfg_g.structure(),
        region=((-1.0, -0.5), (1.0, 0.5)), samples=18, opts=opts_g)
    if not math.isfinite(rep_g.c_hat):
        problems.append("grushin comparison constant not finite")
    if rep_g.drift > 0.10:
        problems.append(f"grushin drift {rep_g.drift:.3f}")

    secs = time.perf_counter() - t0
    passed = not problems
    detail = (f"euclidean ratios within {dev:.1e} of 1; grushin C^ "
              f"{rep_g.c_hat:.3f}, drift {rep_g.drift:.3f}"
              if passed else "; ".join(problems))
    return CriterionResult(10, "quasi-norm and distance comparison", passed,
                           detail, secs)


# -- criterion 11: exact scaling identities ----------------------------------

def c11_scaling_identities():
    t0 = time.perf_counter()
    problems = []

    worst_gap = 0.0
    for name in ("grushin2", "grushin3"):
        nm = _nm(name)
        weights = nm.algebra.weights
        for x in (np.array([0.5, 0.2]), np.array([-0.3, 0.4]),
                  np.array([0.0, 0.1])):
            K1 = grassmann.kernel(nm.eval_columns(x, t=1.0))
            for t in (0.5, 0.1, 0.01):
                Kt = grassmann.kernel(nm.eval_columns(x, t=t))
                Kd = grassmann.dilate_subspace(1.0 / t, K1, weights)
                worst_gap = max(worst_gap, grassmann.gap_distance(Kt, Kd))
    if worst_gap > 1e-10:
        problems.append(f"dilated kernel gap {worst_gap:.2e}")

    cfg = _cfg("grushin2")
    S = cfg.structure()
    opts = replace(metrics.DEFAULT_OPTIONS, segments=8, multistarts=2)
    x, y = np.array([0.15, 0.1]), np.array([0.55, 0.2])
    r1 = metrics.cc_distance_manifold(S, x, y, t=1.0, opts=opts)
    r4 = metrics.cc_distance_manifold(S, x, y, t=0.25, opts=opts)
    if r1.status != "converged":
        problems.append(f"scale-1 solve {r1.status}")
    if r4.value != 4.0 * r1.value:
        problems.append(
            f"scale identity broke: {r4.value!r} vs 4 * {r1.value!r}")

    rnd = np.random.default_rng(11)
    mismatches = 0
    for alg in (liealg.free_nilpotent(2, (1, 1), 2),
                liealg.free_nilpotent(2, (1, 1), 3)):
        for _ in range(50):
            v = alg.vector(tuple(rnd.uniform(-2.0, 2.0, alg.dim)))
            q = liealg.quasi_norm(v)
            for k in range(-3, 4):
                lam = 2.0 ** k
                if liealg.quasi_norm(liealg.dilate(lam, v)) != lam * q:
                    mismatches += 1
    if mismatches:
        problems.append(f"{mismatches} dyadic homogeneity mismatches")

    secs = time.perf_counter() - t0
    passed = not problems
    detail = (f"kernel gap {worst_gap:.1e}; d(t)=d(1)/t bitwise; "
              "700 dyadic dilations exact"
              if passed else "; ".join(problems))
    return CriterionResult(11, "scaling identities", passed, detail, secs)


CRITERIA = (
    c01_path_limit_classification,
    c02_fixed_point_consistency,
    c03_limits_are_subalgebras,
    c04_shift_conjugation,
    c05_exact_group_identities,
    c06_flow_composition_decay,
    c07_closed_form_flows,
    c08_cone_charts,
    c09_blowup_convergence,
    c10_norm_distance_comparison,
    c11_scaling_identities,
)


def run_all(stream=sys.stdout, indices=None):
    """Run every criterion (or the 1-based subset in indices), printing one
    line per criterion. Returns the list of CriterionResult."""
    results = []
    t0 = time.perf_counter()
    for k, fn in enumerate(CRITERIA, start=1):
        if indices is not None and k not in indices:
            continue
        res = fn()
        print(res.line(), file=stream, flush=True)
        results.append(res)
    total = time.perf_counter() - t0
    good = sum(r.passed for r in results)
    print(f"{good}/{len(results)} criteria passed in {total:.1f}s",
          file=stream, flush=True)
    return results
