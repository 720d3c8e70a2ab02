"""Command-line front end.

Subcommands: validate, cones, distance, quasinorm, gh, selftest.  Every run
can write a machine-readable report.json plus CSV tables under --out.  Exit
codes: 0 success, 1 a numeric check failed or did not converge, 2 the
configuration is invalid, 3 unexpected internal error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import pathlib
import sys
import time
import traceback
from dataclasses import asdict, replace

import numpy as np

from . import cone, gh, grassmann, liealg, metrics, scenarios, selftest, vfields

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_CONFIG = 2
EXIT_INTERNAL = 3


def _load_config(spec, seed_override=None):
    """Accepts a JSON file path or a built-in scenario name."""
    if spec in scenarios.builtin_names():
        text = scenarios.builtin_json(spec)
    else:
        path = pathlib.Path(spec)
        try:
            text = path.read_text()
        except OSError as err:
            raise scenarios.ConfigError(
                [("", f"cannot read config {spec!r}: {err}")])
    cfg = scenarios.parse_config(text)
    if seed_override is not None:
        cfg = replace(cfg, seed=int(seed_override))
    return cfg, text


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def _emit(out, report, tables):
    """Write report.json and tables/*.csv under out; returns file list."""
    if not out:
        return []
    outdir = pathlib.Path(out)
    tdir = outdir / "tables"
    tdir.mkdir(parents=True, exist_ok=True)
    written = []
    for fname, text in tables.items():
        fp = tdir / fname
        fp.write_text(text)
        written.append(str(fp))
    report["outputs"] = written + [str(outdir / "report.json")]
    (outdir / "report.json").write_text(
        json.dumps(report, indent=2, default=str) + "\n")
    return report["outputs"]


def _finish(args, code, data, tables, warnings, t0, config_text=None):
    digest_src = json.dumps({
        "config": config_text,
        "overrides": {k: getattr(args, k, None)
                      for k in ("path", "t", "seed", "jobs")},
    }, sort_keys=True)
    report = {
        "command": args.command,
        "config": getattr(args, "config", None),
        "inputs_sha256": hashlib.sha256(digest_src.encode()).hexdigest(),
        "jobs": getattr(args, "jobs", 1),
        "wall_time_s": round(time.perf_counter() - t0, 3),
        "exit_code": code,
        "warnings": warnings,
        "outputs": [],
        "data": data,
    }
    files = _emit(args.out, report, tables)
    for w in warnings:
        print(f"warning: {w}")
    if files:
        print(f"wrote {', '.join(files)}")
    return code


# -- validate ----------------------------------------------------------------

def _grid_points(dim, per_axis=3, cap=200, seed=0):
    if per_axis ** dim <= cap:
        axes = [np.linspace(-1.0, 1.0, per_axis)] * dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, size=(cap, dim))


def cmd_validate(args):
    t0 = time.perf_counter()
    cfg, text = _load_config(args.config, args.seed)
    warnings, problems, rows = [], [], []
    algebra_info = {}
    try:
        nm = cfg.natural_map()
    except vfields.StructureError as err:
        problems.append(f"bracket compatibility: {err}")
        nm = None
    if nm is not None:
        alg = nm.algebra
        algebra_info = {"dim": alg.dim, "weights": list(alg.weights),
                        "depth": alg.depth}
        rep = liealg.validate_algebra(alg)
        if not rep.ok:
            problems.extend(rep.violations)
        for x in _grid_points(cfg.dim, seed=cfg.seed):
            hr = vfields.hormander_check(nm, x)
            rows.append([*(float(c) for c in x), hr.rank, hr.dim,
                         "ok" if hr.ok else "deficient"])
            if not hr.ok:
                problems.append(
                    f"bracket generation fails at {tuple(round(float(c), 3) for c in x)}:"
                    f" rank {hr.rank} < {hr.dim}")
    for p in problems:
        print(f"validate: {p}")
    code = EXIT_NUMERIC if problems else EXIT_OK
    status = "FAILED" if problems else "OK"
    print(f"validate {cfg.name}: {status} "
          f"({len(rows)} grid points, {len(problems)} problems)")
    header = [f"x{i}" for i in range(cfg.dim)] + ["rank", "dim", "status"]
    tables = {"hormander.csv": _csv_text(header, rows)}
    data = {"scenario": cfg.name, "algebra": algebra_info,
            "problems": problems, "grid_points": len(rows)}
    return _finish(args, code, data, tables, warnings, t0, text)


# -- cones --------------------------------------------------------------------

def _frame_strings(tc):
    names = [f"s{i + 1}" for i in range(tc.dim_s)]
    out = []
    for frame in tc.horizontal_frame_polynomials():
        out.append("(" + ", ".join(c.to_string(var_names=names)
                                   for c in frame) + ")")
    return out


def cmd_cones(args):
    t0 = time.perf_counter()
    cfg, text = _load_config(args.config, args.seed)
    warnings, problems, rows, data_rows = [], [], [], []
    nm = cfg.natural_map()
    names = [args.path] if args.path else list(cfg.paths)
    for name in names:
        path = cfg.path(name)
        probe = np.asarray(path.point(path.t0), dtype=float)
        constant = np.allclose(probe,
                               np.asarray(path.point(path.t0 * path.rho)))
        if constant:
            rx = cone.compute_rx(nm, probe)
            S, converged, kind = rx.preimage, True, "fixed point"
            note = f"rank filtration {rx.ranks}, agreement {rx.agreement_gap:.2e}"
        else:
            S, diag = grassmann.limit_along_path(nm, path)
            converged, kind = diag.converged, "path limit"
            note = f"{len(diag.rows)} schedule rows"
            if not converged:
                problems.append(f"path {name!r} did not converge")
        rep = liealg.is_subalgebra(nm.algebra, S)
        if rep.residual > 1e-8:
            problems.append(
                f"path {name!r}: limit not a subalgebra (residual {rep.residual:.2e})")
        try:
            tc = cone.build_cone(nm.algebra, S)
            s_idx, frames = tc.s_indices, _frame_strings(tc)
        except cone.ConeError as err:
            problems.append(f"path {name!r}: cone build failed: {err}")
            s_idx, frames = (), []
        rows.append([name, kind, S.dim, " ".join(map(str, s_idx)),
                     f"{rep.residual:.3e}", converged,
                     " | ".join(frames)])
        data_rows.append({
            "path": name, "kind": kind, "h_dim": S.dim,
            "h_basis": [[float(v) for v in S.basis[:, i]]
                        for i in range(S.dim)],
            "s_indices": list(s_idx), "frame": frames,
            "subalgebra_residual": rep.residual, "converged": converged,
            "note": note,
        })
        print(f"cones {name}: {kind}, h dim {S.dim}, chart coords "
              f"{s_idx}, frame {' | '.join(frames) or 'n/a'}")
    for p in problems:
        print(f"cones: {p}")
    code = EXIT_NUMERIC if problems else EXIT_OK
    tables = {"cones.csv": _csv_text(
        ["path", "kind", "h_dim", "s_indices", "subalgebra_residual",
         "converged", "frame"], rows)}
    data = {"scenario": cfg.name, "cones": data_rows, "problems": problems}
    return _finish(args, code, data, tables, warnings, t0, text)


# -- distance / quasinorm ------------------------------------------------------

def _studies_of(cfg, kind, warnings):
    found = [s for s in cfg.studies if s["kind"] == kind]
    if not found:
        warnings.append(f"config declares no {kind} studies")
    return found


def cmd_distance(args):
    t0 = time.perf_counter()
    cfg, text = _load_config(args.config, args.seed)
    warnings, rows, data_rows = [], [], []
    S = cfg.structure()
    opts = cfg.solver_options()
    bad = 0
    for idx, s in enumerate(_studies_of(cfg, "distance", warnings)):
        t = float(args.t) if args.t is not None else float(s.get("t", 1.0))
        res = metrics.cc_distance_manifold(S, s["from"], s["to"], t, opts)
        ok = res.status == "converged"
        bad += not ok
        rows.append([idx, s["from"], s["to"], t, f"{res.value:.9g}",
                     res.status, f"{res.residual:.3e}"])
        data_rows.append({"index": idx, "from": s["from"], "to": s["to"],
                          "t": t, **res.to_json_dict()})
        print(f"distance {s['from']} -> {s['to']} at t={t}: "
              f"{res.value:.6f} ({res.status})")
    code = EXIT_NUMERIC if bad else EXIT_OK
    tables = {"distances.csv": _csv_text(
        ["index", "from", "to", "t", "value", "status", "residual"], rows)}
    data = {"scenario": cfg.name, "distances": data_rows}
    return _finish(args, code, data, tables, warnings, t0, text)


def cmd_quasinorm(args):
    t0 = time.perf_counter()
    cfg, text = _load_config(args.config, args.seed)
    warnings, rows, data_rows = [], [], []
    nm = cfg.natural_map()
    opts = cfg.solver_options()
    bad = 0
    for idx, s in enumerate(_studies_of(cfg, "quasinorm", warnings)):
        t = float(args.t) if args.t is not None else float(s.get("t", 1.0))
        gp = metrics.GroupoidPoint.at_scale(s["to"], s["from"], t)
        res = metrics.quasi_norm_element(nm, gp, opts)
        ok = res.status == "converged"
        bad += not ok
        rows.append([idx, s["from"], s["to"], t, f"{res.value:.9g}",
                     res.status, f"{res.residual:.3e}"])
        data_rows.append({"index": idx, "from": s["from"], "to": s["to"],
                          "t": t, "value": res.value, "status": res.status,
                          "residual": res.residual,
                          "minimizer": list(res.minimizer)})
        print(f"quasinorm {s['from']} -> {s['to']} at t={t}: "
              f"{res.value:.6f} ({res.status})")
    code = EXIT_NUMERIC if bad else EXIT_OK
    tables = {"quasinorms.csv": _csv_text(
        ["index", "from", "to", "t", "value", "status", "residual"], rows)}
    data = {"scenario": cfg.name, "quasinorms": data_rows}
    return _finish(args, code, data, tables, warnings, t0, text)


# -- gh -----------------------------------------------------------------------

def cmd_gh(args):
    t0 = time.perf_counter()
    cfg, text = _load_config(args.config, args.seed)
    warnings, problems, tables, summaries = [], [], {}, []
    studies = _studies_of(cfg, "gh", warnings)
    if args.path is not None:
        studies = [s for s in studies if s["path"] == args.path]
        if not studies:
            raise scenarios.ConfigError(
                [("/studies", f"no gh study uses path {args.path!r}")])
    nm = cfg.natural_map()
    opts = cfg.solver_options(base=gh.STUDY_OPTS)
    for s in studies:
        path = cfg.path(s["path"])
        S = gh.study_subspace(nm, path)
        schedule = gh.default_schedule(s.get("rows", 8), s.get("t0", 0.2),
                                       s.get("ratio", 0.5))
        label = f"{cfg.name}:{s['path']}"
        table = gh.convergence_study(
            nm, S, path, R=s.get("R", 1.0), n=s.get("n", 30),
            schedule=schedule, seed=cfg.seed, opts=opts, scenario=label)
        flagged = [row.t for row in table.rows if row.flagged]
        if flagged:
            problems.append(f"{label}: flagged rows at t={flagged}")
        final = table.rows[-1]
        print(f"gh {label}: {len(table.rows)} rows, final distortion "
              f"{final.distortion:.3e}, gh bound {final.gh_bound:.3e}, "
              f"slope {table.slope:.2f}")
        tables[f"gh-{s['path']}.csv"] = table.to_csv()
        summaries.append(table.summary())
    for p in problems:
        print(f"gh: {p}")
    code = EXIT_NUMERIC if problems else EXIT_OK
    data = {"scenario": cfg.name, "studies": summaries, "problems": problems}
    return _finish(args, code, data, tables, warnings, t0, text)


# -- selftest -------------------------------------------------------------------

def cmd_selftest(args):
    t0 = time.perf_counter()
    indices = set(args.only) if args.only else None
    results = selftest.run_all(indices=indices)
    rows = [[r.index, r.name, "pass" if r.passed else "fail",
             f"{r.seconds:.2f}", r.detail] for r in results]
    code = EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC
    tables = {"selftest.csv": _csv_text(
        ["index", "name", "status", "seconds", "detail"], rows)}
    data = {"criteria": [asdict(r) for r in results]}
    return _finish(args, code, data, tables, [], t0)


# -- parser ---------------------------------------------------------------------

def _add_common(sp, config=True):
    if config:
        sp.add_argument(
            "--config", required=True,
            help="scenario JSON file, or one of: "
                 + ", ".join(scenarios.builtin_names()))
    sp.add_argument("--out", help="directory for report.json and tables/")
    sp.add_argument("--jobs", type=int, default=1,
                    help="worker hint recorded in the report (solves are "
                         "vectorized in-process)")
    sp.add_argument("--seed", type=int, default=None,
                    help="override the scenario seed")


def _build_parser():
    p = argparse.ArgumentParser(
        prog="nilpotentizer",
        description="Tangent cones, nilpotent approximations, and metric "
                    "convergence checks for weighted polynomial vector-field "
                    "structures.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("validate", help="check algebra axioms, bracket "
                        "compatibility, and bracket generation on a grid")
    _add_common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("cones", help="tangent-cone data for each declared "
                        "approach path")
    _add_common(sp)
    sp.add_argument("--path", help="restrict to one named path")
    sp.set_defaults(func=cmd_cones)

    sp = sub.add_parser("distance", help="Carnot-Caratheodory distances for "
                        "the declared distance studies")
    _add_common(sp)
    sp.add_argument("--t", type=float, default=None,
                    help="override the study scale")
    sp.set_defaults(func=cmd_distance)

    sp = sub.add_parser("quasinorm", help="minimal quasi-norms for the "
                        "declared quasinorm studies")
    _add_common(sp)
    sp.add_argument("--t", type=float, default=None,
                    help="override the study scale")
    sp.set_defaults(func=cmd_quasinorm)

    sp = sub.add_parser("gh", help="pointed convergence studies against the "
                        "tangent cone")
    _add_common(sp)
    sp.add_argument("--path", help="restrict to gh studies on one path")
    sp.set_defaults(func=cmd_gh)

    sp = sub.add_parser("selftest", help="run the built-in acceptance "
                        "criteria on the bundled structures")
    _add_common(sp, config=False)
    sp.add_argument("--only", type=int, nargs="*",
                    help="criterion indices to run (default: all)")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except scenarios.ConfigError as err:
        for ptr, msg in err.errors:
            print(f"config error at {ptr or '<root>'}: {msg}",
                  file=sys.stderr)
        return EXIT_CONFIG
    except (gh.GHError, grassmann.ConvergenceError, cone.ConeError,
            vfields.StructureError, vfields.FlowEscapedError,
            liealg.AlgebraError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
