"""Scenario configurations: JSON parsing, validation, built-in examples.

A scenario bundles a weighted vector-field structure, named approach paths
(polynomials in t), study descriptions, and tolerance overrides. Validation
collects every schema violation with a JSON-pointer path instead of
stopping at the first.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import gh, metrics, poly, vfields
from .grassmann import ApproachPath


class ConfigError(ValueError):
    """Invalid scenario configuration; .errors lists (pointer, message)."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"{p}: {m}" for p, m in self.errors)
        super().__init__(f"invalid configuration: {lines}")


_OPTION_FIELDS = {
    "segments": int, "substeps": int, "multistarts": int, "outer_iters": int,
    "inner_maxiter": int, "rho0": float, "rho_growth": float,
    "endpoint_tol": float, "solver_tol": float, "seed": int,
}

_STUDY_KINDS = ("gh", "distance", "quasinorm")


@dataclass
class ScenarioConfig:
    name: str
    dim: int
    depth: int
    generators: tuple          # ((weight, (component strings,)), ...)
    paths: dict                # name -> (component strings in t,)
    studies: tuple = ()
    gram: tuple = None
    seed: int = 0
    tolerances: dict = field(default_factory=dict)

    def structure(self):
        gens = tuple(
            (vfields.VectorField.from_strings(comps, self.dim), w)
            for w, comps in self.generators)
        return vfields.SubRiemannianStructure(
            dim=self.dim, generators=gens, depth=self.depth,
            gram=self.gram, name=self.name)

    def natural_map(self):
        return vfields.build_natural_map(self.structure())

    def path(self, name):
        if name not in self.paths:
            raise ConfigError([(f"/paths/{name}", "no such path")])
        comps = [poly.parse_polynomial(re.sub(r"\bt\b", "x0", c), 1)
                 for c in self.paths[name]]

        def point(t):
            return np.array([p([t]) for p in comps], dtype=float)

        return ApproachPath(name, point)

    def solver_options(self, base=None):
        base = base if base is not None else metrics.DEFAULT_OPTIONS
        overrides = dict(self.tolerances)
        if "seed" not in overrides:
            overrides["seed"] = self.seed
        return replace(base, **overrides)


def _check_components(comps, num_vars, pointer, errors, varname="x"):
    if not isinstance(comps, list) or not comps:
        errors.append((pointer, "must be a non-empty list of strings"))
        return
    for i, comp in enumerate(comps):
        if not isinstance(comp, str):
            errors.append((f"{pointer}/{i}", "must be a polynomial string"))
            continue
        text = comp
        if varname == "t":
            text = re.sub(r"\bt\b", "x0", comp)
        try:
            poly.parse_polynomial(text, num_vars)
        except poly.PolyParseError as err:
            errors.append((f"{pointer}/{i}", str(err)))


def parse_config(text):
    """Parse and validate a JSON scenario; raises ConfigError listing every
    violation with its JSON-pointer path."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError([("", f"not valid JSON: {err}")])
    return validate_config(raw)


def validate_config(raw):
    errors = []
    if not isinstance(raw, dict):
        raise ConfigError([("", "top level must be an object")])

    name = raw.get("name", "scenario")
    if not isinstance(name, str):
        errors.append(("/name", "must be a string"))
        name = "scenario"

    st = raw.get("structure")
    dim, depth, gens = 0, 1, []
    if not isinstance(st, dict):
        errors.append(("/structure", "required object"))
    else:
        dim = st.get("dim")
        if not isinstance(dim, int) or dim < 1:
            errors.append(("/structure/dim", "must be a positive integer"))
            dim = 0
        depth = st.get("depth")
        if not isinstance(depth, int) or depth < 1:
            errors.append(("/structure/depth", "must be a positive integer"))
            depth = 1
        glist = st.get("generators")
        if not isinstance(glist, list) or not glist:
            errors.append(("/structure/generators",
                           "must be a non-empty list"))
            glist = []
        for gi, g in enumerate(glist):
            gp = f"/structure/generators/{gi}"
            if not isinstance(g, dict):
                errors.append((gp, "must be an object"))
                continue
            w = g.get("weight", 1)
            if not isinstance(w, int) or w < 1:
                errors.append((f"{gp}/weight", "must be an integer >= 1"))
                w = 1
            comps = g.get("components")
            if dim:
                _check_components(comps, dim, f"{gp}/components", errors)
                if isinstance(comps, list) and comps and \
                        all(isinstance(c, str) for c in comps) and \
                        len(comps) != dim:
                    errors.append((f"{gp}/components",
                                   f"needs {dim} components"))
            gens.append((w, tuple(comps) if isinstance(comps, list) else ()))
        if gens and isinstance(depth, int):
            wmax = max(w for w, _ in gens)
            if depth < wmax:
                errors.append(("/structure/depth",
                               f"must be >= max generator weight {wmax}"))

    gram = raw.get("gram")
    if gram is not None:
        k1 = sum(1 for w, _ in gens if w == 1)
        ok_shape = (isinstance(gram, list) and len(gram) == k1 and
                    all(isinstance(r, list) and len(r) == k1 and
                        all(isinstance(v, (int, float)) for v in r)
                        for r in gram))
        if not ok_shape:
            errors.append(("/gram",
                           f"must be a {k1}x{k1} numeric matrix"))
            gram = None
        else:
            gram = tuple(tuple(float(v) for v in r) for r in gram)

    paths = {}
    plist = raw.get("paths", [])
    if not isinstance(plist, list):
        errors.append(("/paths", "must be a list"))
        plist = []
    for pi, p in enumerate(plist):
        pp = f"/paths/{pi}"
        if not isinstance(p, dict) or not isinstance(p.get("name"), str):
            errors.append((pp, "must be an object with a string name"))
            continue
        comps = p.get("components")
        _check_components(comps, 1, f"{pp}/components", errors, varname="t")
        if isinstance(comps, list) and dim and len(comps) != dim:
            errors.append((f"{pp}/components", f"needs {dim} components"))
        paths[p["name"]] = tuple(comps) if isinstance(comps, list) else ()

    studies = []
    slist = raw.get("studies", [])
    if not isinstance(slist, list):
        errors.append(("/studies", "must be a list"))
        slist = []
    for si, s in enumerate(slist):
        sp = f"/studies/{si}"
        if not isinstance(s, dict):
            errors.append((sp, "must be an object"))
            continue
        kind = s.get("kind")
        if kind not in _STUDY_KINDS:
            errors.append((f"{sp}/kind", f"must be one of {_STUDY_KINDS}"))
            continue
        if kind == "gh":
            pname = s.get("path")
            if not isinstance(pname, str) or pname not in paths:
                errors.append((f"{sp}/path", "must name a declared path"))
            for key, lo in (("R", 0.0), ("t0", 0.0), ("ratio", 0.0)):
                if key in s and (not isinstance(s[key], (int, float))
                                 or s[key] <= lo):
                    errors.append((f"{sp}/{key}", "must be positive"))
            for key, lo in (("n", 2), ("rows", 1)):
                if key in s and (not isinstance(s[key], int) or s[key] < lo):
                    errors.append((f"{sp}/{key}", f"must be an int >= {lo}"))
        else:
            for key in ("from", "to"):
                v = s.get(key)
                if not (isinstance(v, list) and len(v) == dim and
                        all(isinstance(c, (int, float)) for c in v)):
                    errors.append((f"{sp}/{key}",
                                   f"must be a point with {dim} coordinates"))
            if "t" in s and (not isinstance(s["t"], (int, float))
                             or s["t"] <= 0):
                errors.append((f"{sp}/t", "must be positive"))
        studies.append(dict(s))

    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        errors.append(("/seed", "must be an integer"))
        seed = 0

    tol = raw.get("tolerances", {})
    tolerances = {}
    if not isinstance(tol, dict):
        errors.append(("/tolerances", "must be an object"))
    else:
        for key, val in tol.items():
            want = _OPTION_FIELDS.get(key)
            if want is None:
                errors.append((f"/tolerances/{key}", "unknown option"))
            elif not isinstance(val, (int, float)) or \
                    (want is int and int(val) != val):
                errors.append((f"/tolerances/{key}",
                               f"must be {want.__name__}"))
            else:
                tolerances[key] = want(val)

    if errors:
        raise ConfigError(errors)

    cfg = ScenarioConfig(name=name, dim=dim, depth=depth,
                         generators=tuple(gens), paths=paths,
                         studies=tuple(studies), gram=gram, seed=seed,
                         tolerances=tolerances)
    try:
        cfg.structure()
    except vfields.StructureError as err:
        raise ConfigError([("/structure", str(err))])
    return cfg


_BUILTINS = {
    "grushin2": {
        "name": "grushin2",
        "structure": {
            "dim": 2, "depth": 2,
            "generators": [
                {"weight": 1, "components": ["1", "0"]},
                {"weight": 1, "components": ["0", "x0"]},
            ],
        },
        "paths": [
            {"name": "radial", "components": ["t", "0"]},
            {"name": "origin", "components": ["0", "0"]},
        ],
        "studies": [
            {"kind": "gh", "path": "radial"},
            {"kind": "gh", "path": "origin"},
            {"kind": "distance", "from": [0, 0], "to": [1, 0], "t": 1.0},
            {"kind": "quasinorm", "from": [0, 0], "to": [1, 0], "t": 1.0},
        ],
    },
    "grushin3": {
        "name": "grushin3",
        "structure": {
            "dim": 2, "depth": 3,
            "generators": [
                {"weight": 1, "components": ["1", "0"]},
                {"weight": 1, "components": ["0", "x0^2"]},
            ],
        },
        "paths": [
            {"name": "radial", "components": ["t", "0"]},
            {"name": "origin", "components": ["0", "0"]},
        ],
        "studies": [{"kind": "gh", "path": "radial"}],
    },
    "heisenberg": {
        "name": "heisenberg",
        "structure": {
            "dim": 3, "depth": 2,
            "generators": [
                {"weight": 1, "components": ["1", "0", "0"]},
                {"weight": 1, "components": ["0", "1", "x0"]},
            ],
        },
        "paths": [{"name": "origin", "components": ["0", "0", "0"]}],
        "studies": [
            {"kind": "gh", "path": "origin"},
            {"kind": "distance", "from": [0, 0, 0], "to": [1, 0, 0],
             "t": 1.0},
        ],
    },
    "martinet": {
        "name": "martinet",
        "structure": {
            "dim": 3, "depth": 3,
            "generators": [
                {"weight": 1, "components": ["1", "0", "0"]},
                {"weight": 1, "components": ["0", "1", "x0^2"]},
            ],
        },
        "paths": [{"name": "origin", "components": ["0", "0", "0"]}],
        "studies": [],
    },
    "euclidean": {
        "name": "euclidean",
        "structure": {
            "dim": 2, "depth": 1,
            "generators": [
                {"weight": 1, "components": ["1", "0"]},
                {"weight": 1, "components": ["0", "1"]},
            ],
        },
        "paths": [{"name": "origin", "components": ["0", "0"]}],
        "studies": [
            {"kind": "gh", "path": "origin"},
            {"kind": "quasinorm", "from": [0, 0], "to": [0.3, 0.4],
             "t": 0.5},
        ],
    },
}


def builtin_names():
    return sorted(_BUILTINS)


def builtin(name):
    if name not in _BUILTINS:
        raise ConfigError([("/name", f"no built-in scenario '{name}'; "
                            f"have {', '.join(builtin_names())}")])
    return validate_config(_BUILTINS[name])


def builtin_json(name):
    if name not in _BUILTINS:
        raise ConfigError([("/name", f"no built-in scenario '{name}'")])
    return json.dumps(_BUILTINS[name], indent=1)
