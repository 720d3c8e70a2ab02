import numpy as np
import pytest

from nilpotentizer import liealg, scenarios, vfields
from nilpotentizer.vfields import (
    FlowEscapedError,
    StructureError,
    SubRiemannianStructure,
    VectorField,
    build_natural_map,
    flow,
    hormander_check,
    natural_at,
    natural_t,
)


def _structure(fields, dim, depth, weights=None):
    weights = weights or [1] * len(fields)
    gens = tuple(
        (VectorField.from_strings(comp, dim), w)
        for comp, w in zip(fields, weights))
    return SubRiemannianStructure(dim=dim, generators=gens, depth=depth)


@pytest.fixture(scope="module")
def grushin2():
    return build_natural_map(_structure([["1", "0"], ["0", "x0"]], 2, 2))


@pytest.fixture(scope="module")
def heis():
    return build_natural_map(
        _structure([["1", "0", "0"], ["0", "1", "x0"]], 3, 2))


def test_vector_field_eval():
    f = VectorField.from_strings(["x0^2", "x0*x1"], 2)
    assert np.allclose(f(np.array([2.0, 3.0])), [4.0, 6.0])


def test_vector_field_component_count():
    with pytest.raises(ValueError):
        VectorField.from_strings(["1"], 2)


def test_natural_map_columns_grushin(grushin2):
    # realized basis at (a, b): e1 -> (1, 0), e2 -> (0, a), e3 -> (0, 1)
    a, b = 0.8, -0.4
    M = grushin2.eval_columns(np.array([a, b]))
    assert np.allclose(M, np.array([[1.0, 0.0, 0.0], [0.0, a, 1.0]]))


def test_natural_map_columns_scale(grushin2):
    x = np.array([0.5, 0.2])
    t = 0.3
    M1 = grushin2.eval_columns(x)
    Mt = grushin2.eval_columns(x, t=t)
    weights = np.array(grushin2.algebra.weights, dtype=float)
    assert np.allclose(Mt, M1 * t ** weights)


def test_eval_columns_many_matches_loop(grushin2):
    pts = np.array([[0.1, 0.2], [-0.5, 0.3], [1.0, -1.0]])
    batch = grushin2.eval_columns_many(pts)
    for i, x in enumerate(pts):
        assert np.allclose(batch[i], grushin2.eval_columns(x))


def test_natural_at_matches_eval_columns(grushin2):
    x = np.array([0.4, 0.1])
    assert np.allclose(natural_at(grushin2, x, 0.5),
                       grushin2.eval_columns(x, t=0.5))


def test_depth_one_truncates_to_generators_only():
    # declaring depth 1 keeps just the generator layer; the noncommuting
    # remainder is simply not modeled
    nm = build_natural_map(_structure([["1", "0"], ["0", "x0"]], 2, 1))
    assert nm.algebra.dim == 2


def test_structure_validation_errors():
    f = VectorField.from_strings(["1", "0"], 2)
    g = VectorField.from_strings(["0", "1"], 2)
    with pytest.raises(StructureError):
        SubRiemannianStructure(dim=2, generators=(), depth=1)
    with pytest.raises(StructureError):
        SubRiemannianStructure(dim=2, generators=((f, 0),), depth=1)
    with pytest.raises(StructureError):
        SubRiemannianStructure(dim=2, generators=((f, 2),), depth=1)
    with pytest.raises(StructureError):
        SubRiemannianStructure(dim=2, generators=((f, 1), (g, 1)), depth=1,
                               gram=((1.0,),))
    with pytest.raises(StructureError):
        SubRiemannianStructure(dim=2, generators=((f, 1), (g, 1)), depth=1,
                               gram=((1.0, 2.0), (0.0, 1.0)))


def test_flow_straight_line():
    f = VectorField.from_strings(["1", "0"], 2)
    z = flow(f, np.array([0.0, 1.0]), time=2.5, tol=1e-12)
    assert np.allclose(z, [2.5, 1.0], atol=1e-10)


def test_flow_grushin_closed_form(grushin2):
    rng = np.random.default_rng(0)
    alg = grushin2.algebra
    for _ in range(25):
        a, b, c = rng.uniform(-1, 1, 3)
        x0, y0 = rng.uniform(-1, 1, 2)
        t = float(rng.uniform(0.1, 1.0))
        v = alg.vector((a, b, c))
        z = flow(natural_t(grushin2, v, t), np.array([x0, y0]), tol=1e-12)
        want = [x0 + t * a, y0 + t * b * x0 + t * t * (a * b / 2 + c)]
        assert np.allclose(z, want, atol=1e-9)


def test_flow_heisenberg_closed_form(heis):
    alg = heis.algebra
    v = alg.vector((0.7, -0.4, 0.2))
    z = flow(natural_t(heis, v, 1.0), np.zeros(3), tol=1e-12)
    a, b, c = 0.7, -0.4, 0.2
    # dx=a, dy=b, dz=b*x + c from the origin
    assert np.allclose(z, [a, b, a * b / 2 + c], atol=1e-9)


def test_flow_escape_raises():
    f = VectorField.from_strings(["x0^2"], 1)
    with pytest.raises(FlowEscapedError):
        flow(f, np.array([2.0]), time=1.0, max_norm=1e6)


def test_hormander_grushin_singular_line(grushin2):
    rep = hormander_check(grushin2, np.array([0.0, 0.0]))
    assert rep.ok and rep.rank == 2
    rep2 = hormander_check(grushin2, np.array([0.7, 0.3]))
    assert rep2.ok


def test_hormander_deficient_structure():
    nm = build_natural_map(_structure([["1", "0"]], 2, 1))
    rep = hormander_check(nm, np.array([0.0, 0.0]))
    assert not rep.ok
    assert rep.rank == 1 and rep.dim == 2


def test_gram_scales_distances():
    from nilpotentizer import metrics

    cfg = scenarios.builtin("euclidean")
    plain = cfg.structure()
    assert plain.gram is None
    scaled = SubRiemannianStructure(
        dim=2, generators=plain.generators, depth=1,
        gram=((4.0, 0.0), (0.0, 4.0)))
    opts = metrics.SolverOptions(segments=6, multistarts=2)
    d_plain = metrics.cc_distance_manifold(
        plain, (0.0, 0.0), (1.0, 0.0), opts=opts).value
    d_scaled = metrics.cc_distance_manifold(
        scaled, (0.0, 0.0), (1.0, 0.0), opts=opts).value
    assert abs(d_plain - 1.0) < 1e-6
    assert abs(d_scaled - 2.0) < 2e-6


def test_realized_brackets_match_structure_constants(heis):
    """Columns of higher basis elements equal the iterated field brackets."""
    x = np.array([0.3, -0.2, 0.5])
    M = heis.eval_columns(x)
    # e3 = [e1, e2]; realized fields X1 = d/dx, X2 = d/dy + x d/dz,
    # so [X1, X2] = d/dz
    assert np.allclose(M[:, 2], [0.0, 0.0, 1.0])
