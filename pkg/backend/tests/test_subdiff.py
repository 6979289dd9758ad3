import numpy as np
from pytest import approx, mark, raises

from varcalc.core.exceptions import InputError
from varcalc.services.convgeom import Polytope, PolytopeUnion, hausdorff_distance
from varcalc.services.corpus import CORPUS, X, XY, corpus_entry
from varcalc.services.expr import parse_function
from varcalc.services.subdiff import (
    SampleParams,
    cluster_points,
    oracle_cluster_tolerance,
    sampled_subdiff_oracle,
    subdiff_service,
)

NAMES = [entry.name for entry in CORPUS]


@mark.parametrize("name", NAMES)
def test_basic_subdifferential_matches_corpus(name):
    entry = corpus_entry(name)
    basic, census = subdiff_service.basic_subdifferential(entry.function(), entry.point)
    assert basic.equals(entry.expected_basic(), 1e-6), basic
    assert sum(c.count for c in census) >= 1


@mark.parametrize("name", NAMES)
def test_regular_subdifferential_matches_corpus(name):
    entry = corpus_entry(name)
    regular = subdiff_service.regular_subdifferential(entry.function(), entry.point)
    expected = entry.expected_regular()
    if expected is None:
        assert regular is None
    else:
        assert regular is not None and regular.equals(expected, 1e-6), regular


@mark.parametrize("name", [e.name for e in CORPUS if e.convex])
def test_convex_functions_have_one_regular_part(name):
    entry = corpus_entry(name)
    result = subdiff_service.compute(entry.function(), entry.point)
    assert len(result.basic.parts) == 1
    assert result.regular.equals(result.basic.parts[0], 1e-6)


@mark.parametrize("name", ["abs", "neg_abs", "max_xy", "abs_difference", "ridge"])
def test_sampled_oracle_agrees_with_symbolic(name):
    entry = corpus_entry(name)
    result = subdiff_service.compute(entry.function(), entry.point, SampleParams(seed=7), oracle=True)
    assert result.method == "symbolic+sampled"
    assert result.hausdorff is not None and result.hausdorff <= 0.05


@mark.parametrize("name", NAMES)
def test_singular_subdifferential_is_zero(name):
    entry = corpus_entry(name)
    assert subdiff_service.singular_subdifferential(entry.function(), entry.point).is_trivial()


def test_smooth_point_gives_gradient():
    f = parse_function("(+ (* x x) (* 3 y))", XY)
    result = subdiff_service.compute(f, [1, 2])
    np.testing.assert_allclose(result.regular.vertices, [[2, 3]])
    assert result.basic.equals(PolytopeUnion((Polytope([[2, 3]]),)))


def test_subdifferential_away_from_kink():
    f = parse_function("(abs x)", X)
    assert subdiff_service.compute(f, [-2]).basic.equals(PolytopeUnion((Polytope([[-1]]),)))


def test_oracle_is_deterministic_for_a_seed():
    f = parse_function("(- (abs x) (abs y))", XY)
    first = sampled_subdiff_oracle(f, [0, 0], SampleParams(seed=7))
    second = sampled_subdiff_oracle(f, [0, 0], SampleParams(seed=7))
    np.testing.assert_array_equal(first.cloud, second.cloud)
    assert first.to_dict() == second.to_dict()


def test_oracle_cloud_contains_both_sides_of_a_concave_kink():
    oracle = sampled_subdiff_oracle(parse_function("(- (abs x))", X), [0], SampleParams(seed=1))
    assert oracle.accepted > 0
    assert hausdorff_distance(oracle.union, PolytopeUnion((Polytope([[-1]]), Polytope([[1]])))) <= 1e-6


def test_cluster_points_merges_close_points():
    centers = cluster_points(np.array([[0.0, 0.0], [1e-9, 0.0], [1.0, 1.0]]), 1e-6)
    assert centers.shape == (2, 2)


@mark.parametrize("kwargs",
                  ({"radii": []},
                   {"radii": [1e-3, 1e-2]},
                   {"radii": [1e-2, -1e-3]},
                   {"dirs_per_radius": 0},
                   {"radii": [1e-2, 1e-3], "epsilons": [1e-3]},
                   {"radii": [1e-2, 1e-3], "epsilons": [1e-4, 1e-3]}))
def test_sample_params_validation(kwargs):
    with raises(InputError):
        SampleParams(**kwargs)


def test_sample_params_default_epsilons():
    p = SampleParams(radii=[1e-2, 1e-3])
    assert p.eps() == approx([1e-3, 1e-4])


@mark.parametrize("name", NAMES)
def test_negation_lies_in_negated_hull(name):
    entry = corpus_entry(name)
    negated = parse_function(f"(- {entry.text})", entry.space)
    hull = subdiff_service.basic_subdifferential(entry.function(), entry.point)[0].hull()
    basic_neg, _ = subdiff_service.basic_subdifferential(negated, entry.point)
    for v in basic_neg.all_vertices():
        assert hull.contains_point(-v, 1e-6), (v, hull)


def test_oracle_cluster_tolerance():
    assert oracle_cluster_tolerance(1e-6) == approx(1e-5)
    assert oracle_cluster_tolerance(1e-12) == approx(1e-7)


def test_oracle_keeps_one_cluster_for_a_curved_smooth_function():
    oracle = sampled_subdiff_oracle(parse_function("(* x x)", X), [1], SampleParams(seed=3))
    assert oracle.clusters.shape == (1, 1)
    assert oracle.clusters[0, 0] == approx(2.0, abs=1e-5)
