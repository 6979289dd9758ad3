import numpy as np
from pytest import mark, raises

from varcalc.core.exceptions import DimensionMismatchError, InfeasiblePointError, InputError, QualificationError
from varcalc.services.corpus import GRAPHS, X, XY
from varcalc.services.expr import parse_function
from varcalc.services.normals import (
    SetSpec,
    angular_gap,
    normal_cone_service,
    sampled_lipschitz_like_test,
    sampled_normal_cone_oracle,
)
from varcalc.services.subdiff import SampleParams

QUADRANT = SetSpec.sublevel([parse_function("x", XY), parse_function("y", XY)])
LIGHT = SampleParams(radii=[1e-2, 1e-3], dirs_per_radius=32, seed=3)


def test_quadrant_normal_cone():
    result = normal_cone_service.normal_cone(QUADRANT, [0, 0])
    assert result.qualification == "verified"
    assert result.active == [0, 1]
    assert len(result.cones) == 1
    cone = result.cones[0]
    assert cone.contains([1, 2])
    assert cone.contains([0, 3])
    assert not cone.contains([-1, 0])


def test_interior_point_has_zero_normal_cone():
    result = normal_cone_service.normal_cone(QUADRANT, [-1, -1])
    assert result.is_trivial()
    assert result.qualification == "n/a"


def test_qualification_failure_carries_witness():
    with raises(QualificationError) as info:
        normal_cone_service.normal_cone(SetSpec.sublevel([parse_function("(abs x)", X)]), [0])
    assert np.allclose(info.value.witness, [1.0])
    assert info.value.exit_code == 3


def test_point_outside_set():
    with raises(InfeasiblePointError):
        normal_cone_service.normal_cone(QUADRANT, [1, 0])


def test_prenormal_cone_of_convex_set_is_normal_cone():
    cone = normal_cone_service.prenormal_cone(QUADRANT, [0, 0], LIGHT)
    assert cone.contains([1, 1])
    assert not cone.contains([-1, 0])


def test_sampled_normals_lie_in_quadrant_cone():
    oracle = sampled_normal_cone_oracle(QUADRANT, [0, 0], LIGHT)
    assert len(oracle.directions) > 0
    cones = normal_cone_service.normal_cone(QUADRANT, [0, 0]).cones
    assert angular_gap(oracle.directions, cones) <= 1e-6


@mark.parametrize("entry", GRAPHS, ids=[g.name for g in GRAPHS])
def test_coderivative_criterion(entry):
    verdict, parts = normal_cone_service.lipschitz_like_check(entry.spec, entry.point)
    assert verdict == entry.lipschitz_like
    assert parts


@mark.parametrize("name", ["abs_epigraph", "sqrt_branches"])
def test_sampled_lipschitz_like_agrees_with_criterion(name):
    entry = next(g for g in GRAPHS if g.name == name)
    assert sampled_lipschitz_like_test(entry.spec, entry.point)["verdict"] == entry.lipschitz_like


def test_linear_map_coderivative():
    graph = SetSpec.map_graph(parse_function("(* 2 x)", X))
    parts = normal_cone_service.coderivative(graph, [0, 0], [1.0])
    assert len(parts) == 1
    assert parts[0].is_bounded
    np.testing.assert_allclose(parts[0].base.vertices, [[2]])
    assert abs(normal_cone_service.coderivative_norm(graph, [0, 0]) - 2.0) <= 1e-9


def test_sqrt_branches_coderivative_is_empty_off_zero():
    entry = next(g for g in GRAPHS if g.name == "sqrt_branches")
    assert normal_cone_service.coderivative(entry.spec, entry.point, [1.0]) == []
    verdict, parts = normal_cone_service.lipschitz_like_check(entry.spec, entry.point)
    assert not verdict
    assert not parts[0].is_bounded


def test_coderivative_checks_w_length():
    graph = SetSpec.map_graph(parse_function("x", X))
    with raises(DimensionMismatchError):
        normal_cone_service.coderivative(graph, [0, 0], [1.0, 0.0])


def test_coderivative_needs_graph():
    with raises(InputError):
        normal_cone_service.coderivative(QUADRANT, [0, 0], [1.0])


def test_product_of_sets():
    s = SetSpec.product([SetSpec.sublevel([parse_function("x", X)]), SetSpec.singleton([2.0])])
    assert s.dim == 2
    assert s.contains([0, 2])
    result = normal_cone_service.normal_cone(s, [0, 2])
    assert any(c.contains([1, -5]) for c in result.cones)
    assert not any(c.contains([-1, 0]) for c in result.cones)


@mark.parametrize("build",
                  (lambda: SetSpec("ball"),
                   lambda: SetSpec.sublevel([]),
                   lambda: SetSpec.graph([parse_function("x", XY)], 2),
                   lambda: SetSpec("singleton"),
                   lambda: SetSpec.product([])))
def test_setspec_validation(build):
    with raises(InputError):
        build()


def test_constraints_must_share_space():
    with raises(DimensionMismatchError):
        SetSpec.sublevel([parse_function("x", X), parse_function("y", XY)])
