import numpy as np
from pytest import mark, raises

from varcalc.core.exceptions import HypothesisFailure, InfeasibleOnBoxError, InputError
from varcalc.services.corpus import XY
from varcalc.services.expr import parse_function
from varcalc.services.valuefn import GridSpec, ParametricProblem, value_service


def lower_of(pf):
    return ParametricProblem(pf.lower_objective, pf.lower_constraints, pf.x_dim)


@mark.parametrize("x", (-0.8, -0.3, 0.0, 0.45, 1.2))
def test_parabola_value(problem, x):
    pf = problem("parabola")
    sample = value_service.evaluate_value(lower_of(pf), [x], pf.require_grid())
    assert abs(sample.theta - x * x) <= 1e-4
    assert any(abs(y[0] - x * x) <= 1e-3 for y in sample.argmins)


def test_parabola_estimate_at_origin(problem):
    pf = problem("parabola")
    estimate = value_service.value_subdiff_estimate(lower_of(pf), pf.candidate("origin"), pf.require_grid())
    assert estimate.isc == "probed"
    union = estimate.basic_union()
    assert union is not None
    for part in union.parts:
        np.testing.assert_allclose(part.vertices, [[0.0]], atol=1e-9)


def test_parabola_gradients_and_modulus(problem):
    pf = problem("parabola")
    prob, grid = lower_of(pf), pf.require_grid()
    gradients = value_service.sampled_value_gradients(prob, [0.0], grid)
    assert gradients.shape[1] == 1
    assert np.max(np.abs(gradients)) <= 0.021
    verdict = value_service.lipschitz_verdict(prob, pf.candidate("origin"), grid)
    assert verdict["verdict"]
    assert verdict["modulus"] <= 0.01


def test_saddle_argmin_jumps(problem):
    pf = problem("saddle")
    prob, grid = lower_of(pf), pf.require_grid()
    report = value_service.inner_semicontinuity_probe(prob, pf.candidate("top"), grid)
    assert not report.verdict
    assert report.threshold == 10 * grid.step()
    assert report.worst_distance > report.threshold
    assert len(report.per_radius) == grid.x_stencil_count


@mark.parametrize("x", (-1.0, -0.25, 0.5))
def test_saddle_value_is_negative_abs(problem, x):
    pf = problem("saddle")
    assert abs(value_service.evaluate_value(lower_of(pf), [x], pf.require_grid()).theta + abs(x)) <= 1e-6


def test_saddle_estimate_is_withheld_without_override(problem):
    pf = problem("saddle")
    prob, grid = lower_of(pf), pf.require_grid()
    with raises(HypothesisFailure) as info:
        value_service.value_subdiff_estimate(prob, pf.candidate("top"), grid)
    assert info.value.hypothesis == "inner_semicontinuity"
    estimate = value_service.value_subdiff_estimate(prob, pf.candidate("top"), grid, override_isc=True)
    assert estimate.isc == "overridden"
    assert any("override" in note for note in estimate.notes)
    union = estimate.basic_union()
    assert union is not None
    np.testing.assert_allclose(union.parts[0].vertices, [[1.0]], atol=1e-9)


def test_saddle_is_still_lipschitz(problem):
    pf = problem("saddle")
    assert value_service.lipschitz_verdict(lower_of(pf), pf.candidate("top"))["verdict"]


def test_estimate_without_grid_needs_override(problem):
    pf = problem("parabola")
    with raises(HypothesisFailure):
        value_service.value_subdiff_estimate(lower_of(pf), pf.candidate("origin"))


def test_empty_feasible_set_is_certified():
    prob = ParametricProblem(parse_function("y", XY), (parse_function("(+ (* y y) 1)", XY),), 1)
    with raises(InfeasibleOnBoxError) as info:
        value_service.evaluate_value(prob, [0.0], GridSpec(y_box=[(-1, 1)], resolution=101))
    assert info.value.certified_empty
    assert abs(info.value.margin - 1.0) <= 1e-9


def test_problem_needs_y_variable():
    with raises(InputError):
        ParametricProblem(parse_function("y", XY), (), 2)


def test_grid_spacing_and_stencil():
    grid = GridSpec(y_box=[(0, 1)], resolution=11, x_stencil_radius=0.1, x_stencil_count=3)
    assert abs(grid.step() - 0.1) <= 1e-12
    assert grid.stencil_radii() == [0.1, 0.05, 0.025]
    assert grid.points().shape == (11, 1)


@mark.parametrize("kwargs",
                  ({"y_box": []},
                   {"y_box": [(1, 0)]},
                   {"y_box": [(0, float("inf"))]},
                   {"y_box": [(0, 1)], "resolution": 2},
                   {"y_box": [(0, 1)], "x_stencil_radius": 0.0},
                   {"y_box": [(0, 1)], "x_stencil_count": 0}))
def test_grid_validation(kwargs):
    with raises(InputError):
        GridSpec(**kwargs)
