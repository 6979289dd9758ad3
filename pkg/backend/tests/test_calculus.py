import numpy as np
from pytest import raises

from varcalc.core.exceptions import InputError, NotExtremalError, QualificationError
from varcalc.services.calculus import calculus_service, extremal_principle_solve, minimizer_extremal_system
from varcalc.services.corpus import X, XY, corpus_entry
from varcalc.services.expr import parse_function
from varcalc.services.normals import SetSpec

LOWER = SetSpec.sublevel([parse_function("y", XY)])
UPPER = SetSpec.sublevel([parse_function("(- y)", XY)])


def test_extremal_half_planes():
    trace = extremal_principle_solve([LOWER, UPPER], [0, 0], [[0, 0], [0, -1]])
    assert [s.k for s in trace.steps] == [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000]
    for step in trace.steps:
        assert abs(step.normalization - 1.0) <= 1e-9
    last = trace.steps[-1]
    assert last.euler_residual <= 1e-3
    np.testing.assert_allclose(last.normals[0], [0, 2 ** -0.5], atol=2e-3)
    np.testing.assert_allclose(last.normals[1], [0, -2 ** -0.5], atol=2e-3)


def test_extremal_control_is_refused():
    with raises(NotExtremalError) as info:
        extremal_principle_solve([LOWER, UPPER], [0, 0], [[0, 0], [1, 0]])
    assert info.value.k == 1


def test_extremal_needs_one_shift_per_set():
    with raises(InputError):
        extremal_principle_solve([LOWER, UPPER], [0, 0], [[0, 0]])


def test_minimizer_extremal_system_on_affine_data():
    f = parse_function("x", X)
    omega = SetSpec.sublevel([parse_function("(- x)", X)])
    sets, point, shifts = minimizer_extremal_system(f, [0], omega)
    np.testing.assert_allclose(point, [0, 0])
    trace = extremal_principle_solve(sets, point, shifts, ks=(1, 10, 100))
    last = trace.steps[-1]
    assert abs(last.normalization - 1.0) <= 1e-9
    assert last.euler_residual <= 1e-3
    assert last.limit_residual <= 5e-2


def test_intersection_rule_quadrant():
    sets = [SetSpec.sublevel([parse_function("x", XY)]), SetSpec.sublevel([parse_function("y", XY)])]
    report = calculus_service.verify_intersection_rule(sets, [0, 0])
    assert report.holds
    assert report.details["qualification"] == "verified"


def test_intersection_rule_refuses_opposite_half_lines():
    sets = [SetSpec.sublevel([parse_function("x", X)]), SetSpec.sublevel([parse_function("(- x)", X)])]
    with raises(QualificationError) as info:
        calculus_service.verify_intersection_rule(sets, [0])
    np.testing.assert_allclose(info.value.witness, [1.0, 1.0], atol=1e-9)


def test_sum_rule_with_equality():
    report = calculus_service.verify_sum_rule(parse_function("(abs x)", X), [parse_function("x", X)], [0])
    assert report.holds
    assert report.equality
    assert report.hausdorff is not None and report.hausdorff <= 1e-9


def test_sum_rule_strict_inclusion():
    report = calculus_service.verify_sum_rule(parse_function("(abs x)", X), [parse_function("(- (abs x))", X)], [0])
    assert report.holds
    assert report.equality is False


def test_sum_rule_with_indicator_summand():
    omega = SetSpec.sublevel([parse_function("(- x)", X)])
    report = calculus_service.verify_sum_rule(omega, [parse_function("x", X)], [0])
    assert report.holds
    assert report.details["singular_holds"]


def test_sum_rule_needs_a_summand():
    with raises(InputError):
        calculus_service.verify_sum_rule(parse_function("x", X), [], [0])


def test_difference_rule_reports_failed_minimizer_condition():
    f1, f2 = parse_function("(* x x)", X), parse_function("(abs x)", X)
    report = calculus_service.verify_difference_rule(f1, f2, [0])
    assert report.holds
    assert report.details["lhs"] is None
    assert report.details["minimizer_condition"] == "fails"
    assert not calculus_service.verify_difference_rule(f1, f2, [0], assume_minimizer=True).holds


def test_difference_rule_at_a_minimizer():
    f1, f2 = parse_function("(abs x)", X), parse_function("(* x x)", X)
    report = calculus_service.verify_difference_rule(f1, f2, [0], assume_minimizer=True)
    assert report.holds
    assert report.details["minimizer_condition"] == "holds"


def test_epigraph_route_matches_direct_subdifferential():
    for name in ("abs", "neg_abs", "max_xy"):
        entry = corpus_entry(name)
        report = calculus_service.epigraph_consistency_check(entry.function(), entry.point)
        assert report.holds, name
