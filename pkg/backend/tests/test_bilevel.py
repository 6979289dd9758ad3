import numpy as np
from pytest import mark, raises

from varcalc.core.config import settings
from varcalc.core.exceptions import (
    DimensionMismatchError,
    HypothesisFailure,
    InfeasiblePointError,
    InputError,
    PreconditionError,
)
from varcalc.services.bilevel import (
    LOCAL_CAVEAT,
    BilevelProblem,
    LipschitzProgram,
    NoCertificate,
    StationarityCertificate,
    bilevel_service,
)
from varcalc.services.corpus import X, XY
from varcalc.services.expr import parse_function
from varcalc.services.subdiff import SampleParams

LIGHT = SampleParams(seed=0)
W_LEDGER = {
    "lipschitz_data": "verified",
    "lower_regularity": "verified",
    "upper_regularity": "verified",
    "partial_calmness": "probed",
    "inner_semicontinuity": "probed",
}


def program_of(pf):
    return LipschitzProgram(pf.upper_objective, tuple(pf.upper_constraints))


def test_kkt_multipliers(problem):
    pf = problem("kkt")
    outcome = bilevel_service.check_lipschitz_kkt(program_of(pf), pf.candidate("origin"))
    assert isinstance(outcome, StationarityCertificate)
    assert outcome.theorem == "T6.1"
    assert outcome.multipliers["lambda0"] == [1.0]
    assert outcome.ledger["mfcq"] == "verified"
    assert outcome.caveat == LOCAL_CAVEAT


def test_fritz_john_without_mfcq(problem):
    pf = problem("fritz_john")
    outcome = bilevel_service.check_lipschitz_kkt(program_of(pf), pf.candidate("origin"))
    assert isinstance(outcome, StationarityCertificate)
    assert outcome.ledger["mfcq"] == "failed"
    assert abs(outcome.multipliers["lambda0"][0] - 1.0) <= 1e-9
    assert outcome.multipliers["lambda"][0] >= 1.0 - 1e-6


def test_fritz_john_with_vanishing_objective_multiplier():
    # minimize x subject to x^2 <= 0: the only feasible point admits no KKT multipliers
    prog = LipschitzProgram(parse_function("x", X), (parse_function("(* x x)", X),))
    outcome = bilevel_service.check_lipschitz_kkt(prog, [0])
    assert isinstance(outcome, StationarityCertificate)
    assert outcome.ledger["mfcq"] == "failed"
    assert abs(outcome.multipliers["lambda0"][0]) <= 1e-9
    assert abs(outcome.multipliers["lambda"][0] - 1.0) <= 1e-9
    assert 0.0 <= outcome.residuals["lagrangian"] <= settings.TOL_LP
    assert any("vanishing objective multiplier" in note for note in outcome.notes)


def test_half_plane_minimizer(problem):
    pf = problem("halfplane")
    outcome = bilevel_service.check_lipschitz_kkt(program_of(pf), pf.candidate("origin"))
    assert isinstance(outcome, StationarityCertificate)
    assert abs(outcome.multipliers["lambda"][0] - 1.0) <= 1e-6
    assert outcome.residuals["lagrangian"] <= 1e-6


def test_non_stationary_point_gets_no_certificate():
    prog = LipschitzProgram(parse_function("x", X))
    outcome = bilevel_service.check_lipschitz_kkt(prog, [0])
    assert isinstance(outcome, NoCertificate)
    assert outcome.margin > 0
    assert outcome.to_dict()["outcome"] == "no_certificate"


def test_kkt_rejects_infeasible_point(problem):
    pf = problem("kkt")
    with raises(InfeasiblePointError):
        bilevel_service.check_lipschitz_kkt(program_of(pf), [1.0])


def test_t74_certificate_at_origin(problem):
    pf = problem("W")
    bp, grid = pf.require_bilevel(), pf.require_grid()
    outcome = bilevel_service.certify_T74(bp, pf.candidate("origin"), 1.0, grid, LIGHT)
    assert isinstance(outcome, StationarityCertificate)
    assert outcome.theorem == "T7.4"
    assert outcome.ledger == W_LEDGER
    np.testing.assert_allclose(outcome.u, [-1.0], atol=1e-6)
    np.testing.assert_allclose(outcome.multipliers["nu"], [1.0], atol=1e-6)
    np.testing.assert_allclose(outcome.multipliers["lambda"], [1.0], atol=1e-6)
    assert outcome.multipliers["mu"] == []
    assert max(outcome.residuals.values()) <= 1e-6
    assert outcome.to_dict()["outcome"] == "certificate"


def test_t83_certificate_at_origin(problem):
    pf = problem("W")
    bp, grid = pf.require_bilevel(), pf.require_grid()
    outcome = bilevel_service.certify_T83(bp, pf.candidate("origin"), 1.0, grid, LIGHT)
    assert isinstance(outcome, StationarityCertificate)
    assert outcome.theorem == "T8.3"
    assert outcome.ledger["regular_value_subdifferential"] == "probed"
    assert outcome.ledger["upper_regularity"] == "n/a"
    np.testing.assert_allclose(outcome.u, [-1.0], atol=1e-6)


def test_sweep_picks_smallest_kappa(problem):
    pf = problem("W")
    outcome = bilevel_service.certify_sweep("t74", pf.require_bilevel(), pf.candidate("origin"), pf.require_grid(),
                                            p=LIGHT)
    assert isinstance(outcome, StationarityCertificate)
    assert outcome.kappa == 1.0
    assert any("selected by sweep" in note for note in outcome.notes)


def test_off_candidate_has_no_certificate(problem):
    pf = problem("W")
    outcome = bilevel_service.certify_T74(pf.require_bilevel(), pf.candidate("off"), 1.0, pf.require_grid(), LIGHT)
    assert isinstance(outcome, NoCertificate)
    assert outcome.margin > 0
    assert outcome.ledger["partial_calmness"] == "failed"


def test_candidate_must_solve_lower_level(problem):
    pf = problem("W")
    with raises(InfeasiblePointError):
        bilevel_service.certify_T74(pf.require_bilevel(), [0.0, 1.0], 1.0, pf.require_grid(), LIGHT)


def test_kappa_must_be_positive(problem):
    pf = problem("W")
    with raises(InputError):
        bilevel_service.build_penalized(pf.require_bilevel(), 0.0, pf.require_grid())
    with raises(InputError):
        bilevel_service.certify_T74(pf.require_bilevel(), pf.candidate("origin"), -1.0, pf.require_grid())


def test_partial_calmness_at_origin(problem):
    pf = problem("W")
    report = bilevel_service.partial_calmness_probe(pf.require_bilevel(), pf.candidate("origin"), pf.require_grid())
    assert report.kappa_validated == 1.0
    assert report.samples > 0
    assert report.violations == []


def test_regularity_at_origin(problem):
    pf = problem("W")
    report = bilevel_service.regularity_check(pf.require_bilevel(), pf.candidate("origin"))
    assert report.lower and report.upper
    assert report.lower_witness is None


def test_regular_value_subdifferential(problem):
    pf = problem("W")
    hull = bilevel_service.regular_value_subdiff(pf.require_bilevel(), [0.0], pf.require_grid())
    assert hull is not None
    assert hull.vertices.min() <= -1.0 <= hull.vertices.max()
    assert hull.vertices.max() - hull.vertices.min() <= 1e-3


def test_penalized_grid_search(problem):
    pf = problem("W")
    result = bilevel_service.penalized_grid_search(pf.require_bilevel(), 4.0, pf.require_grid(), x_resolution=401)
    np.testing.assert_allclose(result.minimizer, [0.0, 0.0], atol=1e-9)
    assert abs(result.value) <= 1e-6
    assert result.evaluated > 0
    assert result.skipped_x == 0


def test_refined_conditions_need_unconstrained_upper_level(problem):
    pf = problem("W")
    bp = BilevelProblem(pf.lower_objective, pf.lower_constraints, pf.upper_objective, (parse_function("x", X),), 1)
    with raises(PreconditionError):
        bilevel_service.certify_T83(bp, pf.candidate("origin"), 1.0, pf.require_grid())


def test_upper_constraints_are_functions_of_x():
    with raises(DimensionMismatchError):
        BilevelProblem(parse_function("y", XY), (), parse_function("x", XY), (parse_function("x", XY),), 1)


NON_MINIMIZING = [int(k) / 100 * s for k, s in zip(np.random.default_rng(17).integers(5, 150, size=20),
                                                      np.random.default_rng(18).choice([-1, 1], size=20))]


@mark.parametrize("x", NON_MINIMIZING)
def test_feasible_non_minimizers_get_no_certificate(problem, x):
    pf = problem("W")
    try:
        outcome = bilevel_service.certify_T74(pf.require_bilevel(), [x, -x], 1.0, pf.require_grid(), LIGHT)
    except HypothesisFailure:
        return
    assert isinstance(outcome, NoCertificate) or max(outcome.residuals.values()) > 1e-6, outcome
