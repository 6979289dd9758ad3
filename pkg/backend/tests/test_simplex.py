import numpy as np
from hypothesis import given, settings as hsettings
from hypothesis import strategies as st
from pytest import mark, raises

from varcalc.core.exceptions import LPBreakdownError, RefusalError
from varcalc.services.simplex import Breakdown, Feasible, Infeasible, LPBuilder, LPProblem, lp_feasible, require


def test_simplex_feasible_point_satisfies_rows():
    # x + y = 1, x - y <= 0.2, x, y >= 0
    p = LPProblem(2, 0.0, np.inf, [[1, 1]], [1], [[1, -1]], [0.2])
    outcome = lp_feasible(p)
    assert isinstance(outcome, Feasible)
    x = outcome.assignment
    assert abs(x.sum() - 1) <= 1e-9
    assert x[0] - x[1] <= 0.2 + 1e-9
    assert np.all(x >= -1e-12)


def test_simplex_infeasible_margin():
    # x + y = 1 and x + y = 3 with x, y >= 0
    p = LPProblem(2, 0.0, np.inf, [[1, 1], [1, 1]], [1, 3], np.zeros((0, 2)), [])
    outcome = lp_feasible(p)
    assert isinstance(outcome, Infeasible)
    assert outcome.margin > 1e-6


@mark.parametrize("upper  feasible".split(),
                  ((2.0, True),
                   (0.5, False)))
def test_simplex_upper_bounds(upper, feasible):
    # x = 1 with 0 <= x <= upper
    p = LPProblem(1, 0.0, upper, [[1]], [1], np.zeros((0, 1)), [])
    assert isinstance(lp_feasible(p), Feasible) == feasible


def test_simplex_free_and_negative_variables():
    # x free, y <= -1, x + y = 0.5
    p = LPProblem(2, [-np.inf, -np.inf], [np.inf, -1.0], [[1, 1]], [0.5], np.zeros((0, 2)), [])
    outcome = lp_feasible(p)
    assert isinstance(outcome, Feasible)
    x, y = outcome.assignment
    assert y <= -1 + 1e-9
    assert abs(x + y - 0.5) <= 1e-9


def test_builder_blocks():
    lp = LPBuilder()
    lp.add_block("lam", 2)
    lp.add_block("mu", 1, lower=-np.inf)
    lp.add_eq({"lam": [[1, 1]]}, [1])
    lp.add_eq({"lam": [[1, -1]], "mu": [[1]]}, [0])
    outcome = lp_feasible(lp.build())
    assert isinstance(outcome, Feasible)
    lam = lp.read(outcome.assignment, "lam")
    mu = lp.read(outcome.assignment, "mu")
    assert abs(lam.sum() - 1) <= 1e-9
    assert abs(lam[0] - lam[1] + mu[0]) <= 1e-9


def test_builder_rejects_duplicate_block():
    lp = LPBuilder()
    lp.add_block("lam", 2)
    with raises(ValueError):
        lp.add_block("lam", 1)


def test_problem_rejects_non_finite_rows():
    with raises(RefusalError):
        LPProblem(1, 0.0, np.inf, [[np.nan]], [1], np.zeros((0, 1)), [])


def test_too_many_variables_refused():
    from varcalc.core.config import settings

    n = settings.MAX_LP_VARS + 1
    with raises(RefusalError):
        lp_feasible(LPProblem(n, 0.0, np.inf, np.ones((1, n)), [1], np.zeros((0, n)), []))


def test_require_raises_on_breakdown():
    with raises(LPBreakdownError):
        require(Breakdown("unbounded phase-1 direction"), "unit test")
    assert isinstance(require(Infeasible(1.0), "unit test"), Infeasible)


@given(st.integers(1, 4), st.integers(0, 10_000))
@hsettings(max_examples=40, deadline=None)
def test_simplex_agrees_with_known_feasible_point(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(2, n))
    x0 = rng.uniform(0, 1, size=n)
    p = LPProblem(n, 0.0, 1.0, A, A @ x0, np.zeros((0, n)), [])
    outcome = lp_feasible(p)
    assert isinstance(outcome, Feasible)
    assert p.violation(outcome.assignment) <= 1e-8 * max(1.0, float(np.max(np.abs(A @ x0))))
