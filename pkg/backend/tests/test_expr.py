import numpy as np
from hypothesis import given, settings as hsettings
from hypothesis import strategies as st
from pytest import approx, mark, raises

from varcalc.core.exceptions import ExprSyntaxError, InputError, UnknownVariableError
from varcalc.services.expr import (
    VarSpace,
    active_gradients,
    active_pattern,
    branch_gradient,
    curvature,
    directional_derivative,
    eval_function,
    evaluate_many,
    is_syntactically_convex,
    iter_branches,
    parse_function,
    to_text,
)

XY = VarSpace(("x", "y"))


def _expressions():
    leaves = st.one_of(st.sampled_from(["x", "y"]), st.integers(-5, 5).map(str))

    def extend(children):
        return st.one_of(
            st.tuples(st.sampled_from(["+", "*", "max", "min", "-"]), children, children)
              .map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
            children.map(lambda c: f"(abs {c})"),
            children.map(lambda c: f"(- {c})"),
            st.tuples(children, st.integers(0, 3)).map(lambda t: f"(pow {t[0]} {t[1]})"),
        )

    return st.recursive(leaves, extend, max_leaves=12)


@given(_expressions())
@hsettings(max_examples=200, deadline=None)
def test_print_parse_round_trip(text):
    f = parse_function(text, XY)
    assert parse_function(to_text(f), XY) == f


@mark.parametrize("text  point  value".split(),
                  (("(max x (* 2 x))", [-1, 0], -1.0),
                   ("(min (abs x) (abs (- x 1)))", [0.5, 0], 0.5),
                   ("(pow (- x y) 3)", [2, 1], 1.0),
                   ("(- (abs x) (abs y))", [-3, 4], -1.0),
                   ("(+ x y 1)  ; trailing comment", [1, 1], 3.0)))
def test_eval_function(text, point, value):
    assert eval_function(parse_function(text, XY), point) == value


def test_evaluate_many_matches_pointwise():
    f = parse_function("(max (* x y) (- x) (abs y))", XY)
    pts = np.random.default_rng(3).normal(size=(50, 2))
    expected = [eval_function(f, p) for p in pts]
    np.testing.assert_allclose(evaluate_many(f, pts), expected)


@mark.parametrize("text  exc".split(),
                  (("(+ x", ExprSyntaxError),
                   ("(foo x)", ExprSyntaxError),
                   (")", ExprSyntaxError),
                   ("x y", ExprSyntaxError),
                   ("(abs x y)", ExprSyntaxError),
                   ("z", UnknownVariableError),
                   ("(pow x -1)", InputError),
                   ("(pow x 1.5)", ExprSyntaxError)))
def test_parse_errors(text, exc):
    with raises(exc):
        parse_function(text, XY)


def test_syntax_error_carries_offset():
    with raises(ExprSyntaxError) as info:
        parse_function("(+ x", XY)
    assert info.value.offset == 4
    assert info.value.exit_code == 2


def test_varspace_rejects_duplicates():
    with raises(InputError):
        VarSpace(("x", "x"))


@mark.parametrize("text  point  direction  derivative".split(),
                  (("(abs x)", [0, 0], [1, 0], 1.0),
                   ("(abs x)", [0, 0], [-1, 0], 1.0),
                   ("(max x y)", [0, 0], [1, -1], 1.0),
                   ("(min x y)", [0, 0], [1, -1], -1.0),
                   ("(* x y)", [1, 2], [1, 1], 3.0)))
def test_directional_derivative(text, point, direction, derivative):
    f = parse_function(text, XY)
    assert directional_derivative(f, point, direction) == derivative


def test_active_pattern_at_kink():
    pattern = active_pattern(parse_function("(abs x)", XY), [0, 0])
    assert pattern.selections == {(): frozenset({0, 1})}
    assert not pattern.is_singleton()


@mark.parametrize("text  expected".split(),
                  (("(max x (* 2 x))", "convex"),
                   ("(- (abs x))", "concave"),
                   ("(+ (* x x) (* y y))", "convex"),
                   ("(* x y)", "unknown"),
                   ("(- x y)", "affine")))
def test_curvature(text, expected):
    f = parse_function(text, XY)
    assert curvature(f) == expected
    assert is_syntactically_convex(f) == (expected in ("affine", "convex"))


PIECEWISE_TEXTS = (
    "(max x (* 2 y))",
    "(abs (- (* x x) y))",
    "(min (+ x y) (pow x 3))",
    "(- (abs x) (abs y))",
    "(max (* x y) (min x (- y)) 1)",
    "(* (abs x) (+ y 1))",
    "(pow (max x y) 2)",
    "(+ (abs (- x y)) (* 3 (max 0 x)))",
)


@mark.parametrize("text", PIECEWISE_TEXTS)
def test_branch_gradient_matches_finite_differences(text):
    f = parse_function(text, XY)
    rng = np.random.default_rng(11)
    h = 1e-6
    checked = 0
    while checked < 100:
        p = rng.uniform(-2, 2, size=2)
        stencil = [p] + [p + s * h * e for e in np.eye(2) for s in (1, -1)]
        patterns = [active_pattern(f, q) for q in stencil]
        if not all(q.is_singleton() and q == patterns[0] for q in patterns):
            continue
        (branch,) = iter_branches(f, patterns[0])
        fd = [(eval_function(f, p + h * e) - eval_function(f, p - h * e)) / (2 * h) for e in np.eye(2)]
        np.testing.assert_allclose(branch_gradient(f, p, branch), fd, atol=1e-5)
        checked += 1


def _ball_point(rng, center, radius):
    d = rng.normal(size=center.shape[0])
    return center + radius * np.sqrt(rng.uniform()) * d / np.linalg.norm(d)


@mark.parametrize("text", PIECEWISE_TEXTS)
def test_local_lipschitz_bound_from_branch_gradients(text):
    f = parse_function(text, XY)
    rng = np.random.default_rng(5)
    for _ in range(3):
        x_bar = rng.uniform(-2, 2, size=2)
        # a huge activity tolerance selects every argument of every node
        every = iter_branches(f, active_pattern(f, x_bar, tau_act=1e12))
        for _ in range(20):
            u, v = _ball_point(rng, x_bar, 0.1), _ball_point(rng, x_bar, 0.1)
            ratio = abs(eval_function(f, u) - eval_function(f, v)) / np.linalg.norm(u - v)
            segment = u + np.linspace(0.0, 1.0, 51)[:, None] * (v - u)
            bound = max(sum(np.linalg.norm(branch_gradient(f, s, b)) for b in every) for s in segment)
            assert ratio <= bound * (1 + 1e-6) + 1e-12


def _polynomial_expressions():
    leaves = st.one_of(st.sampled_from(["x", "y"]), st.integers(-2, 2).map(str))

    def extend(children):
        return st.one_of(
            st.tuples(st.sampled_from(["+", "*", "max", "min", "-"]), children, children)
              .map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
            children.map(lambda c: f"(abs {c})"),
            children.map(lambda c: f"(- {c})"),
        )

    return st.recursive(leaves, extend, max_leaves=6)


GRID = (-1.0, -0.5, 0.0, 0.5, 1.0)


@given(_polynomial_expressions(),
       st.tuples(st.sampled_from(GRID), st.sampled_from(GRID)),
       st.tuples(st.integers(-2, 2), st.integers(-2, 2)))
@hsettings(max_examples=150, deadline=None)
def test_abs_behaves_as_max_of_argument_and_negation(text, point, direction):
    f = parse_function(f"(abs {text})", XY)
    g = parse_function(f"(max {text} (- {text}))", XY)
    assert active_pattern(f, point).selections[()] == active_pattern(g, point).selections[()]
    np.testing.assert_allclose(active_gradients(f, point), active_gradients(g, point))
    assert directional_derivative(f, point, direction) == approx(directional_derivative(g, point, direction))
