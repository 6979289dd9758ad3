import hashlib

from pytest import mark, raises

from varcalc.core.config import settings
from varcalc.core.exceptions import InputError, ProblemFileError
from varcalc.core.problem_file import load_problem, parse_problem, settings_override

SMALL = """\
# one-variable program
[vars]
x: x

[upper]
objective: (abs x)
constraint: x

[candidates]
origin: 0
"""


def test_parse_worked_bilevel_problem(problem):
    pf = problem("W")
    assert pf.x_names == ("x",)
    assert pf.y_names == ("y",)
    assert list(pf.functions()) == ["lower.objective", "lower.constraint0", "upper.objective"]
    assert pf.candidate("off") == (1.0, -1.0)
    grid = pf.require_grid()
    assert grid.y_box == [(-2.0, 2.0)]
    assert grid.resolution == 401
    assert grid.x_stencil_count == 4
    assert pf.require_bilevel().x_dim == 1


def test_digest_is_source_hash():
    pf = parse_problem(SMALL)
    assert pf.digest == hashlib.sha256(SMALL.encode("utf-8")).hexdigest()
    assert pf.grid is None


@mark.parametrize("text  line".split(),
                  (("[vars]\nx: x\n[lower]\nobjective: (+ x\n", 4),
                   ("[bogus]\n", 1),
                   ("x: x\n", 1),
                   ("[vars]\nx: x\n[candidates]\norigin: 0 0\n", 4),
                   ("[vars]\nx: x\n[candidates]\norigin: zero\n", 4),
                   ("[vars]\nx: x\n[upper]\nobjective: x\nobjective: x\n", 5),
                   ("[vars]\nx: x\n[params]\nbogus: 1\n", 4),
                   ("[vars]\nx: x\ny: y\n[upper]\nobjective: x\nconstraint: y\n", 6),
                   ("[vars]\nx: x\n[grid]\nspacing: 1\n", 4)))
def test_errors_name_their_line(text, line):
    with raises(ProblemFileError) as info:
        parse_problem(text)
    assert f"line {line}:" in info.value.detail
    assert info.value.exit_code == 2


def test_grid_needs_one_box_per_y_variable():
    with raises(ProblemFileError):
        parse_problem("[vars]\nx: x\ny: y\n[grid]\nbox: 0 1\nbox: 0 1\n")


def test_vars_need_an_x_variable():
    with raises(ProblemFileError):
        parse_problem("[vars]\ny: y\n")


def test_unknown_candidate_lists_available_names(problem):
    with raises(ProblemFileError) as info:
        problem("W").candidate("nowhere")
    assert "origin" in info.value.detail


def test_missing_sections_are_reported():
    pf = parse_problem(SMALL)
    with raises(ProblemFileError):
        pf.require_grid()
    with raises(ProblemFileError):
        pf.require_bilevel()
    with raises(ProblemFileError):
        pf.function("lower.objective")


def test_missing_file(tmp_path):
    with raises(ProblemFileError):
        load_problem(tmp_path / "absent.vp")


def test_params_apply_for_one_command_only():
    before = (settings.SEED, list(settings.KAPPA_GRID))
    with settings_override({"SEED": "7", "KAPPA_GRID": "1 2 4"}):
        assert settings.SEED == 7
        assert settings.KAPPA_GRID == [1.0, 2.0, 4.0]
    assert (settings.SEED, list(settings.KAPPA_GRID)) == before


def test_params_are_restored_after_errors():
    before = settings.SEED
    with raises(RuntimeError):
        with settings_override({"SEED": "11"}):
            raise RuntimeError("boom")
    assert settings.SEED == before


def test_bad_param_value():
    before = settings.TOL_ARG
    with raises(InputError):
        with settings_override({"TOL_ARG": "small"}):
            pass
    assert settings.TOL_ARG == before
