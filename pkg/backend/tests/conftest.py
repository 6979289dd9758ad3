from pathlib import Path

from pytest import fixture

from varcalc.core.problem_file import load_problem

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"


@fixture
def problem():
    def load(name: str):
        return load_problem(PROBLEMS / f"{name}.vp")
    return load
