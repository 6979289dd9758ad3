import json
from dataclasses import replace
from pathlib import Path

from pytest import raises

from varcalc.api.reports import Report, plain
from varcalc.main import main
from varcalc.services.corpus import corpus_entry
from varcalc.services.subdiff import SampleParams
from varcalc.services.verification import verification_service

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"


def run_json(capsys, *argv):
    code = main([*argv, "--json"])
    report = json.loads(capsys.readouterr().out)
    assert report["exit_code"] == code
    return code, report


def test_valuefn_writes_csv(tmp_path, capsys):
    out = tmp_path / "theta.csv"
    assert main(["valuefn", str(PROBLEMS / "W.vp"), "--x-range", "-1:1:0.1", "--csv", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 22
    assert lines[0] == "x_0,theta"
    for line in lines[1:]:
        x, theta = map(float, line.split(","))
        assert abs(theta + x) <= 1e-6
    assert "valuefn" in capsys.readouterr().out


def test_valuefn_reports_withheld_estimate(capsys):
    code, report = run_json(capsys, "valuefn", str(PROBLEMS / "saddle.vp"), "--at", "top")
    assert code == 0
    assert report["ledger"] == {"inner_semicontinuity": "failed"}
    assert report["results"]["estimate"] is None
    assert report["results"]["lipschitz"]["verdict"] is True
    assert any("withheld" in w for w in report["warnings"])


def test_missing_grid_is_an_input_error(capsys):
    code, report = run_json(capsys, "valuefn", str(PROBLEMS / "halfplane.vp"), "--x-range", "0:1:0.5")
    assert code == 2
    assert report["results"]["error"]["error"] == "ProblemFileError"


def test_unknown_candidate(capsys):
    code, report = run_json(capsys, "certify", str(PROBLEMS / "W.vp"), "--at", "nowhere", "--kappa", "1")
    assert code == 2
    assert "origin" in report["results"]["error"]["detail"]


def test_certify_t74_at_origin(capsys):
    code, report = run_json(capsys, "certify", str(PROBLEMS / "W.vp"), "--at", "origin", "--theorem", "t74")
    assert code == 0
    assert report["schema_version"] == 1
    assert report["results"]["kappa_source"] == "probe"
    assert report["results"]["outcome"]["kappa"] == 1.0
    assert report["ledger"]["partial_calmness"] == "probed"
    assert report["determinism_digest"]


def test_certify_off_candidate_has_no_certificate(capsys):
    code, report = run_json(capsys, "certify", str(PROBLEMS / "W.vp"), "--at", "off", "--kappa", "1")
    assert code == 4
    assert report["results"]["outcome"]["outcome"] == "no_certificate"


def test_refined_conditions_refuse_upper_constraints(tmp_path, capsys):
    source = (PROBLEMS / "W.vp").read_text().replace("[upper]\n", "[upper]\nconstraint: (- x 5)\n")
    path = tmp_path / "constrained.vp"
    path.write_text(source)
    code, _ = run_json(capsys, "certify", str(path), "--at", "origin", "--theorem", "t83", "--kappa", "1")
    assert code == 5


def test_lagrangian_certificates(capsys):
    code, report = run_json(capsys, "certify", str(PROBLEMS / "fritz_john.vp"), "--at", "origin", "--theorem", "t61")
    assert code == 0
    assert report["ledger"]["mfcq"] == "failed"
    code, report = run_json(capsys, "certify", str(PROBLEMS / "kkt.vp"), "--at", "origin", "--theorem", "t61")
    assert code == 0
    assert report["results"]["outcome"]["multipliers"]["lambda0"] == [1.0]


def test_reports_are_deterministic(capsys):
    argv = ("subdiff", str(PROBLEMS / "kkt.vp"), "--fn", "upper.objective", "--at", "origin", "--oracle",
            "--seed", "7")
    _, first = run_json(capsys, *argv)
    _, second = run_json(capsys, *argv)
    assert first["determinism_digest"] == second["determinism_digest"]
    assert first["input_digest"] == second["input_digest"]


def test_extremal_command(capsys):
    code, report = run_json(capsys, "extremal", str(PROBLEMS / "halfplane.vp"), "--fn", "upper.objective",
                            "--at", "origin")
    assert code == 0
    assert report["results"]["final"]["euler_residual"] <= 1e-3


def test_builtin_corpus_passes(capsys):
    code, report = run_json(capsys, "verify", "--builtin-corpus")
    assert code == 0
    assert report["results"]["passed"]
    assert report["results"]["failures"] == []


def test_wrong_expectation_is_caught():
    entry = replace(corpus_entry("abs"), basic=(((-2.0,), (2.0,)),))
    checks = verification_service.corpus_checks([entry], SampleParams(), oracle=False)
    failed = [c.name for c in checks if not c.passed]
    assert failed == ["basic:abs"]


def test_ledger_states_are_closed():
    with raises(ValueError):
        Report(command=["certify"], ledger={"partial_calmness": "maybe"}).finalize()


def test_plain_values():
    assert plain({"a": float("inf"), "b": (1, 2.5)}) == {"a": "inf", "b": [1, 2.5]}


def test_verify_problem_file(capsys):
    code, report = run_json(capsys, "verify", str(PROBLEMS / "kkt.vp"), "--no-oracle")
    assert code == 0
    assert report["results"]["source"] == "file"
    names = [c["name"] for c in report["results"]["checks"]]
    assert "sum_rule:upper.objective+upper.constraint0@origin" in names
    assert "convex_reduction:upper.objective@origin" in names


def test_normal_cone_to_lower_level_graph(capsys):
    code, report = run_json(capsys, "normalcone", str(PROBLEMS / "W.vp"), "--at", "origin")
    assert code == 0
    assert report["ledger"] == {"qualification": "verified"}
    assert report["results"]["lipschitz_like"] is True
    assert abs(report["results"]["modulus"] - 1.0) <= 1e-6
