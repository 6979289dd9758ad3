"""Command handlers behind the `varcalc` CLI.

Each handler takes a parsed problem file plus the command's options and
returns a finished `Report` together with the process exit code.  Domain
errors are not caught here; `main.run_command` turns them into reports.
"""
from pathlib import Path
from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np

from ..core.config import settings
from ..core.exceptions import ExitCode, HypothesisFailure, InputError, ProblemFileError, VarcalcError
from ..core.problem_file import ProblemFile
from ..services.bilevel import LipschitzProgram, StationarityCertificate, bilevel_service
from ..services.calculus import extremal_principle_solve, minimizer_extremal_system
from ..services.expr import FunctionDef, const, to_text
from ..services.normals import SetSpec, angular_gap, normal_cone_service, sampled_normal_cone_oracle
from ..services.subdiff import SampleParams, subdiff_service
from ..services.valuefn import ParametricProblem, value_service
from ..services.verification import ORACLE_TOLERANCE, verification_service
from .reports import LEDGER_STATES, Report, write_csv

# Configure logging
logger = logging.getLogger(__name__)

CommandResult = Tuple[Report, int]
THEOREMS = ("t61", "t74", "t83")


def sample_params(seed: Optional[int] = None) -> SampleParams:
    return SampleParams(seed=seed) if seed is not None else SampleParams()


def _report(command: Sequence[str], pf: Optional[ProblemFile]) -> Report:
    return Report(command=list(command), input_digest=pf.digest if pf is not None else None)


def _lower_problem(pf: ProblemFile) -> ParametricProblem:
    if not pf.y_names:
        raise ProblemFileError("the lower-level problem needs y variables in [vars]")
    if pf.lower_objective is None:
        raise ProblemFileError("the lower-level problem needs a [lower] objective")
    return ParametricProblem(pf.lower_objective, tuple(pf.lower_constraints), pf.x_dim)


def parse_range(text: str) -> np.ndarray:
    """`lo:hi:step` to the points lo, lo + step, ..., hi (hi included when it lies on the lattice)."""
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise InputError(f"--x-range expects 'lo:hi:step', got '{text}'")
    if step <= 0 or hi < lo:
        raise InputError(f"--x-range needs lo <= hi and a positive step, got '{text}'")
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def cmd_subdiff(pf: ProblemFile, fn: str, at: str, oracle: bool = False, seed: Optional[int] = None,
                command: Sequence[str] = ()) -> CommandResult:
    """Regular, basic and singular subdifferentials of one function at one candidate."""
    f = pf.function(fn)
    point = pf.point_for(f, at)
    p = sample_params(seed)
    result = subdiff_service.compute(f, point, p, oracle=oracle)
    report = _report(command, pf)
    report.results = {"function": fn, "expression": to_text(f), "point": list(point), **result.to_dict()}
    if result.regular is None:
        logger.info(f"regular subdifferential of {fn} is empty at {at}")
    if oracle and result.hausdorff is not None and result.hausdorff > ORACLE_TOLERANCE:
        logger.warning(f"sampled oracle disagrees with the symbolic answer (Hausdorff {result.hausdorff:.3e})")
    return report, ExitCode.OK


def cmd_normalcone(pf: ProblemFile, at: str, target: str = "graph", oracle: bool = False,
                   seed: Optional[int] = None, command: Sequence[str] = ()) -> CommandResult:
    """Normal cone to gph F (lower-level feasible map) or to the upper-level constraint set."""
    p = sample_params(seed)
    if target == "graph":
        if not pf.y_names:
            raise ProblemFileError("target 'graph' needs y variables in [vars]")
        constraints = pf.lower_constraints or [FunctionDef(pf.space, const(0.0))]
        spec = SetSpec.graph(constraints, pf.x_dim)
        point = pf.candidate(at)
    elif target == "upper":
        if not pf.upper_constraints:
            raise ProblemFileError("target 'upper' needs [upper] constraints")
        spec = SetSpec.sublevel(pf.upper_constraints)
        point = pf.point_for(pf.upper_constraints[0], at)
    else:
        raise InputError(f"unknown normal-cone target '{target}' (expected graph or upper)")

    cone = normal_cone_service.normal_cone(spec, point, p)
    report = _report(command, pf)
    report.results = {
        "target": target,
        "set": spec.describe(),
        "point": list(point),
        "normal_cone": cone.to_dict(),
        "prenormal_cone": normal_cone_service.prenormal_cone(spec, point, p).to_dict(),
    }
    if cone.qualification == "verified":
        report.ledger["qualification"] = "verified"
    if target == "graph":
        verdict, parts = normal_cone_service.lipschitz_like_check(spec, point, p)
        report.results["coderivative_at_zero"] = [q.to_dict() for q in parts]
        report.results["lipschitz_like"] = verdict
        report.results["modulus"] = normal_cone_service.coderivative_norm(spec, point, p) if verdict else None
    if oracle:
        sampled = sampled_normal_cone_oracle(spec, point, p)
        report.results["oracle"] = sampled.to_dict()
        report.results["angular_gap"] = angular_gap(sampled.directions, cone.cones) if len(sampled.directions) else None
    return report, ExitCode.OK


def cmd_valuefn(pf: ProblemFile, x_range: Optional[str] = None, csv_path: Optional[Path] = None,
                at: Optional[str] = None, seed: Optional[int] = None, command: Sequence[str] = ()) -> CommandResult:
    """Grid values of ϑ with argmin sets, optionally the ISC probe and ∂ϑ estimates at a candidate."""
    grid = pf.require_grid()
    prob = _lower_problem(pf)
    if grid.per_axis() != grid.resolution:
        logger.warning(f"grid resolution reduced from {grid.resolution} to {grid.per_axis()} per axis")
    if x_range is not None:
        if pf.x_dim != 1:
            raise InputError(f"--x-range needs a single x variable, the problem has {pf.x_dim}")
        xs = parse_range(x_range)[:, None]
    else:
        if not pf.candidates:
            raise ProblemFileError("valuefn needs --x-range or a [candidates] section")
        xs = np.array([c[:pf.x_dim] for c in pf.candidates.values()])
        xs = xs[np.sort(np.unique(xs, axis=0, return_index=True)[1])]
    samples = value_service.value_on_grid(prob, xs, grid)
    report = _report(command, pf)
    report.results = {"grid_step": grid.step(), "samples": [s.to_dict() for s in samples]}
    if csv_path is not None:
        header = [f"x_{i}" for i in range(pf.x_dim)] + ["theta"]
        write_csv(csv_path, header, [s.x + [s.theta] for s in samples])
        report.results["csv"] = str(csv_path)

    if at is not None:
        p = sample_params(seed)
        z = pf.candidate(at)
        probe = value_service.inner_semicontinuity_probe(prob, z, grid, p)
        report.results["isc_probe"] = probe.to_dict()
        report.ledger["inner_semicontinuity"] = "probed" if probe.verdict else "failed"
        if probe.verdict:
            report.results["estimate"] = value_service.value_subdiff_estimate(prob, z, grid, p).to_dict()
        else:
            report.results["estimate"] = None
            logger.warning(f"subdifferential estimate withheld at {at}: inner semicontinuity probe failed")
        report.results["lipschitz"] = value_service.lipschitz_verdict(prob, z, grid, p)
    return report, ExitCode.OK


def _lipschitz_program(pf: ProblemFile) -> LipschitzProgram:
    """The upper-level program over all variables, with lower-level constraints kept as ordinary constraints."""
    objective = pf.upper_objective or pf.lower_objective
    if objective is None:
        raise ProblemFileError("t61 needs an objective in [upper] or [lower]")
    if pf.y_names:
        uppers = [g.embed(pf.space, list(range(pf.x_dim))) for g in pf.upper_constraints]
    else:
        uppers = list(pf.upper_constraints)
    return LipschitzProgram(objective, tuple(uppers + list(pf.lower_constraints)))


def cmd_certify(pf: ProblemFile, at: str, theorem: str = "t74", kappa: Optional[float] = None,
                kappa_sweep: bool = False, override_isc: bool = False, override_calmness: bool = False,
                penalized: bool = False, seed: Optional[int] = None, command: Sequence[str] = ()) -> CommandResult:
    """Stationarity certificate for one candidate; exit 4 when no multipliers exist."""
    if theorem not in THEOREMS:
        raise InputError(f"unknown theorem '{theorem}' (expected one of {', '.join(THEOREMS)})")
    p = sample_params(seed)
    point = pf.candidate(at)
    report = _report(command, pf)
    report.results = {"theorem": theorem, "candidate": at, "point": list(point)}

    if theorem == "t61":
        outcome = bilevel_service.check_lipschitz_kkt(_lipschitz_program(pf), point, p)
    else:
        bp = pf.require_bilevel()
        grid = pf.require_grid()
        overrides = {"override_isc": override_isc, "override_calmness": override_calmness}
        if kappa_sweep:
            outcome = bilevel_service.certify_sweep(theorem, bp, point, grid, p=p, **overrides)
            report.results["kappa_source"] = "sweep"
        else:
            if kappa is None:
                probe = bilevel_service.partial_calmness_probe(bp, point, grid, p=p)
                report.results["calmness_probe"] = probe.to_dict()
                kappa = probe.kappa_validated or max(settings.KAPPA_GRID)
                report.results["kappa_source"] = "probe" if probe.kappa_validated else "grid_maximum"
            else:
                report.results["kappa_source"] = "flag"
            run = bilevel_service.certify_T74 if theorem == "t74" else bilevel_service.certify_T83
            outcome = run(bp, point, kappa, grid, p, **overrides)
        if penalized:
            search_kappa = outcome.kappa if isinstance(outcome, StationarityCertificate) else kappa
            if search_kappa is not None:
                report.results["penalized_search"] = bilevel_service.penalized_grid_search(
                    bp, search_kappa, grid, pf.x_box).to_dict()

    report.results["outcome"] = outcome.to_dict()
    report.ledger = dict(outcome.ledger)
    if isinstance(outcome, StationarityCertificate):
        return report, ExitCode.OK
    logger.info(f"no certificate for {at} under {theorem} (margin {outcome.margin:.3e})")
    return report, ExitCode.NO_CERTIFICATE


def cmd_verify(pf: Optional[ProblemFile] = None, builtin: bool = False, oracle: bool = True,
               seed: Optional[int] = None, command: Sequence[str] = ()) -> CommandResult:
    """Property suite over the shipped corpus or over every function of a problem file."""
    p = sample_params(seed)
    if pf is None or builtin:
        suite = verification_service.run_suite(p=p, oracle=oracle)
    else:
        functions = pf.functions()
        points = {name: pf.candidate(name) for name in pf.candidates}
        if not functions or not points:
            raise ProblemFileError("verify needs at least one function and one candidate")
        suite = verification_service.file_suite(functions, points, p, oracle)
    report = _report(command, pf if not builtin else None)
    report.results = {"source": "builtin-corpus" if pf is None or builtin else "file", **suite.to_dict()}
    return report, ExitCode.OK if suite.passed else ExitCode.VERIFY_FAILED


def _omega(pf: ProblemFile, fn: str, f: FunctionDef) -> Optional[SetSpec]:
    """Constraint set for the extremal system: same-section constraints that share the function's variables."""
    section, _, name = fn.partition(".")
    if name != "objective":
        return None
    constraints = [g for g in getattr(pf, f"{section}_constraints") if g.space == f.space]
    return SetSpec.sublevel(constraints) if constraints else None


def cmd_extremal(pf: ProblemFile, fn: str, at: str, seed: Optional[int] = None,
                 command: Sequence[str] = ()) -> CommandResult:
    """Run the extremal scheme on {epi f, Ω × {f(x̄)}} for a candidate minimizer x̄ of f on Ω."""
    f = pf.function(fn)
    x = pf.point_for(f, at)
    omega = _omega(pf, fn, f)
    sets, point, shifts = minimizer_extremal_system(f, x, omega)
    trace = extremal_principle_solve(sets, point, shifts)
    last = trace.steps[-1]
    report = _report(command, pf)
    report.results = {
        "function": fn,
        "constraint_set": omega.describe() if omega is not None else "whole space",
        "final": {"k": last.k, "euler_residual": last.euler_residual, "limit_residual": last.limit_residual,
                  "normals": last.normals},
        "trace": trace.to_dict(),
    }
    return report, ExitCode.OK


def error_report(command: Sequence[str], pf: Optional[ProblemFile], error: VarcalcError) -> CommandResult:
    """Report for a command that ended in a domain error; the ledger survives hypothesis failures."""
    report = _report(command, pf)
    report.results = {"error": error.to_dict()}
    if isinstance(error, HypothesisFailure):
        report.ledger = {k: v if v in LEDGER_STATES else "failed" for k, v in error.ledger.items()}
    return report, error.exit_code


def finish(report: Report, code: int, warnings: List[str], seconds: float) -> Report:
    report.exit_code = int(code)
    report.warnings = list(warnings)
    report.timing = {"seconds": round(seconds, 6)}
    return report.finalize()
