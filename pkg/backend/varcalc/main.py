"""`varcalc` command line: argument parsing and dispatch to the command handlers."""
from pathlib import Path
from typing import List, Optional, Sequence
import argparse
import logging
import sys
import time

from .api.commands import (
    THEOREMS,
    CommandResult,
    cmd_certify,
    cmd_extremal,
    cmd_normalcone,
    cmd_subdiff,
    cmd_valuefn,
    cmd_verify,
    error_report,
    finish,
)
from .api.reports import Report, collect_warnings
from .core.config import settings
from .core.exceptions import ExitCode, InputError, VarcalcError
from .core.problem_file import ProblemFile, load_problem, settings_override

# Configure logging
logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print the machine-readable report")
    common.add_argument("--seed", type=int, default=None, help="seed for every sampling oracle")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="varcalc", description="Nonsmooth analysis and bilevel stationarity checks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("subdiff", parents=[common], help="subdifferentials of a function at a candidate")
    p.add_argument("file", type=Path)
    p.add_argument("--fn", required=True, help="function path, e.g. lower.objective or upper.constraint0")
    p.add_argument("--at", required=True, help="candidate name")
    p.add_argument("--oracle", action="store_true", help="add the sampled cross-check")

    p = sub.add_parser("normalcone", parents=[common], help="normal cone and coderivative at a candidate")
    p.add_argument("file", type=Path)
    p.add_argument("--at", required=True)
    p.add_argument("--target", choices=("graph", "upper"), default="graph")
    p.add_argument("--oracle", action="store_true")

    p = sub.add_parser("valuefn", parents=[common], help="grid values of the lower-level value function")
    p.add_argument("file", type=Path)
    p.add_argument("--x-range", dest="x_range", help="lo:hi:step for a single x variable")
    p.add_argument("--csv", type=Path, help="write (x, theta) rows to this file")
    p.add_argument("--at", help="candidate for the inner semicontinuity probe and estimates")

    p = sub.add_parser("certify", parents=[common], help="stationarity certificate for a candidate")
    p.add_argument("file", type=Path)
    p.add_argument("--at", required=True)
    p.add_argument("--theorem", choices=THEOREMS, default="t74")
    kappa = p.add_mutually_exclusive_group()
    kappa.add_argument("--kappa", type=float, help="penalty constant")
    kappa.add_argument("--kappa-sweep", dest="kappa_sweep", action="store_true", help="try the kappa grid in order")
    p.add_argument("--override-isc", dest="override_isc", action="store_true")
    p.add_argument("--override-calmness", dest="override_calmness", action="store_true")
    p.add_argument("--penalized", action="store_true", help="also run the penalized grid search")

    p = sub.add_parser("verify", parents=[common], help="run the property suite")
    p.add_argument("file", type=Path, nargs="?")
    p.add_argument("--builtin-corpus", dest="builtin", action="store_true")
    p.add_argument("--no-oracle", dest="oracle", action="store_false", help="skip the sampled oracle checks")

    p = sub.add_parser("extremal", parents=[common], help="extremal system of a candidate minimizer")
    p.add_argument("file", type=Path)
    p.add_argument("--fn", required=True)
    p.add_argument("--at", required=True)
    return parser


def _dispatch(args: argparse.Namespace, pf: Optional[ProblemFile], command: Sequence[str]) -> CommandResult:
    if args.command == "subdiff":
        return cmd_subdiff(pf, args.fn, args.at, args.oracle, args.seed, command)
    if args.command == "normalcone":
        return cmd_normalcone(pf, args.at, args.target, args.oracle, args.seed, command)
    if args.command == "valuefn":
        return cmd_valuefn(pf, args.x_range, args.csv, args.at, args.seed, command)
    if args.command == "certify":
        return cmd_certify(pf, args.at, args.theorem, args.kappa, args.kappa_sweep, args.override_isc,
                           args.override_calmness, args.penalized, args.seed, command)
    if args.command == "verify":
        return cmd_verify(pf, args.builtin, args.oracle, args.seed, command)
    return cmd_extremal(pf, args.fn, args.at, args.seed, command)


def run_command(args: argparse.Namespace, command: Sequence[str]) -> Report:
    """Load the problem file, apply its [params] and run one command; domain errors become reports."""
    start = time.perf_counter()
    pf: Optional[ProblemFile] = None
    with collect_warnings() as collector:
        try:
            if args.file is not None:
                pf = load_problem(args.file)
            elif args.command != "verify":
                raise InputError(f"{args.command} needs a problem file")
            with settings_override(pf.params if pf is not None else {}):
                report, code = _dispatch(args, pf, command)
        except VarcalcError as e:
            logger.error(f"{args.command} failed: {str(e)}")
            report, code = error_report(command, pf, e)
    return finish(report, code, collector.messages, time.perf_counter() - start)


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else settings.LOG_LEVEL)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    report = run_command(args, argv)
    print(report.to_json() if args.json else report.summary())
    if report.exit_code not in (ExitCode.OK, ExitCode.VERIFY_FAILED, ExitCode.NO_CERTIFICATE):
        print(f"varcalc: {report.results['error']['detail']}", file=sys.stderr)
    return report.exit_code
