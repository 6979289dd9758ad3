"""Property suite behind `varcalc verify`: corpus answers, oracle agreement, criteria and calculus rules."""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple
import logging

import numpy as np

from ..core.exceptions import NotExtremalError, QualificationError, VarcalcError
from .calculus import calculus_service, extremal_principle_solve
from .corpus import CORPUS, GRAPHS, X, XY, CorpusEntry, GraphEntry
from .expr import FunctionDef, is_syntactically_convex, parse_function
from .normals import SetSpec, normal_cone_service, sampled_lipschitz_like_test
from .subdiff import SampleParams, subdiff_service

# Configure logging
logger = logging.getLogger(__name__)

ORACLE_TOLERANCE = 0.05
RULE_TOLERANCE = 1e-6


@dataclass
class Check:
    name: str
    passed: bool
    detail: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


@dataclass
class VerificationReport:
    checks: List[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> List[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> Dict[str, object]:
        return {
            "passed": self.passed,
            "total": len(self.checks),
            "failures": self.failures,
            "checks": [c.to_dict() for c in self.checks],
        }


def _guarded(name: str, run: Callable[[], Check]) -> Check:
    try:
        return run()
    except VarcalcError as e:
        logger.error(f"check {name} raised: {str(e)}")
        return Check(name, False, {"error": e.to_dict()})


def _same_regular(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.equals(b, RULE_TOLERANCE)


class VerificationService:
    """Runs the property suite; every check is named so a failure points at its rule."""

    @staticmethod
    def corpus_checks(entries: Sequence[CorpusEntry], p: SampleParams, oracle: bool = True) -> List[Check]:
        checks: List[Check] = []
        for entry in entries:
            f = entry.function()

            def run(entry=entry, f=f) -> List[Check]:
                result = subdiff_service.compute(f, entry.point, p, oracle=oracle)
                out = [
                    Check(f"basic:{entry.name}", result.basic.equals(entry.expected_basic(), RULE_TOLERANCE),
                          {"computed": result.basic.to_list(), "expected": entry.expected_basic().to_list()}),
                    Check(f"regular:{entry.name}", _same_regular(result.regular, entry.expected_regular()),
                          {"computed": result.regular.to_list() if result.regular is not None else None}),
                ]
                if entry.convex:
                    same = (result.regular is not None and len(result.basic.parts) == 1
                            and result.regular.equals(result.basic.parts[0], RULE_TOLERANCE))
                    out.append(Check(f"convex_reduction:{entry.name}", same))
                if oracle:
                    h = result.hausdorff
                    out.append(Check(f"oracle:{entry.name}", h is not None and h <= ORACLE_TOLERANCE,
                                     {"hausdorff": h}))
                return out

            try:
                checks.extend(run())
            except VarcalcError as e:
                logger.error(f"corpus entry {entry.name} raised: {str(e)}")
                checks.append(Check(f"basic:{entry.name}", False, {"error": e.to_dict()}))
        return checks

    @staticmethod
    def criterion_checks(graphs: Sequence[GraphEntry], p: SampleParams, sampled: bool = True) -> List[Check]:
        checks: List[Check] = []
        for g in graphs:
            def criterion(g=g) -> Check:
                ok, parts = normal_cone_service.lipschitz_like_check(g.spec, g.point, p)
                return Check(f"criterion:{g.name}", ok == g.lipschitz_like,
                             {"verdict": ok, "expected": g.lipschitz_like,
                              "coderivative_at_zero": [q.to_dict() for q in parts]})

            checks.append(_guarded(f"criterion:{g.name}", criterion))
            if sampled:
                def direct(g=g) -> Check:
                    res = sampled_lipschitz_like_test(g.spec, g.point)
                    return Check(f"sampled_lipschitz_like:{g.name}", res["verdict"] == g.lipschitz_like,
                                 {"worst_ratio": res["worst_ratio"]})

                checks.append(_guarded(f"sampled_lipschitz_like:{g.name}", direct))
        return checks

    @staticmethod
    def extremal_checks() -> List[Check]:
        lower = SetSpec.sublevel([parse_function("y", XY)])
        upper = SetSpec.sublevel([parse_function("(- y)", XY)])

        def pair() -> Check:
            trace = extremal_principle_solve([lower, upper], [0, 0], [[0, 0], [0, -1]])
            last = trace.steps[-1]
            norm_ok = all(abs(s.normalization - 1.0) <= 1e-9 for s in trace.steps)
            return Check("extremal:half_planes", last.k == 1000 and last.euler_residual <= 1e-3 and norm_ok,
                         {"euler_residual": last.euler_residual, "limit_residual": last.limit_residual})

        def control() -> Check:
            try:
                extremal_principle_solve([lower, upper], [0, 0], [[0, 0], [1, 0]])
            except NotExtremalError as e:
                return Check("extremal:control", True, {"k": e.k})
            return Check("extremal:control", False, {"detail": "shifted sets were separated"})

        return [_guarded("extremal:half_planes", pair), _guarded("extremal:control", control)]

    @staticmethod
    def rule_checks(entries: Sequence[CorpusEntry], p: SampleParams) -> List[Check]:
        checks: List[Check] = []
        for space in (X, XY):
            same = [e for e in entries if e.space == space]
            for a, b in zip(same, same[1:]):
                if a.point != b.point:
                    continue
                fa, fb = a.function(), b.function()

                def sum_rule(a=a, b=b, fa=fa, fb=fb) -> Check:
                    rep = calculus_service.verify_sum_rule(fa, [fb], a.point, p)
                    return Check(f"sum_rule:{a.name}+{b.name}", rep.holds and rep.residual <= RULE_TOLERANCE,
                                 rep.to_dict())

                def difference_rule(a=a, b=b, fa=fa, fb=fb) -> Check:
                    rep = calculus_service.verify_difference_rule(fa, fb, a.point, p=p)
                    return Check(f"difference_rule:{a.name}-{b.name}", rep.holds, rep.to_dict())

                checks.append(_guarded(f"sum_rule:{a.name}+{b.name}", sum_rule))
                checks.append(_guarded(f"difference_rule:{a.name}-{b.name}", difference_rule))
        for e in entries:
            def epigraph(e=e) -> Check:
                rep = calculus_service.epigraph_consistency_check(e.function(), e.point, p)
                return Check(f"epigraph:{e.name}", rep.holds, rep.to_dict())

            checks.append(_guarded(f"epigraph:{e.name}", epigraph))

        def qualified() -> Check:
            sets = [SetSpec.sublevel([parse_function("x", XY)]), SetSpec.sublevel([parse_function("y", XY)])]
            rep = calculus_service.verify_intersection_rule(sets, [0, 0], p)
            return Check("intersection_rule:quadrant", rep.holds, rep.to_dict())

        def refused() -> Check:
            sets = [SetSpec.sublevel([parse_function("x", X)]), SetSpec.sublevel([parse_function("(- x)", X)])]
            try:
                calculus_service.verify_intersection_rule(sets, [0], p)
            except QualificationError as e:
                return Check("intersection_rule:refusal", bool(np.allclose(e.witness, [1.0, 1.0], atol=1e-9)),
                             {"witness": e.witness})
            return Check("intersection_rule:refusal", False, {"detail": "qualification was not refused"})

        checks.append(_guarded("intersection_rule:quadrant", qualified))
        checks.append(_guarded("intersection_rule:refusal", refused))
        return checks

    @staticmethod
    def function_checks(functions: Mapping[str, FunctionDef], points: Mapping[str, Tuple[float, ...]],
                        p: SampleParams, oracle: bool = True) -> List[Check]:
        """Checks without known answers: oracle agreement, convex reduction, epigraph and rule inclusions."""
        checks: List[Check] = []
        names = list(functions)
        for cand, coords in points.items():
            for name in names:
                f = functions[name]
                x = coords[:f.dim]
                label = f"{name}@{cand}"

                def single(f=f, x=x, label=label) -> List[Check]:
                    result = subdiff_service.compute(f, x, p, oracle=oracle)
                    out = []
                    if is_syntactically_convex(f):
                        same = (result.regular is not None and len(result.basic.parts) == 1
                                and result.regular.equals(result.basic.parts[0], RULE_TOLERANCE))
                        out.append(Check(f"convex_reduction:{label}", same))
                    if oracle:
                        h = result.hausdorff
                        out.append(Check(f"oracle:{label}", h is not None and h <= ORACLE_TOLERANCE, {"hausdorff": h}))
                    rep = calculus_service.epigraph_consistency_check(f, x, p)
                    out.append(Check(f"epigraph:{label}", rep.holds, rep.to_dict()))
                    return out

                try:
                    checks.extend(single())
                except VarcalcError as e:
                    logger.error(f"checks for {label} raised: {str(e)}")
                    checks.append(Check(f"subdiff:{label}", False, {"error": e.to_dict()}))
            for a, b in zip(names, names[1:]):
                fa, fb = functions[a], functions[b]
                if fa.space != fb.space:
                    continue
                x = coords[:fa.dim]

                def sum_rule(a=a, b=b, fa=fa, fb=fb, x=x) -> Check:
                    rep = calculus_service.verify_sum_rule(fa, [fb], x, p)
                    return Check(f"sum_rule:{a}+{b}@{cand}", rep.holds and rep.residual <= RULE_TOLERANCE,
                                 rep.to_dict())

                def difference_rule(a=a, b=b, fa=fa, fb=fb, x=x) -> Check:
                    rep = calculus_service.verify_difference_rule(fa, fb, x, p=p)
                    return Check(f"difference_rule:{a}-{b}@{cand}", rep.holds, rep.to_dict())

                checks.append(_guarded(f"sum_rule:{a}+{b}@{cand}", sum_rule))
                checks.append(_guarded(f"difference_rule:{a}-{b}@{cand}", difference_rule))
        return checks

    @staticmethod
    def file_suite(functions: Mapping[str, FunctionDef], points: Mapping[str, Tuple[float, ...]],
                   p: Optional[SampleParams] = None, oracle: bool = True) -> VerificationReport:
        p = p or SampleParams()
        report = VerificationReport(VerificationService.function_checks(functions, points, p, oracle))
        report.checks.extend(VerificationService.extremal_checks())
        if not report.passed:
            logger.warning(f"verification failed: {', '.join(report.failures)}")
        return report

    @staticmethod
    def run_suite(entries: Optional[Sequence[CorpusEntry]] = None, graphs: Optional[Sequence[GraphEntry]] = None,
                  p: Optional[SampleParams] = None, oracle: bool = True, rules: bool = True) -> VerificationReport:
        p = p or SampleParams()
        entries = CORPUS if entries is None else entries
        graphs = GRAPHS if graphs is None else graphs
        report = VerificationReport()
        report.checks.extend(VerificationService.corpus_checks(entries, p, oracle))
        report.checks.extend(VerificationService.criterion_checks(graphs, p))
        if rules:
            report.checks.extend(VerificationService.extremal_checks())
            report.checks.extend(VerificationService.rule_checks(entries, p))
        if not report.passed:
            logger.warning(f"verification failed: {', '.join(report.failures)}")
        return report


verification_service = VerificationService()
