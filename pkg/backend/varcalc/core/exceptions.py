"""Exception hierarchy shared by the services and the command line.

Every error carries the process exit code the CLI reports for it, the same way
an HTTP error carries its status code.
"""
from typing import Any, Dict, List, Optional


class ExitCode:
    OK = 0
    VERIFY_FAILED = 1
    INPUT = 2
    REFUSAL = 3
    NO_CERTIFICATE = 4
    HYPOTHESIS = 5


class VarcalcError(Exception):
    """Base error: `detail` is the user-facing message."""

    exit_code: int = ExitCode.INPUT

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code

    def to_dict(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "detail": self.detail, "exit_code": self.exit_code}


# Input errors (exit 2)

class InputError(VarcalcError):
    exit_code = ExitCode.INPUT


class ExprSyntaxError(InputError):
    def __init__(self, message: str, offset: int, expected: Optional[str] = None):
        detail = f"{message} at offset {offset}"
        if expected:
            detail += f" (expected {expected})"
        super().__init__(detail)
        self.offset = offset
        self.expected = expected


class UnknownVariableError(InputError):
    pass


class DimensionMismatchError(InputError):
    pass


class ProblemFileError(InputError):
    pass


class InfeasibleOnBoxError(InputError):
    """Lower-level feasible set is empty on the grid box."""

    def __init__(self, detail: str, margin: float, certified_empty: bool):
        super().__init__(detail)
        self.margin = margin
        self.certified_empty = certified_empty

    def to_dict(self) -> Dict[str, Any]:
        data = super().to_dict()
        data.update({"margin": self.margin, "certified_empty": self.certified_empty})
        return data


# Refusals (exit 3)

class RefusalError(VarcalcError):
    exit_code = ExitCode.REFUSAL


class QualificationError(RefusalError):
    """A constraint qualification failed; carries the multiplier witness."""

    def __init__(self, detail: str, witness: List[float], condition: str = "qc"):
        super().__init__(detail)
        self.witness = witness
        self.condition = condition

    def to_dict(self) -> Dict[str, Any]:
        data = super().to_dict()
        data.update({"condition": self.condition, "witness": self.witness})
        return data


class CombinatorialOverflowError(RefusalError):
    pass


class NotExtremalError(RefusalError):
    def __init__(self, detail: str, k: int):
        super().__init__(detail)
        self.k = k


class ProjectionGridError(RefusalError):
    pass


class LPBreakdownError(RefusalError):
    pass


# Hypothesis and precondition failures (exit 5)

class PreconditionError(VarcalcError):
    exit_code = ExitCode.HYPOTHESIS


class InfeasiblePointError(PreconditionError):
    pass


class HypothesisFailure(PreconditionError):
    """A theorem hypothesis was checked and failed."""

    def __init__(self, detail: str, hypothesis: str, ledger: Optional[Dict[str, Any]] = None):
        super().__init__(detail)
        self.hypothesis = hypothesis
        self.ledger = ledger or {}

    def to_dict(self) -> Dict[str, Any]:
        data = super().to_dict()
        data.update({"hypothesis": self.hypothesis, "ledger": self.ledger})
        return data
