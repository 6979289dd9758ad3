"""Phase-1 simplex for small feasibility problems.

Bounds and inequalities are folded into standard form ``A s = b, s >= 0``,
one artificial variable is added per row, and the sum of artificials is
minimized with Bland's rule.  The phase-1 optimum doubles as the
infeasibility margin reported upstream.
"""
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union
import logging

import numpy as np

from ..core.config import settings
from ..core.exceptions import DimensionMismatchError, LPBreakdownError, RefusalError

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-12


@dataclass
class LPProblem:
    """Feasibility problem over ``n_vars`` bounded variables."""

    n_vars: int
    lower: np.ndarray
    upper: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray

    def __post_init__(self):
        n = self.n_vars
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()
        self.A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
        self.A_ub = np.asarray(self.A_ub, dtype=float).reshape(-1, n)
        self.b_ub = np.asarray(self.b_ub, dtype=float).reshape(-1)
        if self.A_eq.shape[0] != self.b_eq.shape[0] or self.A_ub.shape[0] != self.b_ub.shape[0]:
            raise DimensionMismatchError("constraint matrix and right-hand side disagree in length")
        for arr in (self.A_eq, self.b_eq, self.A_ub, self.b_ub):
            if not np.all(np.isfinite(arr)):
                raise RefusalError("LP coefficients must be finite")
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise RefusalError("LP bounds must not be NaN")

    def violation(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation of `x`."""
        worst = 0.0
        if len(self.b_eq):
            worst = max(worst, float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        if len(self.b_ub):
            worst = max(worst, float(np.max(self.A_ub @ x - self.b_ub)))
        worst = max(worst, float(np.max(self.lower - x, initial=0.0)), float(np.max(x - self.upper, initial=0.0)))
        return worst

    def scale(self) -> float:
        rhs = np.concatenate([self.b_eq, self.b_ub, [1.0]])
        return max(1.0, float(np.max(np.abs(rhs))))


@dataclass
class Feasible:
    assignment: np.ndarray
    residual: float


@dataclass
class Infeasible:
    margin: float


@dataclass
class Breakdown:
    reason: str


LPOutcome = Union[Feasible, Infeasible, Breakdown]


class LPBuilder:
    """Assemble an LPProblem from named variable blocks."""

    def __init__(self):
        self.blocks: Dict[str, Tuple[int, int]] = {}
        self._lower: List[float] = []
        self._upper: List[float] = []
        self._eq: List[Tuple[Dict[str, np.ndarray], float]] = []
        self._ub: List[Tuple[Dict[str, np.ndarray], float]] = []

    @property
    def n_vars(self) -> int:
        return len(self._lower)

    def add_block(self, name: str, size: int, lower: float = 0.0, upper: float = np.inf) -> slice:
        if name in self.blocks:
            raise ValueError(f"duplicate LP block '{name}'")
        start = self.n_vars
        self.blocks[name] = (start, start + size)
        self._lower.extend([lower] * size)
        self._upper.extend([upper] * size)
        return slice(start, start + size)

    def set_upper(self, name: str, upper: Sequence[float]):
        start, stop = self.blocks[name]
        self._upper[start:stop] = list(upper)

    def add_eq(self, terms: Dict[str, np.ndarray], rhs: Sequence[float]):
        """Rows ``sum_block terms[block] @ x[block] = rhs`` (each matrix is rows x block size)."""
        self._add(self._eq, terms, rhs)

    def add_ub(self, terms: Dict[str, np.ndarray], rhs: Sequence[float]):
        self._add(self._ub, terms, rhs)

    def _add(self, store, terms, rhs):
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        for r in range(rhs.shape[0]):
            store.append(({name: np.atleast_2d(np.asarray(m, dtype=float))[r] for name, m in terms.items()}, rhs[r]))

    def _matrix(self, store) -> Tuple[np.ndarray, np.ndarray]:
        A = np.zeros((len(store), self.n_vars))
        b = np.zeros(len(store))
        for r, (terms, rhs) in enumerate(store):
            for name, row in terms.items():
                start, stop = self.blocks[name]
                A[r, start:stop] += row
            b[r] = rhs
        return A, b

    def build(self) -> LPProblem:
        A_eq, b_eq = self._matrix(self._eq)
        A_ub, b_ub = self._matrix(self._ub)
        return LPProblem(self.n_vars, np.array(self._lower), np.array(self._upper), A_eq, b_eq, A_ub, b_ub)

    def read(self, x: np.ndarray, name: str) -> np.ndarray:
        start, stop = self.blocks[name]
        return x[start:stop]


def _standard_form(p: LPProblem):
    """Return (A, b, recover) with recover(s) -> x."""
    n = p.n_vars
    cols: List[List[Tuple[int, float]]] = []
    offset = np.zeros(n)
    bound_rows: List[Tuple[int, float]] = []
    n_std = 0
    for j in range(n):
        lo, hi = p.lower[j], p.upper[j]
        if np.isfinite(lo):
            offset[j] = lo
            cols.append([(n_std, 1.0)])
            if np.isfinite(hi):
                bound_rows.append((n_std, hi - lo))
            n_std += 1
        elif np.isfinite(hi):
            offset[j] = hi
            cols.append([(n_std, -1.0)])
            n_std += 1
        else:
            cols.append([(n_std, 1.0), (n_std + 1, -1.0)])
            n_std += 2

    def expand(A: np.ndarray) -> np.ndarray:
        out = np.zeros((A.shape[0], n_std))
        for j, entries in enumerate(cols):
            for col, coef in entries:
                out[:, col] += coef * A[:, j]
        return out

    m_eq, m_ub, m_bd = len(p.b_eq), len(p.b_ub), len(bound_rows)
    n_slack = m_ub + m_bd
    A = np.zeros((m_eq + m_ub + m_bd, n_std + n_slack))
    b = np.zeros(m_eq + m_ub + m_bd)
    if m_eq:
        A[:m_eq, :n_std] = expand(p.A_eq)
        b[:m_eq] = p.b_eq - p.A_eq @ offset
    if m_ub:
        A[m_eq:m_eq + m_ub, :n_std] = expand(p.A_ub)
        A[m_eq:m_eq + m_ub, n_std:n_std + m_ub] = np.eye(m_ub)
        b[m_eq:m_eq + m_ub] = p.b_ub - p.A_ub @ offset
    for r, (col, width) in enumerate(bound_rows):
        A[m_eq + m_ub + r, col] = 1.0
        A[m_eq + m_ub + r, n_std + m_ub + r] = 1.0
        b[m_eq + m_ub + r] = width

    def recover(s: np.ndarray) -> np.ndarray:
        x = offset.copy()
        for j, entries in enumerate(cols):
            for col, coef in entries:
                x[j] += coef * s[col]
        return x

    return A, b, recover


def lp_feasible(p: LPProblem) -> LPOutcome:
    """Decide feasibility of `p` with a phase-1 simplex using Bland's rule.

    Returns:
        Feasible with an assignment satisfying every constraint within TOL_LP
        (relative to the right-hand-side scale), Infeasible with the phase-1
        optimum as margin, or Breakdown when pivoting fails numerically.
    """
    if p.n_vars > settings.MAX_LP_VARS:
        raise RefusalError(f"LP with {p.n_vars} variables exceeds the limit of {settings.MAX_LP_VARS}")
    A, b, recover = _standard_form(p)
    m, n = A.shape
    if m == 0:
        x = recover(np.zeros(n))
        return Feasible(x, p.violation(x))

    # Flip rows so that b >= 0
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1

    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -A.sum(axis=0)
    T[m, -1] = -b.sum()
    basis = list(range(n, n + m))

    max_iter = 50 * (m + n) + 100
    for it in range(max_iter):
        if not np.all(np.isfinite(T)):
            return Breakdown(f"non-finite tableau entry after {it} pivots")
        reduced = T[m, :n + m]
        entering = next((j for j in range(n + m) if reduced[j] < -PIVOT_TOL), None)
        if entering is None:
            break
        column = T[:m, entering]
        rows = [i for i in range(m) if column[i] > PIVOT_TOL]
        if not rows:
            return Breakdown("unbounded phase-1 direction")
        ratios = [T[i, -1] / column[i] for i in rows]
        best = min(ratios)
        ties = [i for i, r in zip(rows, ratios) if r <= best + PIVOT_TOL * max(1.0, abs(best))]
        leave = min(ties, key=lambda i: basis[i])
        T[leave] /= T[leave, entering]
        for i in range(m + 1):
            if i != leave and T[i, entering] != 0.0:
                T[i] -= T[i, entering] * T[leave]
        basis[leave] = entering
    else:
        return Breakdown(f"iteration limit {max_iter} reached")

    margin = float(-T[m, -1])
    scale = max(1.0, float(np.max(b)))
    if margin > settings.TOL_LP * scale:
        return Infeasible(margin)

    # Re-solve the final basis against the original rows for accuracy
    full = np.hstack([A, np.eye(m)])
    try:
        xb = np.linalg.solve(full[:, basis], b)
    except np.linalg.LinAlgError:
        xb = T[:m, -1]
    s = np.zeros(n + m)
    s[basis] = np.where(np.abs(xb) <= settings.TOL_LP * scale, 0.0, xb)
    s = np.maximum(s, 0.0)
    x = recover(s[:n])
    residual = p.violation(x)
    if residual > settings.TOL_LP * p.scale():
        logger.warning(f"LP assignment residual {residual:.3e} above tolerance")
        return Breakdown(f"assignment residual {residual:.3e} above tolerance")
    return Feasible(x, residual)


def require(outcome: LPOutcome, context: str) -> Union[Feasible, Infeasible]:
    """Turn a Breakdown into an LPBreakdownError naming `context`."""
    if isinstance(outcome, Breakdown):
        logger.error(f"LP breakdown in {context}: {outcome.reason}")
        raise LPBreakdownError(f"numerical breakdown in {context}: {outcome.reason}")
    return outcome
