"""Optimistic bilevel programs: penalization, hypothesis probes and stationarity certificates.

Every certificate is an LP feasibility witness over subdifferential polytopes.
Branches of each basic subdifferential union are enumerated in a fixed
order and the first feasible combination is reported.
"""
from dataclasses import dataclass, field
from itertools import combinations, product
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np

from ..core.config import settings
from ..core.exceptions import (
    CombinatorialOverflowError,
    DimensionMismatchError,
    HypothesisFailure,
    InfeasibleOnBoxError,
    InfeasiblePointError,
    InputError,
    PreconditionError,
)
from .convgeom import Membership, Polytope, clip_polytope, minkowski_membership, unit_directions
from .expr import FunctionDef, VarSpace, as_point, eval_function, evaluate_many
from .simplex import Feasible, LPBuilder, lp_feasible, require
from .subdiff import SampleParams, sample_directions, subdiff_service
from .valuefn import GridSpec, ParametricProblem, value_service

# Configure logging
logger = logging.getLogger(__name__)

LOCAL_CAVEAT = (
    "A certificate shows that the candidate satisfies necessary optimality conditions under the listed "
    "hypotheses. It does not show that the candidate is a local or global solution of the bilevel program."
)
REGULAR_BOX = 1e3


@dataclass(frozen=True)
class BilevelProblem:
    lower_cost: FunctionDef
    lower_constraints: Tuple[FunctionDef, ...]
    upper_cost: FunctionDef
    upper_constraints: Tuple[FunctionDef, ...]
    x_dim: int

    def __post_init__(self):
        object.__setattr__(self, "lower_constraints", tuple(self.lower_constraints))
        object.__setattr__(self, "upper_constraints", tuple(self.upper_constraints))
        space = self.lower_cost.space
        for f in self.lower_constraints + (self.upper_cost,):
            if f.space != space:
                raise DimensionMismatchError("lower- and upper-level functions must share the (x, y) variable space")
        for g in self.upper_constraints:
            if g.space != self.x_space:
                raise DimensionMismatchError("upper-level constraints must be functions of x alone")

    @property
    def space(self) -> VarSpace:
        return self.lower_cost.space

    @property
    def x_space(self) -> VarSpace:
        return VarSpace(self.lower_cost.space.names[:self.x_dim])

    @property
    def y_dim(self) -> int:
        return self.lower_cost.dim - self.x_dim

    @property
    def lower(self) -> ParametricProblem:
        return ParametricProblem(self.lower_cost, self.lower_constraints, self.x_dim)

    def lifted_upper_constraints(self) -> List[FunctionDef]:
        return [g.embed(self.space, list(range(self.x_dim))) for g in self.upper_constraints]


@dataclass(frozen=True)
class LipschitzProgram:
    """minimize objective(x) subject to every inequality constraint <= 0."""

    objective: FunctionDef
    inequality_constraints: Tuple[FunctionDef, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "inequality_constraints", tuple(self.inequality_constraints))
        for f in self.inequality_constraints:
            if f.space != self.objective.space:
                raise DimensionMismatchError("program constraints must share the objective's variable space")


@dataclass
class CalmnessProbeReport:
    kappa_validated: Optional[float]
    kappa_grid: List[float]
    violations: List[Dict[str, object]] = field(default_factory=list)
    samples: int = 0
    radii: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return dict(self.__dict__)


@dataclass
class RegularityReport:
    lower: bool
    upper: bool
    lower_witness: Optional[Dict[str, object]] = None
    upper_witness: Optional[Dict[str, object]] = None

    def to_dict(self) -> Dict[str, object]:
        return dict(self.__dict__)


@dataclass
class StationarityCertificate:
    theorem: str
    multipliers: Dict[str, List[float]]
    kappa: Optional[float]
    u: Optional[List[float]]
    branch_choices: Dict[str, int]
    residuals: Dict[str, float]
    ledger: Dict[str, str]
    notes: List[str] = field(default_factory=list)
    caveat: str = LOCAL_CAVEAT

    def to_dict(self) -> Dict[str, object]:
        return {"outcome": "certificate", **self.__dict__}


@dataclass
class NoCertificate:
    theorem: str
    margin: float
    branches_tried: int
    ledger: Dict[str, str]
    notes: List[str] = field(default_factory=list)
    caveat: str = LOCAL_CAVEAT

    def to_dict(self) -> Dict[str, object]:
        return {"outcome": "no_certificate", **self.__dict__}


Outcome = Union[StationarityCertificate, NoCertificate]


@dataclass
class PenalizedProgram:
    """minimize ψ + κ(φ - ϑ) over f_i <= 0, g_j <= 0 with ϑ evaluated on the grid.

    The ϑ term is not an expression, so the program has no symbolic
    subdifferential; certificates use the value-function estimates instead.
    """

    problem: BilevelProblem
    kappa: float
    grid: GridSpec
    expression_objective: bool = False

    def penalty(self, points) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(points, dtype=float))
        thetas = np.array([s.theta for s in value_service.value_on_grid(self.problem.lower, Z[:, :self.problem.x_dim],
                                                                        self.grid)])
        return evaluate_many(self.problem.lower_cost, Z) - thetas

    def objective(self, points) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(points, dtype=float))
        return evaluate_many(self.problem.upper_cost, Z) + self.kappa * self.penalty(Z)

    def feasible(self, points) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(points, dtype=float))
        mask = np.ones(len(Z), dtype=bool)
        for f in list(self.problem.lower_constraints) + self.problem.lifted_upper_constraints():
            mask &= evaluate_many(f, Z) <= settings.TOL_GEOM
        return mask


@dataclass
class PenalizedSearchResult:
    minimizer: List[float]
    value: float
    kappa: float
    evaluated: int
    skipped_x: int = 0

    def to_dict(self) -> Dict[str, object]:
        return dict(self.__dict__)


def _parts(f: FunctionDef, z: np.ndarray, p: SampleParams) -> List[Polytope]:
    return list(subdiff_service.basic_subdifferential(f, z, p)[0].parts)


def _hull(f: FunctionDef, z: np.ndarray, p: SampleParams) -> Polytope:
    return subdiff_service.basic_subdifferential(f, z, p)[0].hull()


def _check_branch_count(counts: Sequence[int], context: str):
    total = math.prod(counts)
    if total > settings.BRANCH_CAP:
        logger.error(f"{context}: {total} branch combinations exceed the cap")
        raise CombinatorialOverflowError(f"{context} needs {total} branch combinations (cap {settings.BRANCH_CAP})")


def _active(constraints: Sequence[FunctionDef], z: np.ndarray) -> List[int]:
    return [i for i, f in enumerate(constraints) if abs(eval_function(f, z)) <= settings.TOL_GEOM]


def _zero_combination(parts: Sequence[Polytope]) -> Union[Tuple[List[float], List[Optional[List[float]]], float], float]:
    """λ >= 0 with Σλ = 1 and 0 ∈ Σ λ_j parts_j, or the LP infeasibility margin.

    A feasible result also carries the sup-norm of the recombined vector
    Σ_j V_j w_j, recomputed from the LP weights.
    """
    b = LPBuilder()
    terms = {}
    for j, part in enumerate(parts):
        b.add_block(f"w{j}", part.vertices.shape[0])
        terms[f"w{j}"] = part.vertices.T
    b.add_eq(terms, np.zeros(parts[0].dim))
    b.add_eq({name: np.ones((1, m.shape[1])) for name, m in terms.items()}, [1.0])
    outcome = require(lp_feasible(b.build()), "zero-combination test")
    if not isinstance(outcome, Feasible):
        return outcome.margin
    lams, vecs = [], []
    combined = np.zeros(parts[0].dim)
    for j, part in enumerate(parts):
        w = b.read(outcome.assignment, f"w{j}")
        lam = float(w.sum())
        lams.append(lam)
        combined += part.vertices.T @ w
        vecs.append((part.vertices.T @ w / lam).tolist() if lam > settings.TOL_LP else None)
    return lams, vecs, float(np.max(np.abs(combined)))


def _regularity(parts_by_index: Dict[int, List[Polytope]]) -> Tuple[bool, Optional[Dict[str, object]]]:
    """Regular iff no branch combination admits a normalized zero combination."""
    if not parts_by_index:
        return True, None
    keys = sorted(parts_by_index)
    _check_branch_count([len(parts_by_index[k]) for k in keys], "regularity check")
    for choice in product(*[range(len(parts_by_index[k])) for k in keys]):
        res = _zero_combination([parts_by_index[k][c] for k, c in zip(keys, choice)])
        if not isinstance(res, float):
            lams, vecs, _ = res
            return False, {"constraints": keys, "multipliers": lams, "subgradients": vecs, "branches": list(choice)}
    return True, None


def _ledger_status(ok: bool, override: bool, passed: str = "probed") -> str:
    if ok:
        return passed
    return "overridden" if override else "failed"


class BilevelService:
    """Stationarity certificates for Lipschitz programs and optimistic bilevel programs."""

    @staticmethod
    def check_lipschitz_kkt(prog: LipschitzProgram, x_bar, p: Optional[SampleParams] = None) -> Outcome:
        """Lagrangian inclusion 0 ∈ λ₀∂φ₀(x̄) + Σ λ_i ∂φ_i(x̄) over active constraints.

        Supports are searched in increasing size with λ₀ = 1, so the first
        certificate has minimal support; failing that, Fritz John multipliers
        with Σλ = 1 are sought.  MFCQ is reported alongside.
        """
        p = p or SampleParams()
        x = as_point(x_bar, prog.objective.dim)
        values = [eval_function(f, x) for f in prog.inequality_constraints]
        if any(v > settings.TOL_GEOM for v in values):
            raise InfeasiblePointError(f"x̄ = {x.tolist()} violates a constraint (max value {max(values):.3e})")
        active = _active(prog.inequality_constraints, x)
        obj_parts = _parts(prog.objective, x, p)
        con_parts = {i: _parts(prog.inequality_constraints[i], x, p) for i in active}
        _check_branch_count([len(obj_parts)] + [len(con_parts[i]) for i in active], "Lagrangian inclusion")

        mfcq, mfcq_witness = _regularity(con_parts)
        ledger = {"lipschitz_data": "verified", "mfcq": "verified" if mfcq else "failed"}
        notes = [] if mfcq else [f"MFCQ violated: {mfcq_witness}"]
        n_con = len(prog.inequality_constraints)

        best_margin, tried = math.inf, 0
        for size in range(len(active) + 1):
            for support in combinations(active, size):
                for choice in product(range(len(obj_parts)), *[range(len(con_parts[i])) for i in support]):
                    tried += 1
                    res = minkowski_membership(np.zeros(x.shape[0]), obj_parts[choice[0]],
                                               [con_parts[i][c] for i, c in zip(support, choice[1:])])
                    if not isinstance(res, Membership):
                        best_margin = min(best_margin, res.margin)
                        continue
                    lam = [0.0] * n_con
                    for k, i in enumerate(support):
                        lam[i] = res.scales[k]
                    residual = float(np.max(np.abs(
                        obj_parts[choice[0]].vertices.T @ res.weights["base"]
                        + sum((con_parts[i][c].vertices.T @ res.weights[f"scaled{k}"]
                               for k, (i, c) in enumerate(zip(support, choice[1:]))), np.zeros(x.shape[0])))))
                    logger.info(f"KKT certificate with support {list(support)} at {x.tolist()}")
                    return StationarityCertificate(
                        "T6.1", {"lambda0": [1.0], "lambda": lam}, None, None,
                        {"objective": choice[0], **{f"constraint{i}": c for i, c in zip(support, choice[1:])}},
                        {"lagrangian": residual}, ledger, notes)

        for choice in product(range(len(obj_parts)), *[range(len(con_parts[i])) for i in active]):
            tried += 1
            res = _zero_combination([obj_parts[choice[0]]] + [con_parts[i][c] for i, c in zip(active, choice[1:])])
            if isinstance(res, float):
                best_margin = min(best_margin, res)
                continue
            lams, _, residual = res
            lam = [0.0] * n_con
            for k, i in enumerate(active):
                lam[i] = lams[k + 1]
            notes.append("Fritz John multipliers with vanishing objective multiplier")
            return StationarityCertificate(
                "T6.1", {"lambda0": [lams[0]], "lambda": lam}, None, None,
                {"objective": choice[0], **{f"constraint{i}": c for i, c in zip(active, choice[1:])}},
                {"lagrangian": residual}, ledger, notes)
        return NoCertificate("T6.1", best_margin, tried, ledger, notes)

    @staticmethod
    def build_penalized(bp: BilevelProblem, kappa: float, grid: GridSpec) -> PenalizedProgram:
        if kappa <= 0:
            raise InputError(f"penalty constant must be positive, got {kappa}")
        return PenalizedProgram(bp, kappa, grid)

    @staticmethod
    def penalized_grid_search(bp: BilevelProblem, kappa: float, grid: GridSpec,
                              x_box: Optional[List[Tuple[float, float]]] = None,
                              x_resolution: Optional[int] = None) -> PenalizedSearchResult:
        """Grid minimizer of the penalized objective; the x-box defaults to the y-box intervals taken in turn."""
        prog = BilevelService.build_penalized(bp, kappa, grid)
        x_box = x_box or [grid.y_box[i % len(grid.y_box)] for i in range(bp.x_dim)]
        n = x_resolution or grid.per_axis()
        mesh = np.meshgrid(*[np.linspace(lo, hi, n) for lo, hi in x_box], indexing="ij")
        X = np.column_stack([m.ravel() for m in mesh])
        Y = grid.points()
        best_val, best_pt, evaluated, skipped = math.inf, None, 0, 0
        for x in X:
            try:
                theta = value_service.evaluate_value(bp.lower, x, grid).theta
            except InfeasibleOnBoxError:
                skipped += 1
                continue
            Z = np.hstack([np.tile(x, (len(Y), 1)), Y])
            ok = prog.feasible(Z)
            if not np.any(ok):
                continue
            vals = evaluate_many(bp.upper_cost, Z[ok]) + kappa * (evaluate_many(bp.lower_cost, Z[ok]) - theta)
            evaluated += int(ok.sum())
            k = int(np.argmin(vals))
            if vals[k] < best_val - 1e-12:
                best_val, best_pt = float(vals[k]), Z[ok][k]
        if best_pt is None:
            raise InfeasibleOnBoxError("no feasible grid point for the penalized program", margin=math.inf,
                                       certified_empty=False)
        return PenalizedSearchResult(best_pt.tolist(), best_val, kappa, evaluated, skipped)

    @staticmethod
    def _check_candidate(bp: BilevelProblem, z: np.ndarray, grid: GridSpec) -> float:
        """Raise InfeasiblePointError unless (x̄, ȳ) is feasible for the bilevel program; return ϑ(x̄)."""
        x = z[:bp.x_dim]
        for f in bp.lower_constraints:
            if eval_function(f, z) > settings.TOL_GEOM:
                raise InfeasiblePointError(f"lower-level constraint {f} violated at {z.tolist()}")
        for g in bp.upper_constraints:
            if eval_function(g, x) > settings.TOL_GEOM:
                raise InfeasiblePointError(f"upper-level constraint {g} violated at x̄ = {x.tolist()}")
        theta = value_service.evaluate_value(bp.lower, x, grid).theta
        phi = eval_function(bp.lower_cost, z)
        if phi > theta + settings.TOL_ARG:
            raise InfeasiblePointError(
                f"ȳ is not lower-level optimal at x̄ = {x.tolist()}: φ = {phi:.6g} > ϑ = {theta:.6g}")
        return theta

    @staticmethod
    def partial_calmness_probe(bp: BilevelProblem, point, grid: GridSpec, kappa_grid: Optional[Sequence[float]] = None,
                               p: Optional[SampleParams] = None) -> CalmnessProbeReport:
        """Check ψ(x,y) - ψ(x̄,ȳ) + κ|ν| >= 0 with ν = ϑ(x) - φ(x,y) over sampled feasible (x, y) near the candidate.

        x runs over x̄ + r·d for the grid stencil radii, y over grid points
        within the largest stencil radius of ȳ.
        """
        p = p or SampleParams()
        z = as_point(point, bp.lower_cost.dim)
        BilevelService._check_candidate(bp, z, grid)
        kappas = sorted(kappa_grid or settings.KAPPA_GRID)
        x_bar, y_bar = z[:bp.x_dim], z[bp.x_dim:]
        radii = grid.stencil_radii()
        dirs = sample_directions(bp.x_dim, 2 * bp.x_dim + 2, p.seed)
        X = np.vstack([x_bar] + [x_bar + r * dirs for r in radii])
        Y = grid.points()
        Y = Y[np.max(np.abs(Y - y_bar), axis=1) <= radii[0] + settings.TOL_GEOM]
        psi_bar = eval_function(bp.upper_cost, z)
        prog = PenalizedProgram(bp, 1.0, grid)
        rows: List[np.ndarray] = []
        for x in X:
            if any(eval_function(g, x) > settings.TOL_GEOM for g in bp.upper_constraints):
                continue
            try:
                theta = value_service.evaluate_value(bp.lower, x, grid).theta
            except InfeasibleOnBoxError:
                continue
            Z = np.hstack([np.tile(x, (len(Y), 1)), Y])
            Z = Z[prog.feasible(Z)]
            if not len(Z):
                continue
            nu = theta - evaluate_many(bp.lower_cost, Z)
            gain = evaluate_many(bp.upper_cost, Z) - psi_bar
            rows.append(np.column_stack([Z, nu, gain]))
        data = np.vstack(rows) if rows else np.zeros((0, bp.lower_cost.dim + 2))
        report = CalmnessProbeReport(None, kappas, samples=len(data), radii=radii)
        for kappa in kappas:
            margin = data[:, -1] + kappa * np.abs(data[:, -2])
            bad = margin < -1e-9
            if not np.any(bad):
                report.kappa_validated = kappa
                report.violations = []
                break
            worst = np.argsort(margin)[:5]
            report.violations = [
                {"x": data[k, :bp.x_dim].tolist(), "y": data[k, bp.x_dim:-2].tolist(), "nu": float(data[k, -2]),
                 "margin": float(margin[k]), "kappa": kappa}
                for k in worst if bad[k]
            ]
        if report.kappa_validated is None:
            logger.warning(f"partial calmness not validated on the kappa grid at {z.tolist()}")
        return report

    @staticmethod
    def regularity_check(bp: BilevelProblem, point, p: Optional[SampleParams] = None) -> RegularityReport:
        """Lower-level regularity on y-projections of ∂f_i and upper-level regularity on ∂g_j."""
        p = p or SampleParams()
        z = as_point(point, bp.lower_cost.dim)
        x = z[:bp.x_dim]
        lower_parts = {
            i: [Polytope(part.vertices[:, bp.x_dim:]) for part in _parts(bp.lower_constraints[i], z, p)]
            for i in _active(bp.lower_constraints, z)
        }
        upper_parts = {j: _parts(bp.upper_constraints[j], x, p) for j in _active(bp.upper_constraints, x)}
        lower_ok, lower_w = _regularity(lower_parts)
        upper_ok, upper_w = _regularity(upper_parts)
        return RegularityReport(lower_ok, upper_ok, lower_w, upper_w)

    @staticmethod
    def regular_value_subdiff(bp: BilevelProblem, x_bar, grid: GridSpec,
                              p: Optional[SampleParams] = None) -> Optional[Polytope]:
        """Outer approximation of ∂̂ϑ(x̄) from grid difference quotients at the two smallest stencil radii.

        Each direction d and radius r contributes ⟨v, d⟩ <= (ϑ(x̄ + r·d) - ϑ(x̄))/r + slack,
        slack = 2·TOL_ARG/r + TOL_GEOM, inside the box |v_k| <= 1e3.  None means empty.
        """
        x = as_point(x_bar, bp.x_dim)
        n = bp.x_dim
        theta0 = value_service.evaluate_value(bp.lower, x, grid).theta
        dirs = unit_directions(n, max(8, 4 * n))
        normals, offsets = [], []
        for r in grid.stencil_radii()[-2:]:
            thetas = np.array([s.theta for s in value_service.value_on_grid(bp.lower, x + r * dirs, grid)])
            normals.append(dirs)
            offsets.append((thetas - theta0) / r + 2 * settings.TOL_ARG / r + settings.TOL_GEOM)
        corners = np.array(list(product(*[(-REGULAR_BOX, REGULAR_BOX)] * n)), dtype=float)
        return clip_polytope(Polytope(corners), np.vstack(normals), np.concatenate(offsets))

    @staticmethod
    def _joint_lp(dim_x: int, u_set: Polytope, eq1: Tuple[Polytope, List[Polytope]],
                  eq2: Tuple[Polytope, Polytope, float, List[Polytope], List[Polytope]]) -> Union[Dict[str, object], float]:
        """One LP sharing u between (u,0) ∈ B1 + Σν_i F_i and (u,0) ∈ B2 + κ⁻¹Ψ + Σλ_i F'_i + Σμ_j (G_j, 0)."""
        base1, f1 = eq1
        base2, psi, inv_kappa, f2, g2 = eq2
        dim = base1.dim
        lift = np.vstack([np.eye(dim_x), np.zeros((dim - dim_x, dim_x))])
        b = LPBuilder()
        b.add_block("beta", len(u_set.vertices))
        b.add_eq({"beta": np.ones((1, len(u_set.vertices)))}, [1.0])
        u_term = -lift @ u_set.vertices.T
        rows1: Dict[str, np.ndarray] = {"beta": u_term}
        b.add_block("a1", len(base1.vertices))
        b.add_eq({"a1": np.ones((1, len(base1.vertices)))}, [1.0])
        rows1["a1"] = base1.vertices.T
        for i, part in enumerate(f1):
            b.add_block(f"nu{i}", len(part.vertices))
            rows1[f"nu{i}"] = part.vertices.T
        b.add_eq(rows1, np.zeros(dim))
        rows2: Dict[str, np.ndarray] = {"beta": u_term}
        b.add_block("a2", len(base2.vertices))
        b.add_eq({"a2": np.ones((1, len(base2.vertices)))}, [1.0])
        rows2["a2"] = base2.vertices.T
        b.add_block("psi", len(psi.vertices))
        b.add_eq({"psi": np.ones((1, len(psi.vertices)))}, [1.0])
        rows2["psi"] = inv_kappa * psi.vertices.T
        for i, part in enumerate(f2):
            b.add_block(f"lam{i}", len(part.vertices))
            rows2[f"lam{i}"] = part.vertices.T
        for j, part in enumerate(g2):
            b.add_block(f"mu{j}", len(part.vertices))
            rows2[f"mu{j}"] = lift @ part.vertices.T
        b.add_eq(rows2, np.zeros(dim))
        outcome = require(lp_feasible(b.build()), "stationarity LP")
        if not isinstance(outcome, Feasible):
            return outcome.margin
        w = {name: b.read(outcome.assignment, name) for name in b.blocks}
        u = u_set.vertices.T @ w["beta"]
        r1 = base1.vertices.T @ w["a1"] + sum((part.vertices.T @ w[f"nu{i}"] for i, part in enumerate(f1)),
                                              np.zeros(dim)) - lift @ u
        r2 = (base2.vertices.T @ w["a2"] + inv_kappa * psi.vertices.T @ w["psi"]
              + sum((part.vertices.T @ w[f"lam{i}"] for i, part in enumerate(f2)), np.zeros(dim))
              + sum((lift @ part.vertices.T @ w[f"mu{j}"] for j, part in enumerate(g2)), np.zeros(dim)) - lift @ u)
        return {
            "u": u.tolist(),
            "nu": [float(w[f"nu{i}"].sum()) for i in range(len(f1))],
            "lambda": [float(w[f"lam{i}"].sum()) for i in range(len(f2))],
            "mu": [float(w[f"mu{j}"].sum()) for j in range(len(g2))],
            "residuals": {"value_inclusion": float(np.max(np.abs(r1))), "penalized_inclusion": float(np.max(np.abs(r2)))},
        }

    @staticmethod
    def _hypotheses(bp: BilevelProblem, z: np.ndarray, kappa: float, grid: GridSpec, p: SampleParams,
                    override_isc: bool, override_calmness: bool, upper: bool) -> Tuple[Dict[str, str], List[str], object]:
        """Run regularity (fatal) and the ISC and calmness probes (recorded); return ledger, notes and the ∂ϑ estimate."""
        reg = BilevelService.regularity_check(bp, z, p)
        ledger = {"lipschitz_data": "verified"}
        ledger["lower_regularity"] = "verified" if reg.lower else "failed"
        ledger["upper_regularity"] = ("verified" if reg.upper else "failed") if upper else "n/a"
        if not reg.lower or (upper and not reg.upper):
            which = "lower_regularity" if not reg.lower else "upper_regularity"
            witness = reg.lower_witness if not reg.lower else reg.upper_witness
            logger.error(f"{which} fails at {z.tolist()}: {witness}")
            raise HypothesisFailure(f"{which.replace('_', '-')} condition fails at {z.tolist()} (witness {witness})",
                                    which, ledger)
        notes: List[str] = []
        calm = BilevelService.partial_calmness_probe(bp, z, grid, [kappa], p)
        ledger["partial_calmness"] = _ledger_status(calm.kappa_validated is not None, override_calmness)
        if calm.kappa_validated is None:
            notes.append(f"partial calmness with kappa = {kappa} not validated: {calm.violations[:1]}")
        estimate = value_service.value_subdiff_estimate(bp.lower, z, grid, p, override_isc=True)
        ledger["inner_semicontinuity"] = "probed" if estimate.isc == "probed" else (
            "overridden" if override_isc else "failed")
        notes.extend(estimate.notes)
        for key, value in ledger.items():
            if value == "overridden":
                notes.append(f"hypothesis {key} overridden")
                logger.warning(f"hypothesis {key} overridden at {z.tolist()}")
        return ledger, notes, estimate

    @staticmethod
    def _finish(theorem: str, found: Optional[Dict[str, object]], margin: float, tried: int, kappa: float,
                ledger: Dict[str, str], notes: List[str], lower_active: List[int], upper_active: List[int],
                n_lower: int, n_upper: int) -> Outcome:
        if found is None:
            logger.info(f"{theorem}: no certificate after {tried} branch combinations (margin {margin:.3e})")
            return NoCertificate(theorem, margin, tried, ledger, notes)
        failed = [k for k, v in ledger.items() if v == "failed"]
        if failed:
            logger.error(f"{theorem}: certificate found but hypotheses failed: {failed}")
            raise HypothesisFailure(
                f"{theorem} multipliers exist but the hypotheses {failed} were not established; "
                "pass the matching override to accept them", failed[0], ledger)

        def spread(values: List[float], active: List[int], n: int) -> List[float]:
            out = [0.0] * n
            for k, i in enumerate(active):
                out[i] = values[k]
            return out

        multipliers = {
            "nu": spread(found["nu"], lower_active, n_lower),
            "lambda": spread(found["lambda"], lower_active, n_lower),
            "mu": spread(found["mu"], upper_active, n_upper),
        }
        return StationarityCertificate(theorem, multipliers, kappa, found["u"], found["branches"], found["residuals"],
                                       ledger, notes)

    @staticmethod
    def certify_T74(bp: BilevelProblem, point, kappa: float, grid: GridSpec, p: Optional[SampleParams] = None,
                    override_isc: bool = False, override_calmness: bool = False) -> Outcome:
        """Multipliers (λ, μ, ν) and u ∈ co ∂ϑ(x̄) with the convexified value inclusion and the penalized inclusion."""
        if kappa <= 0:
            raise InputError(f"penalty constant must be positive, got {kappa}")
        p = p or SampleParams()
        z = as_point(point, bp.lower_cost.dim)
        x = z[:bp.x_dim]
        BilevelService._check_candidate(bp, z, grid)
        ledger, notes, estimate = BilevelService._hypotheses(bp, z, kappa, grid, p, override_isc, override_calmness, True)
        if not estimate.basic:
            return NoCertificate("T7.4", math.inf, 0, ledger, notes + ["value-function estimate is empty"])
        if any(not q.is_bounded for q in estimate.basic):
            raise PreconditionError("value-function estimate is unbounded; ϑ is not Lipschitz at the candidate")
        u_set = Polytope(np.vstack([q.base.vertices for q in estimate.basic]))
        notes.append("u ranges over the convex hull of the value-function upper estimate")

        lower_active = _active(bp.lower_constraints, z)
        upper_active = _active(bp.upper_constraints, x)
        phi_parts = _parts(bp.lower_cost, z, p)
        psi_parts = _parts(bp.upper_cost, z, p)
        f_parts = [_parts(bp.lower_constraints[i], z, p) for i in lower_active]
        g_parts = [_parts(bp.upper_constraints[j], x, p) for j in upper_active]
        eq1 = (_hull(bp.lower_cost, z, p), [_hull(bp.lower_constraints[i], z, p) for i in lower_active])
        counts = [len(phi_parts), len(psi_parts)] + [len(q) for q in f_parts] + [len(q) for q in g_parts]
        _check_branch_count(counts, "T7.4 certificate")

        best, tried = math.inf, 0
        for choice in product(*[range(c) for c in counts]):
            tried += 1
            k = 2 + len(f_parts)
            eq2 = (phi_parts[choice[0]], psi_parts[choice[1]], 1.0 / kappa,
                   [f_parts[i][c] for i, c in enumerate(choice[2:k])],
                   [g_parts[j][c] for j, c in enumerate(choice[k:])])
            res = BilevelService._joint_lp(bp.x_dim, u_set, eq1, eq2)
            if isinstance(res, float):
                best = min(best, res)
                continue
            res["branches"] = {"phi": choice[0], "psi": choice[1],
                               **{f"f{i}": c for i, c in zip(lower_active, choice[2:k])},
                               **{f"g{j}": c for j, c in zip(upper_active, choice[k:])}}
            return BilevelService._finish("T7.4", res, best, tried, kappa, ledger, notes, lower_active, upper_active,
                                          len(bp.lower_constraints), len(bp.upper_constraints))
        return BilevelService._finish("T7.4", None, best, tried, kappa, ledger, notes, lower_active, upper_active,
                                      len(bp.lower_constraints), len(bp.upper_constraints))

    @staticmethod
    def certify_T83(bp: BilevelProblem, point, kappa: float, grid: GridSpec, p: Optional[SampleParams] = None,
                    override_isc: bool = False, override_calmness: bool = False) -> Outcome:
        """Refined conditions without upper-level constraints: u ∈ ∂̂ϑ(x̄) and unconvexified subdifferentials."""
        if kappa <= 0:
            raise InputError(f"penalty constant must be positive, got {kappa}")
        if bp.upper_constraints:
            raise PreconditionError("the refined conditions apply only without upper-level constraints")
        p = p or SampleParams()
        z = as_point(point, bp.lower_cost.dim)
        x = z[:bp.x_dim]
        BilevelService._check_candidate(bp, z, grid)
        ledger, notes, _ = BilevelService._hypotheses(bp, z, kappa, grid, p, override_isc, override_calmness, False)
        u_set = BilevelService.regular_value_subdiff(bp, x, grid, p)
        if u_set is None:
            ledger["regular_value_subdifferential"] = "failed"
            logger.error(f"regular subdifferential of the value function is empty at {x.tolist()}")
            raise HypothesisFailure(f"the regular subdifferential of ϑ at x̄ = {x.tolist()} is empty",
                                    "regular_value_subdifferential", ledger)
        ledger["regular_value_subdifferential"] = "probed"
        notes.append("u ranges over an outer approximation of the regular subdifferential of ϑ")

        lower_active = _active(bp.lower_constraints, z)
        phi_parts = _parts(bp.lower_cost, z, p)
        psi_parts = _parts(bp.upper_cost, z, p)
        f_parts = [_parts(bp.lower_constraints[i], z, p) for i in lower_active]
        m = len(f_parts)
        counts = [len(phi_parts)] + [len(q) for q in f_parts] + [len(phi_parts), len(psi_parts)] + [len(q) for q in f_parts]
        _check_branch_count(counts, "T8.3 certificate")

        best, tried = math.inf, 0
        for choice in product(*[range(c) for c in counts]):
            tried += 1
            first, second = choice[:1 + m], choice[1 + m:]
            eq1 = (phi_parts[first[0]], [f_parts[i][c] for i, c in enumerate(first[1:])])
            eq2 = (phi_parts[second[0]], psi_parts[second[1]], 1.0 / kappa,
                   [f_parts[i][c] for i, c in enumerate(second[2:])], [])
            res = BilevelService._joint_lp(bp.x_dim, u_set, eq1, eq2)
            if isinstance(res, float):
                best = min(best, res)
                continue
            res["branches"] = {"phi_value": first[0], "phi": second[0], "psi": second[1],
                               **{f"f{i}_value": c for i, c in zip(lower_active, first[1:])},
                               **{f"f{i}": c for i, c in zip(lower_active, second[2:])}}
            return BilevelService._finish("T8.3", res, best, tried, kappa, ledger, notes, lower_active, [],
                                          len(bp.lower_constraints), 0)
        return BilevelService._finish("T8.3", None, best, tried, kappa, ledger, notes, lower_active, [],
                                      len(bp.lower_constraints), 0)

    @staticmethod
    def certify_sweep(theorem: str, bp: BilevelProblem, point, grid: GridSpec,
                      kappas: Optional[Sequence[float]] = None, **kwargs) -> Outcome:
        """First certificate over the kappa grid in increasing order, else the tightest NoCertificate."""
        run = {"t74": BilevelService.certify_T74, "t83": BilevelService.certify_T83}[theorem]
        closest: Optional[NoCertificate] = None
        refused: Optional[HypothesisFailure] = None
        for kappa in sorted(kappas or settings.KAPPA_GRID):
            try:
                outcome = run(bp, point, kappa, grid, **kwargs)
            except HypothesisFailure as e:
                if e.ledger.get("partial_calmness") != "failed":
                    raise
                refused = e
                continue
            if isinstance(outcome, StationarityCertificate):
                outcome.notes.append(f"kappa {kappa} selected by sweep")
                return outcome
            if closest is None or outcome.margin < closest.margin:
                closest = outcome
        if closest is None and refused is not None:
            raise refused
        return closest


bilevel_service = BilevelService()
