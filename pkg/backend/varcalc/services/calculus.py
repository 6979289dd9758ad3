from dataclasses import dataclass, field
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from scipy.optimize import minimize

from ..core.config import settings
from ..core.exceptions import (
    CombinatorialOverflowError,
    DimensionMismatchError,
    InfeasiblePointError,
    InputError,
    NotExtremalError,
    QualificationError,
)
from .convgeom import (
    ConeSpec,
    Membership,
    Polyhedron,
    PolytopeUnion,
    clip_polytope,
    hausdorff_distance,
    minkowski_membership,
    minkowski_sum,
)
from .expr import FunctionDef, VarSpace, as_point, branch_gradient, curvature, eval_function
from .normals import SetSpec, lift_epigraph, normal_cone_service, project
from .simplex import Feasible, LPBuilder, lp_feasible, require
from .subdiff import SampleParams, subdiff_service

# Configure logging
logger = logging.getLogger(__name__)

DEFAULT_KS = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000)


@dataclass
class RuleReport:
    """Outcome of one calculus-rule verification."""

    rule: str
    holds: bool
    equality: Optional[bool] = None
    residual: float = 0.0
    margin: Optional[float] = None
    hausdorff: Optional[float] = None
    notes: List[str] = field(default_factory=list)
    details: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {
            "rule": self.rule,
            "holds": self.holds,
            "equality": self.equality,
            "residual": self.residual,
            "margin": self.margin,
            "hausdorff": self.hausdorff,
            "notes": self.notes,
            "details": self.details,
        }


@dataclass
class _Inclusion:
    holds: bool
    residual: float
    margin: Optional[float]


def _point_in_union(x: np.ndarray, outer: Sequence[Polyhedron]) -> Tuple[bool, float, float]:
    """(member, residual, smallest infeasibility margin) of x against a union of polyhedra."""
    margins = []
    for q in outer:
        out = minkowski_membership(x, q.base, cones=[q.cone] if not q.is_bounded else [])
        if isinstance(out, Membership):
            return True, out.residual, 0.0
        margins.append(out.margin)
    return False, 0.0, min(margins) if margins else float("inf")


def _contained(inner: Sequence[Polyhedron], outer: Sequence[Polyhedron]) -> _Inclusion:
    """Vertex and recession-direction test of ∪inner ⊆ ∪outer."""
    residual, worst = 0.0, None
    for p in inner:
        for v in np.vstack([p.base.vertices, p.base.centroid()[None, :]]):
            ok, res, margin = _point_in_union(v, outer)
            residual = max(residual, res)
            if not ok:
                worst = margin if worst is None else min(worst, margin)
        for g in p.cone.signed_generators():
            if not any(q.cone.contains(g) for q in outer):
                worst = 0.0 if worst is None else worst
    return _Inclusion(worst is None, residual, worst)


def _as_polyhedra(u: PolytopeUnion) -> List[Polyhedron]:
    return [Polyhedron.from_polytope(p) for p in u.parts]


def _bounded_union(parts: Sequence[Polyhedron]) -> Optional[PolytopeUnion]:
    if parts and all(p.is_bounded for p in parts):
        return PolytopeUnion(tuple(p.base for p in parts))
    return None


def _combos(unions: Sequence[Sequence], what: str):
    total = 1
    for u in unions:
        total *= len(u)
    if total > settings.BRANCH_CAP:
        raise CombinatorialOverflowError(f"{total} {what} combinations exceed {settings.BRANCH_CAP}")
    return product(*unions)


def _epigraph_of_sum(constraints: Sequence[FunctionDef], g: FunctionDef) -> Tuple[SetSpec, VarSpace]:
    lifted = lift_epigraph(g)
    embedded = [c.embed(lifted.space, list(range(c.dim))) for c in constraints]
    return SetSpec.graph(embedded + [lifted], x_dim=g.dim), lifted.space


class CalculusService:
    """Verifiers for the sum, intersection and difference rules, and the extremal principle."""

    @staticmethod
    def verify_sum_rule(first: Union[FunctionDef, SetSpec], others: Sequence[FunctionDef], x_bar,
                        p: Optional[SampleParams] = None) -> RuleReport:
        """Check ∂(f₁ + ... + f_s)(x̄) ⊆ ∂f₁(x̄) + ... + ∂f_s(x̄) and the singular counterpart.

        `first` may be an inequality-defined set standing for its indicator
        function; the left-hand side is then read off the normal cone of the
        epigraph of the sum.
        """
        p = p or SampleParams()
        if not others:
            raise InputError("sum rule needs at least one Lipschitz summand")
        g = others[0]
        for h in others[1:]:
            g = g + h
        x = as_point(x_bar, g.dim)
        other_parts = [subdiff_service.basic_subdifferential(h, x, p)[0].parts for h in others]

        if isinstance(first, FunctionDef):
            lhs = _as_polyhedra(subdiff_service.basic_subdifferential(first + g, x, p)[0])
            first_parts = subdiff_service.basic_subdifferential(first, x, p)[0].parts
            rhs = [Polyhedron.from_polytope(minkowski_sum(list(c)))
                   for c in _combos([first_parts] + other_parts, "sum-rule")]
            lhs_singular = [Polyhedron.from_cone(ConeSpec.zero(g.dim))]
            rhs_singular = lhs_singular
        else:
            if first.kind not in ("sublevel", "graph") or first.dim != g.dim:
                raise InputError("indicator summand must be an inequality set over the same variables")
            if not first.contains(x):
                raise InfeasiblePointError(f"x̄ = {x.tolist()} is outside the indicator's set")
            epi, _ = _epigraph_of_sum(first.functions, g)
            point = np.concatenate([x, [eval_function(g, x)]])
            lhs = normal_cone_service.coderivative(epi, point, [1.0], p)
            lhs_singular = normal_cone_service.coderivative(epi, point, [0.0], p)
            cones = normal_cone_service.normal_cone(first, x, p).cones
            g_parts = [minkowski_sum(list(c)) for c in _combos(other_parts, "sum-rule")]
            rhs = [Polyhedron(part, cone) for part in g_parts for cone in cones]
            rhs_singular = [Polyhedron.from_cone(cone) for cone in cones]

        forward = _contained(lhs, rhs)
        backward = _contained(rhs, lhs)
        singular = _contained(lhs_singular, rhs_singular)
        report = RuleReport(
            rule="sum",
            holds=forward.holds and singular.holds,
            equality=forward.holds and backward.holds,
            residual=max(forward.residual, singular.residual),
            margin=forward.margin,
            details={
                "lhs": [q.to_dict() for q in lhs],
                "rhs": [q.to_dict() for q in rhs],
                "singular_lhs": [q.to_dict() for q in lhs_singular],
                "singular_holds": singular.holds,
            },
        )
        a, b = _bounded_union(lhs), _bounded_union(rhs)
        if a is not None and b is not None:
            report.hausdorff = hausdorff_distance(a, b)
        if not report.holds:
            logger.warning(f"sum rule inclusion fails at {x.tolist()} (margin {forward.margin})")
        return report

    @staticmethod
    def verify_intersection_rule(sets: Sequence[SetSpec], x_bar, p: Optional[SampleParams] = None) -> RuleReport:
        """Check the qualification condition and N(x̄; ∩Ω_i) ⊆ Σ N(x̄; Ω_i).

        Raises:
            QualificationError: a nonzero choice of normals sums to zero; the
                witness lists the multiplier mass per set.
        """
        p = p or SampleParams()
        if not sets:
            raise InputError("intersection rule needs at least one set")
        dim = sets[0].dim
        if any(s.dim != dim for s in sets):
            raise DimensionMismatchError("sets of the intersection rule live in different spaces")
        x = as_point(x_bar, dim)
        if len(sets) == 1:
            return RuleReport(rule="intersection", holds=True, equality=True, notes=["single set: rule is an identity"])

        cones = [normal_cone_service.normal_cone(s, x, p).cones for s in sets]
        for choice in _combos(cones, "normal-cone"):
            witness = _intersection_witness(choice)
            if witness is not None:
                logger.error(f"intersection qualification fails at {x.tolist()}: witness {witness}")
                raise QualificationError(
                    f"qualification violated at {x.tolist()}: normals with multipliers {witness} sum to zero", witness
                )

        if any(s.kind not in ("sublevel", "graph") for s in sets):
            raise InputError("the intersection of non-inequality sets is not supported")
        joint = SetSpec.sublevel([f for s in sets for f in s.functions])
        lhs = normal_cone_service.normal_cone(joint, x, p)
        residual, worst = 0.0, None
        for gen in lhs.all_generators():
            found = False
            for choice in _combos(cones, "normal-cone"):
                out = minkowski_membership(gen, None, cones=list(choice))
                if isinstance(out, Membership):
                    residual = max(residual, out.residual)
                    found = True
                    break
                worst = out.margin if worst is None else min(worst, out.margin)
            if not found:
                logger.warning(f"normal {gen.tolist()} of the intersection is not a sum of set normals")
                return RuleReport(rule="intersection", holds=False, residual=residual, margin=worst,
                                  details={"failing_generator": gen.tolist()})
        return RuleReport(rule="intersection", holds=True, residual=residual,
                          details={"lhs": lhs.to_dict(), "qualification": "verified"})

    @staticmethod
    def verify_difference_rule(f1: FunctionDef, f2: FunctionDef, x_bar, assume_minimizer: bool = False,
                               p: Optional[SampleParams] = None) -> RuleReport:
        """Regular difference rule ∂̂(f₁ - f₂)(x̄) ⊆ ∩_{v ∈ ∂̂f₂(x̄)} [∂̂f₁(x̄) - v].

        Also checks the reverse-side inclusion into ∂̂f₁ - ∂̂f₂ and the
        minimizer condition ∂̂f₂(x̄) ⊆ ∂̂f₁(x̄); with `assume_minimizer` a
        failure of the latter fails the rule, otherwise it is reported as
        evidence that x̄ is not a local minimizer of f₁ - f₂.
        """
        p = p or SampleParams()
        x = as_point(x_bar, f1.dim)
        r1 = subdiff_service.regular_subdifferential(f1, x, p)
        r2 = subdiff_service.regular_subdifferential(f2, x, p)
        lhs = subdiff_service.regular_subdifferential(f1 - f2, x, p)
        report = RuleReport(rule="difference", holds=True, details={
            "lhs": lhs.to_list() if lhs is not None else None,
            "regular_f1": r1.to_list() if r1 is not None else None,
            "regular_f2": r2.to_list() if r2 is not None else None,
        })
        if r2 is None:
            report.notes.append("regular subdifferential of f2 is empty: inclusion and minimizer condition vacuous")
            report.details["minimizer_condition"] = "vacuous"
            return report

        if lhs is not None:
            for a in lhs.vertices:
                for v in r2.vertices:
                    if r1 is None or not r1.contains_point(a + v):
                        report.holds = False
                        report.details["failing_vertex"] = {"lhs": a.tolist(), "v": v.tolist()}
                        break

        # ∩_v [∂̂f₁ - v] ⊆ ∂̂f₁ - ∂̂f₂
        if r1 is not None:
            A, b = r1.halfspaces()
            inter = r1.translated(-r2.vertices[0])
            for v in r2.vertices[1:]:
                inter = clip_polytope(inter, A, b - A @ v) if inter is not None else None
            reverse = True
            if inter is not None:
                for a in inter.vertices:
                    if not isinstance(minkowski_membership(a, r1, fixed_terms=[(-1.0, r2)]), Membership):
                        reverse = False
            report.equality = reverse
            report.details["intersection"] = inter.to_list() if inter is not None else None

        h2 = r1 is not None and r1.contains(r2)
        report.details["minimizer_condition"] = "holds" if h2 else "fails"
        if not h2:
            if assume_minimizer:
                report.holds = False
                report.notes.append("x̄ was declared a local minimizer but ∂̂f2(x̄) ⊄ ∂̂f1(x̄)")
            else:
                report.notes.append("∂̂f2(x̄) ⊄ ∂̂f1(x̄): x̄ is not a local minimizer of f1 - f2")
        return report

    @staticmethod
    def epigraph_consistency_check(f: FunctionDef, x_bar, p: Optional[SampleParams] = None) -> RuleReport:
        """Compare ∂f, ∂^∞f with D*E_f(x̄, f(x̄))(1) and D*E_f(x̄, f(x̄))(0)."""
        p = p or SampleParams()
        x = as_point(x_bar, f.dim)
        direct, _ = subdiff_service.basic_subdifferential(f, x, p)
        epi = SetSpec.epigraph(f)
        point = np.concatenate([x, [eval_function(f, x)]])
        via = normal_cone_service.coderivative(epi, point, [1.0], p)
        singular = normal_cone_service.coderivative(epi, point, [0.0], p)
        via_union = _bounded_union(via)
        if via_union is None:
            return RuleReport(rule="epigraph", holds=False, notes=["epigraph route returned an unbounded set"])
        distance = hausdorff_distance(direct, via_union)
        singular_zero = all(q.is_zero() for q in singular)
        return RuleReport(
            rule="epigraph",
            holds=distance <= 1e-6 and singular_zero,
            equality=distance <= 1e-6,
            hausdorff=distance,
            details={"direct": direct.to_list(), "via_epigraph": via_union.to_list(),
                     "singular_via_epigraph": [q.to_dict() for q in singular]},
        )


def _intersection_witness(cones: Sequence[ConeSpec]) -> Optional[List[float]]:
    """Nonzero normals x_i ∈ K_i with Σ x_i = 0, found by fixing one coordinate to ±1."""
    dim = cones[0].dim
    for i, cone_i in enumerate(cones):
        if cone_i.is_trivial():
            continue
        for c in range(dim):
            for sign in (1.0, -1.0):
                b = LPBuilder()
                total = {}
                for j, cone in enumerate(cones):
                    if len(cone.generators):
                        b.add_block(f"a{j}", len(cone.generators))
                        total[f"a{j}"] = cone.generators.T
                    if len(cone.lineality):
                        b.add_block(f"l{j}", len(cone.lineality), lower=-settings.R_CONE, upper=settings.R_CONE)
                        total[f"l{j}"] = cone.lineality.T
                own = {name: total[name][c:c + 1] for name in (f"a{i}", f"l{i}") if name in total}
                b.add_eq(total, np.zeros(dim))
                b.add_eq(own, [sign])
                out = require(lp_feasible(b.build()), "intersection qualification")
                if isinstance(out, Feasible):
                    witness = []
                    for j, cone in enumerate(cones):
                        mass = float(b.read(out.assignment, f"a{j}").sum()) if f"a{j}" in b.blocks else 0.0
                        if f"l{j}" in b.blocks:
                            mass += float(np.abs(b.read(out.assignment, f"l{j}")).sum())
                        witness.append(round(mass, 12))
                    return witness
    return None


# Extremal principle

@dataclass
class ExtremalStep:
    k: int
    x: List[float]
    gamma: float
    normals: List[List[float]]
    normalization: float
    euler_residual: float
    limit_residual: float

    def to_dict(self) -> Dict[str, object]:
        return dict(self.__dict__)


@dataclass
class ExtremalTrace:
    point: List[float]
    steps: List[ExtremalStep]

    def to_dict(self) -> Dict[str, object]:
        return {"point": self.point, "steps": [s.to_dict() for s in self.steps]}


def _affine_halfspace(s: SetSpec) -> Optional[Tuple[np.ndarray, float]]:
    """(a, b) with s = {x : a x <= b} when s is one affine inequality."""
    if s.kind not in ("sublevel", "graph"):
        return None
    live = [f for f in s.functions if f.root.kind != "const"]
    if len(live) > 1 or any(curvature(f) != "affine" for f in s.functions):
        return None
    if not live:
        return np.zeros(s.dim), 0.0
    f = live[0]
    a = branch_gradient(f, np.zeros(s.dim), {})
    return a, -eval_function(f, np.zeros(s.dim))


def projector(s: SetSpec, anchor: np.ndarray):
    """Euclidean projector onto s; `anchor` is a known point of s bounding the search."""
    if s.kind == "singleton":
        point = np.array(s.point)
        return lambda z: point.copy()
    if s.kind == "product":
        pieces, start = [], 0
        for part in s.parts:
            pieces.append((start, part.dim, projector(part, anchor[start:start + part.dim])))
            start += part.dim
        return lambda z: np.concatenate([proj(z[a:a + n]) for a, n, proj in pieces])
    if s.kind == "epigraph":
        return projector(s.lifted(), anchor)
    halfspace = _affine_halfspace(s)
    if halfspace is not None:
        a, b = halfspace
        norm2 = float(a @ a)

        def affine(z):
            excess = a @ z - b
            if excess <= 0 or norm2 == 0:
                return z.copy()
            return z - (excess / norm2) * a

        return affine
    if s.kind == "map_graph":
        h = s.functions[0]

        def graph(z):
            res = minimize(lambda u: float(np.sum((u - z[:-1]) ** 2) + (eval_function(h, u) - z[-1]) ** 2),
                           z[:-1], method="Nelder-Mead", options={"xatol": 1e-13, "fatol": 1e-16, "maxiter": 4000})
            return np.concatenate([res.x, [eval_function(h, res.x)]])

        return graph

    cons = [{"type": "ineq", "fun": (lambda u, f=f: -eval_function(f, u))} for f in s.functions]

    def polish(z, start):
        res = minimize(lambda u: float(np.sum((u - z) ** 2)), start, method="SLSQP", constraints=cons,
                       options={"ftol": 1e-16, "maxiter": 200})
        if res.success and s.constraint_margin(res.x) <= 1e-12:
            return res.x
        return None

    def general(z):
        if s.members(z[None, :])[0]:
            return z.copy()
        found = polish(z, z)
        if found is not None and np.linalg.norm(found - z) <= np.linalg.norm(anchor - z):
            return found
        # Local grid seeded search when the direct polish fails
        radius = max(float(np.linalg.norm(z - anchor)), 1e-12)
        best = project(s, z, radius, n=16)[0]
        found = polish(z, best)
        if found is not None and np.linalg.norm(found - z) <= np.linalg.norm(best - z):
            return found
        return best

    return general


def extremal_principle_solve(sets: Sequence[SetSpec], x_bar, shifts: Sequence[Sequence[float]],
                             ks: Sequence[int] = DEFAULT_KS) -> ExtremalTrace:
    """Run the constructive scheme behind the extremal principle.

    For each k the shifted sets Ω_i - a_i/k are pulled apart; x_k minimizes
    (Σ_i d²(x + a_i/k; Ω_i))^{1/2} + ‖x - x̄‖², and the normals are
    v_ik = (x_k + a_i/k - w_ik)/γ_k with w_ik the projections and γ_k the
    square-root term at x_k.

    Raises:
        NotExtremalError: γ_k vanishes, so the shifted sets still meet near x̄.
    """
    if len(shifts) != len(sets):
        raise InputError(f"{len(shifts)} shift vectors for {len(sets)} sets")
    dim = sets[0].dim
    x = as_point(x_bar, dim)
    for s in sets:
        if s.dim != dim:
            raise DimensionMismatchError("sets of an extremal system must share the ambient space")
        if not s.contains(x):
            raise InfeasiblePointError(f"x̄ = {x.tolist()} is not in {s.describe()}")
    base = [as_point(a, dim) for a in shifts]
    projs = [projector(s, x) for s in sets]
    steps: List[ExtremalStep] = []

    for k in ks:
        a_k = [a / k for a in base]
        scale = max(max(float(np.linalg.norm(a)) for a in a_k), 1.0 / k)

        def phi(u):
            gaps = [u + a - proj(u + a) for a, proj in zip(a_k, projs)]
            return float(np.sqrt(sum(g @ g for g in gaps))) + float((u - x) @ (u - x))

        offsets = np.array(np.meshgrid(*([[-1.0, -0.5, 0.0, 0.5, 1.0]] * dim), indexing="ij")).reshape(dim, -1).T
        starts = x + scale * offsets
        values = np.array([phi(u) for u in starts])
        best_x, best_val = None, np.inf
        for i in np.argsort(values, kind="stable")[:2]:
            u0 = starts[i]
            for _ in range(2):
                simplex = np.vstack([u0, u0 + 0.1 * scale * np.eye(dim)])
                res = minimize(phi, u0, method="Nelder-Mead",
                               options={"initial_simplex": simplex, "xatol": 1e-11 * scale, "fatol": 1e-16 * scale,
                                        "maxiter": 8000, "maxfev": 16000})
                u0 = res.x
            if res.fun < best_val:
                best_x, best_val = res.x, res.fun

        gaps = [best_x + a - proj(best_x + a) for a, proj in zip(a_k, projs)]
        gamma = float(np.sqrt(sum(g @ g for g in gaps)))
        if gamma <= 1e-12:
            logger.error(f"extremal scheme found no separation at k={k}")
            raise NotExtremalError(f"γ_k = 0 at k = {k}: the shifted sets still intersect near x̄", k)
        normals = [g / gamma for g in gaps]
        total = np.sum(normals, axis=0)
        steps.append(ExtremalStep(
            k=k,
            x=best_x.tolist(),
            gamma=gamma,
            normals=[v.tolist() for v in normals],
            normalization=float(sum(v @ v for v in normals)),
            euler_residual=float(np.linalg.norm(total + 2 * (best_x - x))),
            limit_residual=float(np.linalg.norm(total)),
        ))
        logger.debug(f"extremal step k={k}: gamma={gamma:.3e}, euler={steps[-1].euler_residual:.3e}")
    return ExtremalTrace(x.tolist(), steps)


def minimizer_extremal_system(f: FunctionDef, x_bar, constraint_set: Optional[SetSpec] = None):
    """Extremal system {epi f, Ω × {f(x̄)}} at (x̄, f(x̄)) for a local minimizer x̄ of f on Ω.

    Returns (sets, point, shifts) ready for extremal_principle_solve; the
    second set is pushed below the epigraph by the shift (0, ..., 0, 1).
    """
    x = as_point(x_bar, f.dim)
    omega = constraint_set or SetSpec.whole(f.space)
    if omega.dim != f.dim:
        raise DimensionMismatchError("constraint set and function live in different spaces")
    value = eval_function(f, x)
    sets = [SetSpec.epigraph(f), SetSpec.product([omega, SetSpec.singleton([value])])]
    point = np.concatenate([x, [value]])
    lift = np.zeros(f.dim + 1)
    lift[-1] = 1.0
    return sets, point, [np.zeros(f.dim + 1), lift]


calculus_service = CalculusService()
