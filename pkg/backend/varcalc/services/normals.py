"""Sets, normal cones and coderivatives.

Sets are inequality systems, graphs and epigraphs of expression functions,
singletons and products.  Normal cones come out as unions of finitely
generated cones keyed by the branch choices of the constraint
subdifferentials; coderivatives are slices of those cones.
"""
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy.spatial import cKDTree

from ..core.config import settings
from ..core.exceptions import (
    CombinatorialOverflowError,
    DimensionMismatchError,
    InfeasiblePointError,
    InputError,
    ProjectionGridError,
    QualificationError,
)
from .convgeom import ConeSpec, Polyhedron, Polytope, clip_polytope, convex_hull, slice_polyhedron
from .expr import FunctionDef, VarSpace, as_point, const, eval_function, evaluate_many, node, var
from .simplex import Feasible, LPBuilder, lp_feasible, require
from .subdiff import SampleParams, cluster_points, sample_directions, subdiff_service

# Configure logging
logger = logging.getLogger(__name__)

SET_KINDS = ("sublevel", "graph", "epigraph", "map_graph", "singleton", "product")
PROJECTION_GRID = 64


@dataclass(frozen=True, eq=False)
class SetSpec:
    kind: str
    functions: Tuple[FunctionDef, ...] = ()
    x_dim: Optional[int] = None
    point: Optional[Tuple[float, ...]] = None
    parts: Tuple["SetSpec", ...] = ()

    def __post_init__(self):
        if self.kind not in SET_KINDS:
            raise InputError(f"unknown set kind '{self.kind}'")
        object.__setattr__(self, "functions", tuple(self.functions))
        object.__setattr__(self, "parts", tuple(self.parts))
        if self.kind in ("sublevel", "graph"):
            if not self.functions:
                raise InputError(f"{self.kind} set needs at least one constraint")
            if len({f.space for f in self.functions}) != 1:
                raise DimensionMismatchError("constraints of one set must share a variable space")
        if self.kind == "graph" and not (self.x_dim and 0 < self.x_dim < self.functions[0].dim):
            raise InputError("graph set needs 0 < x_dim < dim")
        if self.kind in ("epigraph", "map_graph") and len(self.functions) != 1:
            raise InputError(f"{self.kind} set takes exactly one function")
        if self.kind == "singleton" and not self.point:
            raise InputError("singleton set needs a point")
        if self.kind == "product" and not self.parts:
            raise InputError("product set needs factors")

    @classmethod
    def sublevel(cls, constraints: Sequence[FunctionDef]) -> "SetSpec":
        return cls("sublevel", tuple(constraints))

    @classmethod
    def whole(cls, space: VarSpace) -> "SetSpec":
        return cls("sublevel", (FunctionDef(space, const(0.0)),))

    @classmethod
    def graph(cls, constraints: Sequence[FunctionDef], x_dim: int) -> "SetSpec":
        return cls("graph", tuple(constraints), x_dim=x_dim)

    @classmethod
    def epigraph(cls, f: FunctionDef) -> "SetSpec":
        return cls("epigraph", (f,), x_dim=f.dim)

    @classmethod
    def map_graph(cls, h: FunctionDef) -> "SetSpec":
        return cls("map_graph", (h,), x_dim=h.dim)

    @classmethod
    def singleton(cls, point) -> "SetSpec":
        return cls("singleton", point=tuple(float(c) for c in np.asarray(point, dtype=float).reshape(-1)))

    @classmethod
    def product(cls, parts: Sequence["SetSpec"]) -> "SetSpec":
        return cls("product", parts=tuple(parts))

    @property
    def dim(self) -> int:
        if self.kind in ("sublevel", "graph"):
            return self.functions[0].dim
        if self.kind in ("epigraph", "map_graph"):
            return self.functions[0].dim + 1
        if self.kind == "singleton":
            return len(self.point)
        return sum(p.dim for p in self.parts)

    @property
    def y_dim(self) -> int:
        if self.x_dim is None:
            raise InputError(f"{self.kind} set is not a graph")
        return self.dim - self.x_dim

    def lifted(self) -> "SetSpec":
        """Epigraph as the sublevel set {(x, mu) : f(x) - mu <= 0}."""
        if self.kind != "epigraph":
            return self
        return SetSpec.sublevel([lift_epigraph(self.functions[0])])

    def members(self, points: np.ndarray, slack: float = 0.0) -> np.ndarray:
        """Boolean mask of rows of `points` in the set; `slack` thickens thin sets."""
        X = np.atleast_2d(np.asarray(points, dtype=float))
        if X.shape[1] != self.dim:
            raise DimensionMismatchError(f"points of dim {X.shape[1]} for a set of dim {self.dim}")
        if self.kind in ("sublevel", "graph"):
            return np.all([evaluate_many(f, X) <= 0.0 for f in self.functions], axis=0)
        f = self.functions[0] if self.functions else None
        if self.kind == "epigraph":
            return evaluate_many(f, X[:, :-1]) <= X[:, -1]
        if self.kind == "map_graph":
            return np.abs(evaluate_many(f, X[:, :-1]) - X[:, -1]) <= slack + settings.TOL_GEOM
        if self.kind == "singleton":
            return np.max(np.abs(X - np.array(self.point)), axis=1) <= slack + settings.TOL_GEOM
        mask = np.ones(X.shape[0], dtype=bool)
        start = 0
        for part in self.parts:
            mask &= part.members(X[:, start:start + part.dim], slack)
            start += part.dim
        return mask

    def contains(self, point, tol: Optional[float] = None) -> bool:
        tol = settings.TOL_GEOM if tol is None else tol
        x = as_point(point, self.dim)
        return self.constraint_margin(x) <= tol

    def constraint_margin(self, x: np.ndarray) -> float:
        """Largest constraint violation at x (nonpositive inside the set)."""
        if self.kind in ("sublevel", "graph"):
            return max(eval_function(f, x) for f in self.functions)
        f = self.functions[0] if self.functions else None
        if self.kind == "epigraph":
            return eval_function(f, x[:-1]) - x[-1]
        if self.kind == "map_graph":
            return abs(eval_function(f, x[:-1]) - x[-1])
        if self.kind == "singleton":
            return float(np.max(np.abs(x - np.array(self.point))))
        out, start = -np.inf, 0
        for part in self.parts:
            out = max(out, part.constraint_margin(x[start:start + part.dim]))
            start += part.dim
        return out

    def describe(self) -> str:
        if self.kind in ("sublevel", "graph"):
            return f"{self.kind}{{" + ", ".join(f"{f} <= 0" for f in self.functions) + "}"
        if self.kind in ("epigraph", "map_graph"):
            return f"{self.kind}({self.functions[0]})"
        if self.kind == "singleton":
            return f"{{{list(self.point)}}}"
        return " x ".join(p.describe() for p in self.parts)


def lift_epigraph(f: FunctionDef) -> FunctionDef:
    name = "mu"
    while name in f.space.names:
        name = "_" + name
    space = VarSpace(f.space.names + (name,))
    g = f.embed(space, list(range(f.dim)))
    return FunctionDef(space, node("sub", g.root, var(f.dim)))


def _negate(f: FunctionDef) -> FunctionDef:
    return -f


@dataclass
class NormalConeResult:
    cones: List[ConeSpec]
    active: List[int] = field(default_factory=list)
    qualification: str = "n/a"

    @property
    def dim(self) -> int:
        return self.cones[0].dim

    def is_trivial(self) -> bool:
        return all(c.is_trivial() for c in self.cones)

    def all_generators(self) -> np.ndarray:
        return np.vstack([c.signed_generators() for c in self.cones])

    def to_dict(self) -> Dict[str, object]:
        return {
            "cones": [c.to_dict() for c in self.cones],
            "active": self.active,
            "qualification": self.qualification,
        }


def _dedupe_cones(cones: Sequence[ConeSpec]) -> List[ConeSpec]:
    out: List[ConeSpec] = []
    seen = set()
    for c in (c.canonical() for c in cones):
        key = (np.round(c.generators, 9).tobytes(), np.round(np.abs(c.lineality), 9).tobytes())
        if key not in seen:
            seen.add(key)
            out.append(c)
    return out


def _qualification_witness(parts: Sequence[Polytope]) -> Optional[List[float]]:
    """LP for Σ γ v = 0, Σ γ = 1 over the vertices of the chosen parts; returns λ_j or None."""
    b = LPBuilder()
    dim = parts[0].dim
    terms = {}
    for j, part in enumerate(parts):
        b.add_block(f"g{j}", part.vertices.shape[0])
        terms[f"g{j}"] = part.vertices.T
    b.add_eq(terms, np.zeros(dim))
    b.add_eq({name: np.ones((1, len(terms[name].T))) for name in terms}, [1.0])
    outcome = require(lp_feasible(b.build()), "qualification check")
    if isinstance(outcome, Feasible):
        return [float(b.read(outcome.assignment, f"g{j}").sum()) for j in range(len(parts))]
    return None


class NormalConeService:
    """Normal cones and coderivatives of SetSpec sets."""

    @staticmethod
    def _constraint_cones(constraints: Sequence[FunctionDef], x: np.ndarray, p: SampleParams) -> NormalConeResult:
        # Constant constraints are satisfied everywhere and contribute no normals
        active = [j for j, f in enumerate(constraints)
                  if f.root.kind != "const" and eval_function(f, x) >= -settings.TOL_GEOM]
        dim = x.shape[0]
        if not active:
            return NormalConeResult([ConeSpec.zero(dim)], [], "n/a")
        unions = [subdiff_service.basic_subdifferential(constraints[j], x, p)[0] for j in active]
        combos = 1
        for u in unions:
            combos *= len(u.parts)
        if combos > settings.BRANCH_CAP:
            raise CombinatorialOverflowError(f"{combos} branch combinations exceed {settings.BRANCH_CAP}")
        cones = []
        for choice in product(*[u.parts for u in unions]):
            witness = _qualification_witness(choice)
            if witness is not None:
                full = [0.0] * len(constraints)
                for j, lam in zip(active, witness):
                    full[j] = lam
                logger.error(f"qualification condition fails at {x.tolist()}: witness {full}")
                raise QualificationError(
                    f"qualification condition fails at {x.tolist()}: "
                    f"multipliers {full} combine active subgradients to zero",
                    full,
                )
            cones.append(ConeSpec(dim, np.vstack([part.vertices for part in choice])))
        return NormalConeResult(_dedupe_cones(cones), active, "verified")

    @staticmethod
    def normal_cone(s: SetSpec, x_bar, p: Optional[SampleParams] = None) -> NormalConeResult:
        """Limiting normal cone N(x̄; s) as a union of cones.

        Raises:
            InfeasiblePointError: x̄ is not in the set.
            QualificationError: the active constraint subgradients combine to zero.
        """
        p = p or SampleParams()
        x = as_point(x_bar, s.dim)
        if not s.contains(x):
            raise InfeasiblePointError(f"point {x.tolist()} is not in {s.describe()} (margin {s.constraint_margin(x):.3e})")
        if s.kind in ("sublevel", "graph"):
            return NormalConeService._constraint_cones(s.functions, x, p)
        if s.kind == "epigraph":
            return NormalConeService._constraint_cones(s.lifted().functions, x, p)
        if s.kind == "map_graph":
            h = s.functions[0]
            up = subdiff_service.basic_subdifferential(h, x[:-1], p)[0]
            down = subdiff_service.basic_subdifferential(_negate(h), x[:-1], p)[0]
            cones = [ConeSpec(s.dim, np.hstack([part.vertices, -np.ones((len(part.vertices), 1))])) for part in up.parts]
            cones += [ConeSpec(s.dim, np.hstack([part.vertices, np.ones((len(part.vertices), 1))])) for part in down.parts]
            return NormalConeResult(_dedupe_cones(cones), [0], "n/a")
        if s.kind == "singleton":
            return NormalConeResult([ConeSpec.full(s.dim)], [], "n/a")
        blocks, start = [], 0
        for part in s.parts:
            blocks.append(NormalConeService.normal_cone(part, x[start:start + part.dim], p))
            start += part.dim
        return NormalConeResult(_dedupe_cones([_block_product(choice) for choice in product(*[b.cones for b in blocks])]),
                                [], "verified" if any(b.qualification == "verified" for b in blocks) else "n/a")

    @staticmethod
    def coderivative(graph_spec: SetSpec, point, w, p: Optional[SampleParams] = None) -> List[Polyhedron]:
        """D*F(x̄,ȳ)(w) = {v : (v, -w) ∈ N((x̄,ȳ); gph F)} as a union of polyhedra (empty list: Empty)."""
        n = graph_spec.x_dim
        if n is None:
            raise InputError(f"coderivative needs a graph set, got {graph_spec.kind}")
        w = np.atleast_1d(np.asarray(w, dtype=float))
        if w.shape[0] != graph_spec.y_dim:
            raise DimensionMismatchError(f"w of length {w.shape[0]} for a map into R^{graph_spec.y_dim}")
        cones = NormalConeService.normal_cone(graph_spec, point, p)
        parts: List[Polyhedron] = []
        for cone in cones.cones:
            G = cone.signed_generators()
            sliced = slice_polyhedron(np.zeros((1, n)), np.zeros((1, graph_spec.y_dim)), G[:, :n], G[:, n:], -w)
            if sliced is not None and not any(_same_polyhedron(sliced, q) for q in parts):
                parts.append(sliced)
        return parts

    @staticmethod
    def lipschitz_like_check(graph_spec: SetSpec, point, p: Optional[SampleParams] = None) -> Tuple[bool, List[Polyhedron]]:
        """Coderivative criterion: F is Lipschitz-like around (x̄,ȳ) iff D*F(x̄,ȳ)(0) = {0}."""
        parts = NormalConeService.coderivative(graph_spec, point, np.zeros(graph_spec.y_dim), p)
        return all(q.is_zero() for q in parts), parts

    @staticmethod
    def coderivative_norm(graph_spec: SetSpec, point, p: Optional[SampleParams] = None) -> float:
        """sup{‖v‖ : v ∈ D*F(x̄,ȳ)(w), ‖w‖ <= 1}, the exact Lipschitz modulus when finite."""
        m = graph_spec.y_dim
        if m == 1:
            ws = np.array([[1.0], [-1.0]])
        else:
            ws = sample_directions(m, 8 * m, 0)
        best = 0.0
        for w in ws:
            for q in NormalConeService.coderivative(graph_spec, point, w, p):
                if not q.is_bounded:
                    return float("inf")
                best = max(best, float(np.max(np.linalg.norm(q.base.vertices, axis=1))))
        return best

    @staticmethod
    def prenormal_cone(s: SetSpec, x_bar, p: Optional[SampleParams] = None) -> ConeSpec:
        """Regular normal cone: the hull of all limiting normals cut by ⟨v, d⟩ <= 0 over sampled feasible directions d."""
        p = p or SampleParams()
        x = as_point(x_bar, s.dim)
        limiting = NormalConeService.normal_cone(s, x, p)
        G = limiting.all_generators()
        norms = np.linalg.norm(G, axis=1)
        G = G[norms > settings.TOL_GEOM] / norms[norms > settings.TOL_GEOM, None]
        if not len(G):
            return ConeSpec.zero(s.dim)
        dirs = feasible_directions(s, x, p)
        base = convex_hull(np.vstack([G, np.zeros((1, s.dim))]))
        cut = clip_polytope(base, dirs, np.zeros(len(dirs))) if len(dirs) else base
        if cut is None:
            return ConeSpec.zero(s.dim)
        return ConeSpec(s.dim, cut.vertices).canonical()


def _same_polyhedron(a: Polyhedron, b: Polyhedron) -> bool:
    return a.base.equals(b.base) and a.cone.generators.shape == b.cone.generators.shape and bool(
        np.allclose(a.cone.generators, b.cone.generators, atol=settings.TOL_GEOM))


def _block_product(cones: Sequence[ConeSpec]) -> ConeSpec:
    dim = sum(c.dim for c in cones)
    gens, lins, start = [], [], 0
    for c in cones:
        for g in c.generators:
            row = np.zeros(dim)
            row[start:start + c.dim] = g
            gens.append(row)
        for l in c.lineality:
            row = np.zeros(dim)
            row[start:start + c.dim] = l
            lins.append(row)
        start += c.dim
    return ConeSpec(dim, np.array(gens).reshape(-1, dim), np.array(lins).reshape(-1, dim))


# Projection oracle

def _grid_offsets(dim: int, n: int) -> np.ndarray:
    axis = np.arange(-n, n + 1, dtype=float) / n
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def project(s: SetSpec, z: np.ndarray, radius: float, n: int = PROJECTION_GRID) -> np.ndarray:
    """Nearest grid points of the set to z on a local grid of the given radius (resolution radius/n)."""
    if s.dim > 3:
        raise InputError(f"grid projection supports dimension <= 3, got {s.dim}")
    step = radius / n
    pts = z + radius * _grid_offsets(s.dim, n)
    mask = s.members(pts, slack=step / 2)
    if not np.any(mask):
        raise ProjectionGridError(f"no feasible grid point within {radius:.3e} of {z.tolist()}")
    feas = pts[mask]
    dist = np.linalg.norm(feas - z, axis=1)
    return feas[dist <= dist.min() + 1e-12]


def feasible_directions(s: SetSpec, x: np.ndarray, p: SampleParams) -> np.ndarray:
    """Unit directions from x̄ to nearby points of the set (projections of sampled points)."""
    r = p.radii[-1]
    out = []
    for d in sample_directions(s.dim, p.dirs_per_radius, p.seed):
        z = x + r * d
        if s.members(z[None, :])[0]:
            out.append(d)
            continue
        for w in project(s, z, r):
            u = w - x
            if np.linalg.norm(u) > r / PROJECTION_GRID:
                out.append(u / np.linalg.norm(u))
    return np.array(out).reshape(-1, s.dim)


@dataclass
class NormalOracleResult:
    directions: np.ndarray
    clusters: np.ndarray

    def to_dict(self) -> Dict[str, object]:
        return {"clusters": self.clusters.tolist(), "samples": int(len(self.directions))}


def sampled_normal_cone_oracle(s: SetSpec, x_bar, p: Optional[SampleParams] = None) -> NormalOracleResult:
    """Unit proximal normals (z - w)/‖z - w‖ with w a grid projection of z = x̄ + r·d."""
    p = p or SampleParams()
    x = as_point(x_bar, s.dim)
    if not s.contains(x):
        raise InfeasiblePointError(f"point {x.tolist()} is not in {s.describe()}")
    out = []
    for r in p.radii:
        for d in sample_directions(s.dim, p.dirs_per_radius, p.seed):
            z = x + r * d
            if s.members(z[None, :])[0]:
                continue
            for w in project(s, z, r):
                u = z - w
                norm = np.linalg.norm(u)
                if norm > 0:
                    out.append(u / norm)
    dirs = np.array(out).reshape(-1, s.dim)
    clusters = cluster_points(np.round(dirs, 12), 0.05) if len(dirs) else dirs
    return NormalOracleResult(dirs, clusters)


def angular_gap(directions: np.ndarray, cones: Sequence[ConeSpec]) -> float:
    """Largest angle (radians) from a unit direction to the nearest cone of the union."""
    worst = 0.0
    for u in directions:
        d = min(c.distance(u) for c in cones)
        worst = max(worst, float(np.arcsin(min(d, 1.0))))
    return worst


# Direct test of the Lipschitz-like inclusion

def sampled_lipschitz_like(members: Callable[[np.ndarray, np.ndarray, float], np.ndarray], x_bar: np.ndarray,
                           y_bar: np.ndarray, scales: Sequence[float] = tuple(10.0 ** -k for k in range(2, 9)),
                           max_ratio: Optional[float] = None) -> Dict[str, object]:
    """Test F(x) ∩ V ⊆ F(u) + ℓ‖x - u‖B for x, u ∈ {x̄, x̄ ± s·e_i}.

    `members(x, Y, slack)` returns the mask of grid rows Y lying in F(x).
    The y-neighbourhood V shrinks with the scale so that a ratio above
    `max_ratio` is still visible on the grid.
    """
    max_ratio = settings.LIPSCHITZ_LIKE_MAX_RATIO if max_ratio is None else max_ratio
    n, m = x_bar.shape[0], y_bar.shape[0]
    if m > 2:
        raise InputError(f"sampled Lipschitz-like test supports y-dimension <= 2, got {m}")
    per_axis = 8001 if m == 1 else 401
    worst, witness = 0.0, None
    for s in scales:
        rho = min(0.5, 4 * max_ratio * s)
        axis = np.linspace(-2 * rho, 2 * rho, per_axis)
        step = axis[1] - axis[0]
        mesh = np.meshgrid(*([axis] * m), indexing="ij")
        Y = y_bar + np.column_stack([g.ravel() for g in mesh])
        near = np.max(np.abs(Y - y_bar), axis=1) <= rho
        xs = [x_bar] + [x_bar + sign * s * e for e in np.eye(n) for sign in (1.0, -1.0)]
        for i, xa in enumerate(xs):
            in_a = members(xa, Y, step) & near
            if not np.any(in_a):
                continue
            for j, xb in enumerate(xs):
                if i == j:
                    continue
                gap = np.linalg.norm(xa - xb)
                in_b = members(xb, Y, step)
                if not np.any(in_b):
                    dist = np.inf
                else:
                    dist = float(np.max(cKDTree(Y[in_b]).query(Y[in_a])[0]))
                ratio = dist / gap
                if ratio > worst:
                    worst, witness = ratio, {"x": xa.tolist(), "u": xb.tolist(), "scale": s, "distance": dist}
    return {"verdict": bool(worst <= max_ratio), "worst_ratio": worst, "witness": witness}


def graph_members(graph_spec: SetSpec) -> Callable[[np.ndarray, np.ndarray, float], np.ndarray]:
    """Adapter from a graph SetSpec to the members(x, Y, slack) callable."""
    n = graph_spec.x_dim

    def members(x: np.ndarray, Y: np.ndarray, slack: float) -> np.ndarray:
        pts = np.hstack([np.tile(x, (Y.shape[0], 1)), Y])
        return graph_spec.members(pts, slack=slack / 2)

    if n is None:
        raise InputError(f"{graph_spec.kind} set is not a graph")
    return members


def sampled_lipschitz_like_test(graph_spec: SetSpec, point, max_ratio: Optional[float] = None) -> Dict[str, object]:
    x = as_point(point, graph_spec.dim)
    n = graph_spec.x_dim
    return sampled_lipschitz_like(graph_members(graph_spec), x[:n], x[n:], max_ratio=max_ratio)


normal_cone_service = NormalConeService()
