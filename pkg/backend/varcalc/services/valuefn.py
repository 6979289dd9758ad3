"""Lower-level optimal value functions on grids.

ϑ(x) = inf{φ(x, y) : f_i(x, y) <= 0} is evaluated by exhaustive search over
a user-supplied y-box, never by a local solver.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.config import settings
from ..core.exceptions import (
    DimensionMismatchError,
    HypothesisFailure,
    InfeasibleOnBoxError,
    InputError,
    PreconditionError,
)
from .convgeom import Polyhedron, PolytopeUnion, slice_polyhedron
from .expr import FunctionDef, as_point, const, evaluate_many
from .normals import SetSpec, normal_cone_service
from .subdiff import SampleParams, sample_directions, subdiff_service

# Configure logging
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParametricProblem:
    cost: FunctionDef
    constraints: Tuple[FunctionDef, ...]
    x_dim: int

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        for f in self.constraints:
            if f.space != self.cost.space:
                raise DimensionMismatchError("cost and constraints must share the (x, y) variable space")
        if not 0 < self.x_dim < self.cost.dim:
            raise InputError(f"x_dim must leave at least one y variable (dim {self.cost.dim}, x_dim {self.x_dim})")

    @property
    def y_dim(self) -> int:
        return self.cost.dim - self.x_dim

    def graph_spec(self) -> SetSpec:
        """gph F with F(x) = {y : f_i(x, y) <= 0}; a box-free F is the whole y-space."""
        constraints = self.constraints or (FunctionDef(self.cost.space, const(0.0)),)
        return SetSpec.graph(constraints, self.x_dim)


class GridSpec(BaseModel):
    """y-box and resolution for the exhaustive lower-level search."""

    model_config = ConfigDict(frozen=True)

    y_box: List[Tuple[float, float]]
    resolution: int = Field(default_factory=lambda: settings.GRID_RESOLUTION)
    x_stencil_radius: float = Field(default_factory=lambda: settings.STENCIL_RADIUS)
    x_stencil_count: int = Field(default_factory=lambda: settings.STENCIL_COUNT)

    @model_validator(mode="after")
    def _check(self):
        if not self.y_box:
            raise InputError("grid box needs at least one y interval")
        for lo, hi in self.y_box:
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
                raise InputError(f"invalid grid interval [{lo}, {hi}]")
        if self.resolution < 3:
            raise InputError("grid resolution must be at least 3")
        if self.x_stencil_radius <= 0 or self.x_stencil_count < 1:
            raise InputError("x stencil needs a positive radius and count")
        return self

    def per_axis(self) -> int:
        """Points per axis, reduced so the grid stays under MAX_GRID_POINTS."""
        m = len(self.y_box)
        n = self.resolution
        while n ** m > settings.MAX_GRID_POINTS and n > 3:
            n = (n + 1) // 2
        if n != self.resolution:
            logger.debug(f"grid resolution reduced from {self.resolution} to {n} per axis")
        return n

    def points(self) -> np.ndarray:
        n = self.per_axis()
        axes = [np.linspace(lo, hi, n) for lo, hi in self.y_box]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def step(self) -> float:
        n = self.per_axis()
        return max((hi - lo) / (n - 1) for lo, hi in self.y_box)

    def stencil_radii(self) -> List[float]:
        return [self.x_stencil_radius * 2.0 ** -j for j in range(self.x_stencil_count)]


@dataclass
class ValueSample:
    x: List[float]
    theta: float
    argmins: List[List[float]]

    def to_dict(self) -> Dict[str, object]:
        return {"x": self.x, "theta": self.theta, "argmins": self.argmins}


@dataclass
class ISCReport:
    verdict: bool
    threshold: float
    worst_x: Optional[List[float]] = None
    worst_distance: float = 0.0
    per_radius: List[Dict[str, float]] = field(default_factory=list)
    via: str = "probe"

    def to_dict(self) -> Dict[str, object]:
        return dict(self.__dict__)


@dataclass
class ValueEstimate:
    basic: List[Polyhedron]
    singular: List[Polyhedron]
    isc: str
    notes: List[str] = field(default_factory=list)

    def basic_union(self) -> Optional[PolytopeUnion]:
        if self.basic and all(p.is_bounded for p in self.basic):
            return PolytopeUnion(tuple(p.base for p in self.basic))
        return None

    def to_dict(self) -> Dict[str, object]:
        return {
            "basic": [p.to_dict() for p in self.basic],
            "singular": [p.to_dict() for p in self.singular],
            "isc": self.isc,
            "notes": self.notes,
        }


def _lipschitz_bound(f: FunctionDef, X: np.ndarray) -> float:
    """Largest slope of f between consecutive sampled rows."""
    if len(X) < 2:
        return 0.0
    vals = evaluate_many(f, X)
    diffs = np.abs(np.diff(vals)) / np.maximum(np.linalg.norm(np.diff(X, axis=0), axis=1), 1e-300)
    return float(np.max(diffs))


def _margin(prob: ParametricProblem, pts: np.ndarray) -> np.ndarray:
    margin = np.full(len(pts), -np.inf)
    for f in prob.constraints:
        margin = np.maximum(margin, evaluate_many(f, pts))
    return margin


def _boundary_points(prob: ParametricProblem, x: np.ndarray, Y: np.ndarray, shape: Tuple[int, ...],
                     feasible: np.ndarray, iterations: int = 60) -> np.ndarray:
    """Feasible points on the constraint boundary between axis-adjacent grid points of opposite feasibility."""
    mask = feasible.reshape(shape)
    flat = np.arange(Y.shape[0]).reshape(shape)
    inner, outer = [], []
    for axis in range(len(shape)):
        a = np.take(mask, range(shape[axis] - 1), axis=axis)
        b = np.take(mask, range(1, shape[axis]), axis=axis)
        ia = np.take(flat, range(shape[axis] - 1), axis=axis)
        ib = np.take(flat, range(1, shape[axis]), axis=axis)
        inner += [ia[a & ~b], ib[b & ~a]]
        outer += [ib[a & ~b], ia[b & ~a]]
    inner_idx, outer_idx = np.concatenate(inner), np.concatenate(outer)
    if not len(inner_idx):
        return np.zeros((0, Y.shape[1]))
    lo, hi = Y[inner_idx].copy(), Y[outer_idx].copy()
    xs = np.tile(x, (len(lo), 1))
    for _ in range(iterations):
        mid = (lo + hi) / 2
        ok = _margin(prob, np.hstack([xs, mid])) <= settings.TOL_GEOM
        lo[ok], hi[~ok] = mid[ok], mid[~ok]
    return lo


class ValueFunctionService:
    """Grid evaluation of ϑ and the subdifferential estimates built on the argminimum map."""

    @staticmethod
    def _grid_values(prob: ParametricProblem, X: np.ndarray, Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Objective values (len(X), len(Y)) with infeasible entries set to +inf, and the constraint margins."""
        nx, ny = len(X), len(Y)
        pts = np.hstack([np.repeat(X, ny, axis=0), np.tile(Y, (nx, 1))])
        values = evaluate_many(prob.cost, pts).reshape(nx, ny)
        margin = _margin(prob, pts).reshape(nx, ny)
        return np.where(margin <= settings.TOL_GEOM, values, np.inf), margin

    @staticmethod
    def evaluate_value(prob: ParametricProblem, x, grid: GridSpec) -> ValueSample:
        """ϑ(x) as the grid infimum; argmins are the grid points within TOL_ARG of it.

        Raises:
            InfeasibleOnBoxError: no grid point is feasible; `certified_empty`
                is set when the smallest constraint margin exceeds what grid
                spacing could hide.
        """
        return ValueFunctionService.value_on_grid(prob, np.atleast_2d(as_point(x, prob.x_dim)), grid)[0]

    @staticmethod
    def value_on_grid(prob: ParametricProblem, xs, grid: GridSpec) -> List[ValueSample]:
        X = np.atleast_2d(np.asarray(xs, dtype=float))
        if X.shape[1] != prob.x_dim:
            raise DimensionMismatchError(f"x points of dim {X.shape[1]} for x_dim {prob.x_dim}")
        if len(grid.y_box) != prob.y_dim:
            raise DimensionMismatchError(f"grid box has {len(grid.y_box)} intervals for y_dim {prob.y_dim}")
        Y = grid.points()
        shape = (grid.per_axis(),) * prob.y_dim
        out: List[ValueSample] = []
        chunk = max(1, settings.MAX_GRID_POINTS // max(len(Y), 1))
        for start in range(0, len(X), chunk):
            block = X[start:start + chunk]
            values, margin = ValueFunctionService._grid_values(prob, block, Y)
            for i, x in enumerate(block):
                row = values[i]
                if not np.any(np.isfinite(row)):
                    best = float(np.min(margin[i]))
                    slope = max((_lipschitz_bound(f, np.hstack([np.tile(x, (len(Y), 1)), Y])) for f in prob.constraints),
                                default=0.0)
                    certified = best > slope * grid.step()
                    logger.error(f"lower level infeasible on the grid box at x={x.tolist()}: margin {best:.3e}")
                    raise InfeasibleOnBoxError(
                        f"no feasible y on the grid box at x = {x.tolist()} (smallest constraint value {best:.3e}; "
                        + ("certified empty on box" if certified else "grid may be too coarse") + ")",
                        margin=best,
                        certified_empty=certified,
                    )
                edge = _boundary_points(prob, x, Y, shape, np.isfinite(row))
                edge_values = evaluate_many(prob.cost, np.hstack([np.tile(x, (len(edge), 1)), edge])) if len(edge) else row[:0]
                theta = float(min(np.min(row), np.min(edge_values, initial=np.inf)))
                best = np.vstack([Y[row <= theta + settings.TOL_ARG], edge[edge_values <= theta + settings.TOL_ARG]])
                argmins = np.unique(np.round(best, 9), axis=0)
                out.append(ValueSample(x.tolist(), theta, argmins.tolist()))
        return out

    @staticmethod
    def inner_semicontinuity_probe(prob: ParametricProblem, point, grid: GridSpec,
                                   p: Optional[SampleParams] = None) -> ISCReport:
        """dist(ȳ, M(x_k)) for x_k = x̄ + r·d over the stencil radii; passes when the smallest radius stays within 10 grid steps."""
        p = p or SampleParams()
        z = as_point(point, prob.cost.dim)
        x_bar, y_bar = z[:prob.x_dim], z[prob.x_dim:]
        sample = ValueFunctionService.evaluate_value(prob, x_bar, grid)
        if np.min(np.max(np.abs(np.array(sample.argmins) - y_bar), axis=1)) > grid.step() + settings.TOL_GEOM:
            raise PreconditionError(f"ȳ = {y_bar.tolist()} is not a grid argmin at x̄ = {x_bar.tolist()}")
        dirs = sample_directions(prob.x_dim, 2 * prob.x_dim, p.seed)
        threshold = 10 * grid.step()
        report = ISCReport(verdict=True, threshold=threshold)
        last = 0.0
        for r in grid.stencil_radii():
            xs = x_bar + r * dirs
            worst = 0.0
            for s in ValueFunctionService.value_on_grid(prob, xs, grid):
                dist = float(np.min(np.linalg.norm(np.array(s.argmins) - y_bar, axis=1)))
                if dist > worst:
                    worst = dist
                if dist > report.worst_distance:
                    report.worst_distance, report.worst_x = dist, s.x
            report.per_radius.append({"radius": r, "max_distance": worst})
            last = worst
        report.verdict = last <= threshold
        return report

    @staticmethod
    def value_subdiff_estimate(prob: ParametricProblem, point, grid: Optional[GridSpec] = None,
                               p: Optional[SampleParams] = None, override_isc: bool = False,
                               isc_via_lipschitz_like: bool = False) -> ValueEstimate:
        """Upper estimates ∂ϑ(x̄) ⊆ ∪_{(v,w) ∈ ∂φ} [v + D*F(w)] and ∂^∞ϑ(x̄) ⊆ D*F(0).

        Computed as slices of the polyhedron hull(∂φ part) + N(gph F) at
        y-block zero, one per part and normal-cone piece, which is exact for
        the union over all (v, w) in each part.

        Raises:
            HypothesisFailure: the inner semicontinuity probe fails and is not overridden.
        """
        p = p or SampleParams()
        z = as_point(point, prob.cost.dim)
        n = prob.x_dim
        notes: List[str] = []
        if isc_via_lipschitz_like:
            ok, _ = normal_cone_service.lipschitz_like_check(prob.graph_spec(), z, p)
            isc = "verified" if ok else "failed"
            notes.append("inner semicontinuity taken from the Lipschitz-like property of F")
        elif grid is not None:
            isc = "probed" if ValueFunctionService.inner_semicontinuity_probe(prob, z, grid, p).verdict else "failed"
        else:
            isc = "unchecked"
        if isc in ("failed", "unchecked"):
            if not override_isc:
                logger.error(f"inner semicontinuity not established at {z.tolist()} ({isc})")
                raise HypothesisFailure(
                    f"inner semicontinuity of the argminimum map {isc} at {z.tolist()}; pass the override to proceed",
                    "inner_semicontinuity",
                    {"inner_semicontinuity": isc},
                )
            notes.append(f"inner semicontinuity {isc}; estimate computed under override")
            logger.warning(notes[-1])
            isc = "overridden"

        phi_parts = subdiff_service.basic_subdifferential(prob.cost, z, p)[0].parts
        cones = normal_cone_service.normal_cone(prob.graph_spec(), z, p).cones
        basic: List[Polyhedron] = []
        singular: List[Polyhedron] = []
        for cone in cones:
            G = cone.signed_generators()
            for part in phi_parts:
                sliced = slice_polyhedron(part.vertices[:, :n], part.vertices[:, n:], G[:, :n], G[:, n:],
                                          np.zeros(prob.y_dim))
                if sliced is not None:
                    basic.append(sliced)
            zero = slice_polyhedron(np.zeros((1, n)), np.zeros((1, prob.y_dim)), G[:, :n], G[:, n:],
                                    np.zeros(prob.y_dim))
            if zero is not None:
                singular.append(zero)
        if not basic:
            notes.append("estimate is empty: no (v, w) in the cost subdifferential is compatible with the normal cone")
        return ValueEstimate(basic, singular, isc, notes)

    @staticmethod
    def lipschitz_verdict(prob: ParametricProblem, point, grid: Optional[GridSpec] = None,
                          p: Optional[SampleParams] = None) -> Dict[str, object]:
        """Lipschitz continuity of ϑ from the coderivative criterion on gph F, plus an empirical modulus."""
        z = as_point(point, prob.cost.dim)
        ok, parts = normal_cone_service.lipschitz_like_check(prob.graph_spec(), z, p)
        result: Dict[str, object] = {
            "verdict": ok,
            "coderivative_at_zero": [q.to_dict() for q in parts],
            "modulus": None,
        }
        if grid is not None:
            x_bar = z[:prob.x_dim]
            r = grid.stencil_radii()[-1]
            pts = np.vstack([x_bar, x_bar + r * sample_directions(prob.x_dim, 2 * prob.x_dim, 0)])
            thetas = np.array([s.theta for s in ValueFunctionService.value_on_grid(prob, pts, grid)])
            gaps = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
            off = gaps > 0
            result["modulus"] = float(np.max(np.abs(thetas[:, None] - thetas[None, :])[off] / gaps[off]))
        return result

    @staticmethod
    def sampled_value_gradients(prob: ParametricProblem, x_bar, grid: GridSpec,
                                radii: Optional[Sequence[float]] = None, n_dirs: int = 16) -> np.ndarray:
        """Central difference-quotient gradients of grid ϑ at points x̄ + r·d, one row per sample."""
        x = as_point(x_bar, prob.x_dim)
        radii = list(radii) if radii is not None else grid.stencil_radii()
        dirs = sample_directions(prob.x_dim, n_dirs, 0)
        out = []
        for r in radii:
            h = r / 10
            centers = x + r * dirs
            for c in centers:
                probes = np.vstack([c + h * e for e in np.eye(prob.x_dim)] + [c - h * e for e in np.eye(prob.x_dim)])
                thetas = np.array([s.theta for s in ValueFunctionService.value_on_grid(prob, probes, grid)])
                n = prob.x_dim
                out.append((thetas[:n] - thetas[n:]) / (2 * h))
        return np.array(out)


value_service = ValueFunctionService()
