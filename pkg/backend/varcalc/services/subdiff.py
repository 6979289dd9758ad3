from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple
import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.cluster.hierarchy import fcluster, linkage

from ..core.config import settings
from ..core.exceptions import InputError
from .convgeom import (
    ConeSpec,
    Polytope,
    PolytopeUnion,
    canonical_union,
    clip_polytope,
    convex_hull,
    hausdorff_distance,
    unit_directions,
)
from .expr import (
    ActivePattern,
    FunctionDef,
    active_gradients,
    active_pattern,
    as_point,
    branch_gradient,
    directional_derivative,
    eval_function,
    evaluate_many,
    iter_branches,
    unique_rows,
)

# Configure logging
logger = logging.getLogger(__name__)

LATTICE_CAP = 2000


class SampleParams(BaseModel):
    """Radii, directions and ε-enlargements used by the sampling oracles."""

    model_config = ConfigDict(frozen=True)

    radii: List[float] = Field(default_factory=lambda: list(settings.SAMPLE_RADII))
    dirs_per_radius: int = Field(default_factory=lambda: settings.DIRS_PER_RADIUS)
    epsilons: Optional[List[float]] = None
    seed: int = Field(default_factory=lambda: settings.SEED)

    @model_validator(mode="after")
    def _check(self):
        if not self.radii or any(r <= 0 for r in self.radii):
            raise InputError("sample radii must be positive")
        if any(a <= b for a, b in zip(self.radii, self.radii[1:])):
            raise InputError("sample radii must be strictly decreasing")
        if self.dirs_per_radius < 1:
            raise InputError("dirs_per_radius must be positive")
        if self.epsilons is not None:
            if len(self.epsilons) != len(self.radii) or any(e < 0 for e in self.epsilons):
                raise InputError("epsilons must be nonnegative, one per radius")
            if any(a < b for a, b in zip(self.epsilons, self.epsilons[1:])):
                raise InputError("epsilons must be nonincreasing")
        return self

    def eps(self) -> List[float]:
        return list(self.epsilons) if self.epsilons is not None else [r / 10 for r in self.radii]


def sample_directions(dim: int, n: int, seed: int) -> np.ndarray:
    """+/- coordinate axes followed by seeded Gaussian directions, `max(n, 2*dim)` in total."""
    axes = np.vstack([np.eye(dim), -np.eye(dim)])
    extra = max(n - len(axes), 0)
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(extra, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.vstack([axes, d])


def cluster_points(points: np.ndarray, tol: float) -> np.ndarray:
    """Single-linkage cluster centers, sorted lexicographically."""
    pts = unique_rows(np.asarray(points, dtype=float), 0.0)
    if len(pts) <= 1:
        return pts
    labels = fcluster(linkage(pts, method="single"), t=tol, criterion="distance")
    centers = np.array([pts[labels == k].mean(axis=0) for k in np.unique(labels)])
    return centers[np.lexsort(centers.T[::-1])]


def oracle_cluster_tolerance(finest_radius: float) -> float:
    """Linkage distance for oracle gradients: max(10·TOL_GEOM, 10·finest radius).

    Gradients sampled at distance r from x̄ differ from their limit by O(r)
    wherever f is curved, so a bound of 10·TOL_GEOM alone splits one smooth
    piece into a cluster per sampled direction.
    """
    return max(10 * settings.TOL_GEOM, 10 * finest_radius)


@dataclass
class PatternCount:
    pattern: ActivePattern
    count: int
    part: Optional[Polytope]

    def to_dict(self) -> Dict[str, object]:
        return {
            "pattern": self.pattern.describe(),
            "count": self.count,
            "part": self.part.to_list() if self.part is not None else None,
        }


@dataclass
class OracleResult:
    """Accepted ε-subgradients and their cluster summary."""

    cloud: np.ndarray
    radii: np.ndarray
    clusters: np.ndarray
    union: Optional[PolytopeUnion]
    accepted: int
    tested: int

    def to_dict(self) -> Dict[str, object]:
        return {
            "clusters": self.clusters.tolist(),
            "union": self.union.to_list() if self.union is not None else None,
            "accepted": self.accepted,
            "tested": self.tested,
        }


@dataclass
class SubdiffResult:
    regular: Optional[Polytope]
    basic: PolytopeUnion
    singular: ConeSpec
    method: str = "symbolic"
    census: List[PatternCount] = field(default_factory=list)
    oracle: Optional[OracleResult] = None
    hausdorff: Optional[float] = None

    def to_dict(self) -> Dict[str, object]:
        data = {
            "regular": self.regular.to_list() if self.regular is not None else None,
            "basic": self.basic.to_list(),
            "singular": self.singular.to_dict(),
            "method": self.method,
            "census": [c.to_dict() for c in self.census],
        }
        if self.oracle is not None:
            data["oracle"] = self.oracle.to_dict()
            data["hausdorff"] = self.hausdorff
        return data


def _critical_directions(grads: np.ndarray) -> np.ndarray:
    """Planar directions along which two branch gradients tie."""
    out = []
    for i in range(len(grads)):
        for j in range(i + 1, len(grads)):
            diff = grads[i] - grads[j]
            norm = np.linalg.norm(diff)
            if norm > settings.TOL_GEOM:
                perp = np.array([-diff[1], diff[0]]) / norm
                out.extend([perp, -perp])
    return np.array(out).reshape(-1, 2)


def _clip_directions(grads: np.ndarray, dim: int, p: SampleParams) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    dirs = sample_directions(dim, p.dirs_per_radius, p.seed)
    if dim == 2:
        dirs = np.vstack([dirs, _critical_directions(grads)])
    return dirs


class SubdifferentialService:
    """Regular, basic and singular subdifferentials of expression functions."""

    @staticmethod
    def restricted_regular(f: FunctionDef, x: np.ndarray, pattern: ActivePattern,
                           p: Optional[SampleParams] = None) -> Optional[Polytope]:
        """Regular subdifferential at `x` of f with piecewise nodes restricted to `pattern`.

        Starts from the hull of the reachable branch gradients and keeps the
        vectors v with <v, d> <= f'(x; d) on the clip directions.  Returns
        None when nothing survives.
        """
        p = p or SampleParams()
        grads = unique_rows(np.array([branch_gradient(f, x, b) for b in iter_branches(f, pattern)]), settings.TOL_GEOM)
        hull = convex_hull(grads)
        if pattern.is_singleton() or hull.is_singleton:
            return hull
        dirs = _clip_directions(grads, f.dim, p)
        offsets = np.array([directional_derivative(f, x, d, pattern=pattern) for d in dirs])
        return clip_polytope(hull, dirs, offsets)

    @staticmethod
    def regular_subdifferential(f: FunctionDef, x_bar, p: Optional[SampleParams] = None) -> Optional[Polytope]:
        x = as_point(x_bar, f.dim)
        return SubdifferentialService.restricted_regular(f, x, active_pattern(f, x), p)

    @staticmethod
    def pattern_census(f: FunctionDef, x_bar, p: Optional[SampleParams] = None) -> Dict[ActivePattern, int]:
        """Active patterns seen at x̄ + r·d on the smallest radius that refine the pattern at x̄."""
        p = p or SampleParams()
        x = as_point(x_bar, f.dim)
        base = active_pattern(f, x)
        census: Dict[ActivePattern, int] = {base: 1}
        r = p.radii[-1]
        for d in sample_directions(f.dim, p.dirs_per_radius, p.seed):
            pat = active_pattern(f, x + r * d)
            if pat.within(base):
                census[pat] = census.get(pat, 0) + 1
            else:
                logger.debug(f"pattern at radius {r} not within the base pattern: {pat.describe()}")
        return census

    @staticmethod
    def basic_subdifferential(f: FunctionDef, x_bar, p: Optional[SampleParams] = None) -> Tuple[PolytopeUnion, List[PatternCount]]:
        """Union over realized patterns of the restricted regular subdifferentials at x̄."""
        p = p or SampleParams()
        x = as_point(x_bar, f.dim)
        base = active_pattern(f, x)
        if base.is_singleton():
            g = active_gradients(f, x, base)
            return PolytopeUnion((Polytope(g),)), [PatternCount(base, 1, Polytope(g))]
        census = SubdifferentialService.pattern_census(f, x, p)
        counts: List[PatternCount] = []
        parts: List[Polytope] = []
        for pattern in sorted(census, key=lambda q: q.key()):
            part = SubdifferentialService.restricted_regular(f, x, pattern, p)
            counts.append(PatternCount(pattern, census[pattern], part))
            if part is not None:
                parts.append(part)
        if not parts:
            logger.warning(f"no realized pattern of {f} at {x.tolist()} has a regular subgradient; using active gradients")
            parts = [Polytope(g[None, :]) for g in active_gradients(f, x, base)]
        return canonical_union(parts), counts

    @staticmethod
    def singular_subdifferential(f: FunctionDef, x_bar) -> ConeSpec:
        as_point(x_bar, f.dim)
        return ConeSpec.zero(f.dim)

    @staticmethod
    def compute(f: FunctionDef, x_bar, p: Optional[SampleParams] = None, oracle: bool = False) -> SubdiffResult:
        p = p or SampleParams()
        regular = SubdifferentialService.regular_subdifferential(f, x_bar, p)
        basic, census = SubdifferentialService.basic_subdifferential(f, x_bar, p)
        result = SubdiffResult(regular, basic, SubdifferentialService.singular_subdifferential(f, x_bar), census=census)
        if oracle:
            result.oracle = sampled_subdiff_oracle(f, x_bar, p)
            result.method = "symbolic+sampled"
            if result.oracle.union is not None:
                result.hausdorff = hausdorff_distance(basic, result.oracle.union)
        return result


def _lattice(vertices: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Barycentric lattice points of conv(vertices), at most LATTICE_CAP of them."""
    k = len(vertices)
    if k == 1:
        return vertices
    n = 1
    while math.comb(n + k, k - 1) <= LATTICE_CAP and n < 400:
        n += 1
    if math.comb(n + k - 1, k - 1) > LATTICE_CAP or n < 2:
        w = rng.dirichlet(np.ones(k), size=LATTICE_CAP)
        w = np.vstack([np.eye(k), w])
    else:
        w = np.array(_compositions(n, k), dtype=float) / n
    return w @ vertices


def _compositions(n: int, k: int) -> List[Tuple[int, ...]]:
    if k == 1:
        return [(n,)]
    return [(i,) + rest for i in range(n + 1) for rest in _compositions(n - i, k - 1)]


def sampled_subdiff_oracle(f: FunctionDef, x_bar, p: Optional[SampleParams] = None) -> OracleResult:
    """Brute-force ε-subgradients from the limiting definition.

    At z = x̄ + r·d (and at x̄ itself) candidate vectors are tested against
    f(u) - f(z) - <v, u - z> >= -ε‖u - z‖ on a stencil around z.  Candidates
    are the gradient when the pattern at z is a singleton, otherwise a
    lattice over the hull of the active gradients.  Clusters and the union
    come from the smallest radius, linked at `oracle_cluster_tolerance`.
    """
    p = p or SampleParams()
    x = as_point(x_bar, f.dim)
    dim = f.dim
    rng = np.random.default_rng(p.seed)
    dirs = sample_directions(dim, p.dirs_per_radius, p.seed)
    stencil = unit_directions(dim, 4 * dim + 12)
    cloud: List[np.ndarray] = []
    tags: List[float] = []
    fills: List[Polytope] = []
    singles: List[np.ndarray] = []
    tested = 0
    finest = p.radii[-1]

    for r, eps in zip(p.radii, p.eps()):
        centers = [(x + r * d, r / 100) for d in dirs] + [(x, r)]
        for z, step in centers:
            pattern = active_pattern(f, z)
            if pattern.is_singleton():
                candidates = active_gradients(f, z, pattern)
            else:
                candidates = _lattice(convex_hull(active_gradients(f, z, pattern)).vertices, rng)
            disp = step * stencil
            df = evaluate_many(f, z + disp) - eval_function(f, z)
            slack = df[None, :] - candidates @ disp.T + eps * step
            ok = np.all(slack >= 0.0, axis=1)
            tested += len(candidates)
            accepted = candidates[ok]
            if not len(accepted):
                continue
            cloud.append(accepted)
            tags.extend([r] * len(accepted))
            if r == finest:
                if len(candidates) == 1:
                    singles.append(accepted[0])
                else:
                    fills.append(convex_hull(accepted))

    pts = np.vstack(cloud) if cloud else np.zeros((0, dim))
    tol = oracle_cluster_tolerance(finest)
    clusters = cluster_points(np.array(singles), tol) if singles else np.zeros((0, dim))
    parts = [Polytope(c[None, :]) for c in clusters] + fills
    union = canonical_union(parts) if parts else None
    logger.debug(f"oracle for {f} at {x.tolist()}: {len(pts)} accepted of {tested}, {len(clusters)} clusters")
    return OracleResult(pts, np.array(tags), clusters, union, len(pts), tested)


subdiff_service = SubdifferentialService()
