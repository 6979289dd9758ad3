"""Small-dimension convex geometry in vertex representation.

Polytopes, finite unions of polytopes, finitely generated cones and
polyhedra (hull of points plus a cone).  Membership questions are answered
with the phase-1 simplex in ``simplex``; hulls use qhull when the point set
is full-dimensional.
"""
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from scipy.optimize import nnls
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

from ..core.config import settings
from ..core.exceptions import CombinatorialOverflowError, DimensionMismatchError, InputError, RefusalError
from .expr import unique_rows
from .simplex import Feasible, LPBuilder, lp_feasible, require

logger = logging.getLogger(__name__)

MAX_SLICE_COLUMNS = 24


def _as_rows(points, dim: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if dim is None or arr.shape[0] == dim else arr.reshape(-1, dim)
    if dim is not None and arr.size and arr.shape[1] != dim:
        raise DimensionMismatchError(f"expected vectors of length {dim}, got {arr.shape[1]}")
    return arr


@dataclass(frozen=True, eq=False)
class Polytope:
    vertices: np.ndarray

    def __post_init__(self):
        v = _as_rows(self.vertices)
        if v.size == 0:
            raise InputError("a polytope needs at least one vertex")
        if not np.all(np.isfinite(v)):
            raise InputError("polytope vertices must be finite")
        object.__setattr__(self, "vertices", v)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def is_singleton(self) -> bool:
        return self.vertices.shape[0] == 1

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def support(self, directions: np.ndarray) -> np.ndarray:
        return np.max(self.vertices @ np.atleast_2d(directions).T, axis=0)

    def translated(self, v) -> "Polytope":
        return Polytope(self.vertices + np.asarray(v, dtype=float))

    def scaled(self, c: float) -> "Polytope":
        return Polytope(self.vertices * c)

    def contains_point(self, x, tol: Optional[float] = None) -> bool:
        tol = settings.TOL_GEOM if tol is None else tol
        x = np.asarray(x, dtype=float).reshape(-1)
        V = self.vertices
        if V.shape[0] == 1:
            return bool(np.max(np.abs(V[0] - x)) <= tol)
        if self.dim == 1:
            return bool(V.min() - tol <= x[0] <= V.max() + tol)
        return _in_hull(x, V, tol)

    def contains(self, other: "Polytope", tol: Optional[float] = None) -> bool:
        return all(self.contains_point(v, tol) for v in other.vertices)

    def equals(self, other: "Polytope", tol: Optional[float] = None) -> bool:
        tol = settings.TOL_GEOM if tol is None else tol
        a, b = self.canonical().vertices, other.canonical().vertices
        return a.shape == b.shape and bool(np.max(np.abs(a - b), initial=0.0) <= tol)

    def canonical(self) -> "Polytope":
        return convex_hull(self.vertices)

    def halfspaces(self) -> Tuple[np.ndarray, np.ndarray]:
        """(A, b) with the polytope equal to {x : A x <= b} (within TOL_GEOM)."""
        tol = settings.TOL_GEOM
        center, U = _affine_frame(self.vertices, tol)
        n, r = self.dim, U.shape[0]
        if r < n:
            _, _, vt = np.linalg.svd(np.vstack([U, np.zeros((1, n))]) if r else np.zeros((1, n)))
            perp = vt[r:]
            rows = [perp, -perp]
            rhs = [perp @ center, -(perp @ center)]
        else:
            rows, rhs = [], []
        if r == 1:
            t = (self.vertices - center) @ U.T
            rows += [U, -U]
            rhs += [np.array([t.max()]) + U @ center, np.array([-t.min()]) - U @ center]
        elif r >= 2:
            eq = ConvexHull((self.vertices - center) @ U.T).equations
            A_local, b_local = eq[:, :-1], -eq[:, -1]
            A = A_local @ U
            rows.append(A)
            rhs.append(b_local + A @ center)
        return np.vstack(rows), np.concatenate(rhs)

    def to_list(self) -> List[List[float]]:
        return self.vertices.tolist()

    def __repr__(self):
        return f"Polytope({self.to_list()})"


@dataclass(frozen=True, eq=False)
class PolytopeUnion:
    parts: Tuple[Polytope, ...]

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise InputError("a polytope union needs at least one part")
        if len({p.dim for p in parts}) != 1:
            raise DimensionMismatchError("union parts differ in dimension")
        object.__setattr__(self, "parts", parts)

    @property
    def dim(self) -> int:
        return self.parts[0].dim

    def all_vertices(self) -> np.ndarray:
        return np.vstack([p.vertices for p in self.parts])

    def hull(self) -> Polytope:
        return convex_hull(self.all_vertices())

    def negated(self) -> "PolytopeUnion":
        return PolytopeUnion(tuple(p.scaled(-1.0) for p in self.parts))

    def contains_point(self, x, tol: Optional[float] = None) -> bool:
        return any(p.contains_point(x, tol) for p in self.parts)

    def equals(self, other: "PolytopeUnion", tol: Optional[float] = None) -> bool:
        a, b = canonical_union(self.parts).parts, canonical_union(other.parts).parts
        return len(a) == len(b) and all(any(p.equals(q, tol) for q in b) for p in a)

    def to_list(self) -> List[List[List[float]]]:
        return [p.to_list() for p in self.parts]

    def __repr__(self):
        return f"PolytopeUnion({self.to_list()})"


@dataclass(frozen=True, eq=False)
class ConeSpec:
    """Cone {sum l_g g + L : l_g >= 0} with L the span of `lineality`."""

    dim: int
    generators: np.ndarray = None
    lineality: np.ndarray = None

    def __post_init__(self):
        g = np.zeros((0, self.dim)) if self.generators is None else _as_rows(self.generators, self.dim)
        l = np.zeros((0, self.dim)) if self.lineality is None else _as_rows(self.lineality, self.dim)
        g = g.reshape(-1, self.dim)
        l = l.reshape(-1, self.dim)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(l))):
            raise InputError("cone generators must be finite")
        object.__setattr__(self, "generators", g)
        object.__setattr__(self, "lineality", l)

    @classmethod
    def zero(cls, dim: int) -> "ConeSpec":
        return cls(dim)

    @classmethod
    def full(cls, dim: int) -> "ConeSpec":
        return cls(dim, lineality=np.eye(dim))

    def signed_generators(self) -> np.ndarray:
        """Generators with the lineality space written as +/- pairs."""
        return np.vstack([self.generators, self.lineality, -self.lineality])

    def is_trivial(self, tol: Optional[float] = None) -> bool:
        tol = settings.TOL_GEOM if tol is None else tol
        return bool(np.all(np.abs(self.signed_generators()) <= tol))

    def canonical(self) -> "ConeSpec":
        tol = settings.TOL_GEOM
        g = self.generators
        norms = np.linalg.norm(g, axis=1)
        g = g[norms > tol] / norms[norms > tol, None] if len(g) else g
        g = unique_rows(g, tol) if len(g) else g
        l = self.lineality
        if len(l):
            _, s, vt = np.linalg.svd(l, full_matrices=False)
            l = vt[s > tol]
        return ConeSpec(self.dim, g.reshape(-1, self.dim), l.reshape(-1, self.dim))

    def contains(self, x, tol: Optional[float] = None) -> bool:
        return self.distance(x) <= (settings.TOL_GEOM if tol is None else tol) * max(1.0, float(np.linalg.norm(x)))

    def distance(self, x) -> float:
        """Euclidean distance from `x` to the cone (nonnegative least squares)."""
        x = np.asarray(x, dtype=float).reshape(-1)
        G = self.signed_generators()
        if len(G) == 0:
            return float(np.linalg.norm(x))
        _, residual = nnls(G.T, x)
        return float(residual)

    def to_dict(self) -> Dict[str, List[List[float]]]:
        return {"generators": self.generators.tolist(), "lineality": self.lineality.tolist()}

    def __repr__(self):
        return f"ConeSpec(generators={self.generators.tolist()}, lineality={self.lineality.tolist()})"


@dataclass(frozen=True, eq=False)
class Polyhedron:
    """Convex hull of `base` plus the recession cone `cone`."""

    base: Polytope
    cone: ConeSpec

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def is_bounded(self) -> bool:
        return self.cone.is_trivial()

    @classmethod
    def from_polytope(cls, p: Polytope) -> "Polyhedron":
        return cls(p, ConeSpec.zero(p.dim))

    @classmethod
    def from_cone(cls, c: ConeSpec) -> "Polyhedron":
        return cls(Polytope(np.zeros((1, c.dim))), c)

    def translated(self, v) -> "Polyhedron":
        return Polyhedron(self.base.translated(v), self.cone)

    def is_zero(self, tol: Optional[float] = None) -> bool:
        tol = settings.TOL_GEOM if tol is None else tol
        return self.is_bounded and bool(np.all(np.abs(self.base.vertices) <= tol))

    def contains_point(self, x, tol: Optional[float] = None) -> bool:
        if self.is_bounded:
            return self.base.contains_point(x, tol)
        return isinstance(minkowski_membership(x, self.base, cones=[self.cone], tol=tol), Membership)

    def to_dict(self) -> Dict[str, object]:
        return {"vertices": self.base.to_list(), **{f"cone_{k}": v for k, v in self.cone.to_dict().items()}}

    def __repr__(self):
        return f"Polyhedron(vertices={self.base.to_list()}, cone={self.cone!r})"


def _in_hull(x: np.ndarray, V: np.ndarray, tol: float) -> bool:
    """LP test: is x within `tol` (per coordinate) of conv(V)?"""
    b = LPBuilder()
    b.add_block("w", V.shape[0])
    b.add_block("e", V.shape[1], lower=-tol, upper=tol)
    b.add_eq({"w": V.T, "e": np.eye(V.shape[1])}, x)
    b.add_eq({"w": np.ones((1, V.shape[0]))}, [1.0])
    return isinstance(require(lp_feasible(b.build()), "hull membership"), Feasible)


def convex_hull(points) -> Polytope:
    """Canonical polytope of the extreme points of `points` (lexicographic order)."""
    P = np.asarray(points, dtype=float)
    if P.size == 0:
        raise InputError("convex hull of an empty point set")
    P = P.reshape(P.shape[0], -1) if P.ndim == 2 else P.reshape(1, -1)
    dim = P.shape[1]
    if dim > settings.MAX_HULL_DIM:
        raise RefusalError(f"convex hulls are limited to dimension {settings.MAX_HULL_DIM}, got {dim}")
    tol = settings.TOL_GEOM
    P = unique_rows(P, tol)
    if P.shape[0] == 1:
        return Polytope(P)
    if dim == 1:
        return Polytope(unique_rows(np.array([[P.min()], [P.max()]]), tol))
    candidates = P
    if P.shape[0] > dim:
        try:
            candidates = P[np.sort(ConvexHull(P).vertices)]
        except (QhullError, ValueError):
            # Degenerate (lower-dimensional) sets fall through to the LP pruning below
            candidates = P
    keep = list(range(candidates.shape[0]))
    for i in range(candidates.shape[0]):
        others = [j for j in keep if j != i]
        if others and _in_hull(candidates[i], candidates[others], tol):
            keep.remove(i)
    V = candidates[keep]
    return Polytope(V[np.lexsort(V.T[::-1])])


def canonical_union(parts: Iterable[Polytope]) -> PolytopeUnion:
    """Canonicalize parts and drop those contained in another part."""
    canon = [p.canonical() for p in parts]
    canon.sort(key=lambda p: (-p.vertices.shape[0], tuple(p.vertices.ravel())))
    kept: List[Polytope] = []
    for p in canon:
        if not any(q.contains(p) for q in kept):
            kept = [q for q in kept if not p.contains(q)]
            kept.append(p)
    kept.sort(key=lambda p: tuple(p.vertices[0]) + (p.vertices.shape[0],))
    return PolytopeUnion(tuple(kept))


def minkowski_sum(polytopes: Sequence[Polytope]) -> Polytope:
    verts = polytopes[0].vertices
    for p in polytopes[1:]:
        verts = (verts[:, None, :] + p.vertices[None, :, :]).reshape(-1, p.dim)
        verts = convex_hull(verts).vertices
    return convex_hull(verts)


@dataclass
class Membership:
    weights: Dict[str, np.ndarray]
    scales: List[float]
    residual: float
    at_cap: bool = False


@dataclass
class NotMember:
    margin: float


def minkowski_membership(target, base: Optional[Polytope], scaled_terms: Sequence[Polytope] = (),
                         fixed_terms: Sequence[Tuple[float, Polytope]] = (),
                         cones: Sequence[ConeSpec] = (), tol: Optional[float] = None) -> Union[Membership, NotMember]:
    """Decide target ∈ base + Σ λ_i P_i + Σ c_j Q_j + Σ K_l with λ_i >= 0 free.

    Each scaled term carries nonnegative vertex weights whose sum is its
    implied scale, so the whole question is one LP.  Cone coefficients are
    capped at R_CONE; a solution touching the cap is flagged.
    """
    target = np.asarray(target, dtype=float).reshape(-1)
    dim = target.shape[0]
    for p in list(scaled_terms) + [q for _, q in fixed_terms] + ([base] if base is not None else []):
        if p.dim != dim:
            raise DimensionMismatchError(f"term of dim {p.dim} against target of dim {dim}")
    for c in cones:
        if c.dim != dim:
            raise DimensionMismatchError(f"cone of dim {c.dim} against target of dim {dim}")

    b = LPBuilder()
    contributions: Dict[str, np.ndarray] = {}
    if base is not None:
        b.add_block("base", base.vertices.shape[0])
        contributions["base"] = base.vertices.T
        b.add_eq({"base": np.ones((1, base.vertices.shape[0]))}, [1.0])
    for i, p in enumerate(scaled_terms):
        b.add_block(f"scaled{i}", p.vertices.shape[0])
        contributions[f"scaled{i}"] = p.vertices.T
    for i, (c, q) in enumerate(fixed_terms):
        b.add_block(f"fixed{i}", q.vertices.shape[0])
        contributions[f"fixed{i}"] = c * q.vertices.T
        b.add_eq({f"fixed{i}": np.ones((1, q.vertices.shape[0]))}, [1.0])
    caps: Dict[str, np.ndarray] = {}
    for i, cone in enumerate(cones):
        G = cone.generators
        if len(G):
            norms = np.maximum(np.linalg.norm(G, axis=1), 1e-300)
            b.add_block(f"cone{i}", len(G))
            caps[f"cone{i}"] = settings.R_CONE / norms
            b.set_upper(f"cone{i}", caps[f"cone{i}"])
            contributions[f"cone{i}"] = G.T
        L = cone.lineality
        if len(L):
            b.add_block(f"lin{i}", len(L), lower=-settings.R_CONE, upper=settings.R_CONE)
            contributions[f"lin{i}"] = L.T
    if tol:
        b.add_block("slack", dim, lower=-tol, upper=tol)
        contributions["slack"] = np.eye(dim)
    if not contributions:
        residual = float(np.max(np.abs(target)))
        return Membership({}, [], residual) if residual <= settings.TOL_LP else NotMember(residual)
    b.add_eq(contributions, target)
    outcome = require(lp_feasible(b.build()), "Minkowski membership")
    if not isinstance(outcome, Feasible):
        return NotMember(outcome.margin)
    x = outcome.assignment
    weights = {name: b.read(x, name) for name in b.blocks}
    scales = [float(weights[f"scaled{i}"].sum()) for i in range(len(scaled_terms))]
    at_cap = any(np.any(weights[name] >= cap * (1 - 1e-9)) for name, cap in caps.items())
    if at_cap:
        logger.warning("cone coefficient reached the R_CONE cap in a membership LP")
    return Membership(weights, scales, outcome.residual, at_cap)


def unit_directions(dim: int, n: Optional[int] = None) -> np.ndarray:
    """Deterministic unit directions: +/- axes first, then an even or seeded spread."""
    n = settings.HAUSDORFF_DIRS if n is None else n
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        k = max(n, 4)
        angles = 2 * np.pi * np.arange(k) / k
        return np.column_stack([np.cos(angles), np.sin(angles)])
    axes = np.vstack([np.eye(dim), -np.eye(dim)])
    extra = max(n - len(axes), 0)
    rng = np.random.default_rng(0)
    d = rng.normal(size=(extra, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.vstack([axes, d])


def _sample_points(p: Polytope) -> np.ndarray:
    V = p.vertices
    pts = [V, p.centroid()[None, :]]
    k = V.shape[0]
    if k <= 12:
        pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    else:
        pairs = [(i, (i + 1) % k) for i in range(k)]
    if pairs:
        pts.append(np.array([(V[i] + V[j]) / 2 for i, j in pairs]))
    return np.vstack(pts)


def _as_union(a) -> PolytopeUnion:
    if isinstance(a, Polytope):
        return PolytopeUnion((a,))
    return a


def _directed(a: PolytopeUnion, b: PolytopeUnion, dirs: np.ndarray) -> float:
    sigma = np.array([q.support(dirs) for q in b.parts])  # (parts, dirs)
    worst = 0.0
    for p in a.parts:
        pts = _sample_points(p)
        proj = pts @ dirs.T  # (points, dirs)
        gaps = np.max(proj[:, None, :] - sigma[None, :, :], axis=2)  # (points, parts)
        worst = max(worst, float(np.max(np.min(np.maximum(gaps, 0.0), axis=1))))
    return worst


def hausdorff_distance(a, b, n_dirs: Optional[int] = None) -> float:
    """Hausdorff distance between two polytope unions.

    Exact (up to the direction set) for single convex parts through support
    functions; for unions, point-to-set distances from vertices, centroids
    and edge midpoints of each part.
    """
    a, b = _as_union(a), _as_union(b)
    if a.dim != b.dim:
        raise DimensionMismatchError(f"Hausdorff distance between dims {a.dim} and {b.dim}")
    n_dirs = settings.HAUSDORFF_DIRS if n_dirs is None else n_dirs
    if n_dirs < 2 * a.dim:
        raise InputError(f"need at least {2 * a.dim} directions, got {n_dirs}")
    dirs = unit_directions(a.dim, n_dirs)
    if len(a.parts) == 1 and len(b.parts) == 1:
        return float(np.max(np.abs(a.parts[0].support(dirs) - b.parts[0].support(dirs))))
    return max(_directed(a, b, dirs), _directed(b, a, dirs))


# Clipping and slicing

def _affine_frame(V: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray]:
    center = V.mean(axis=0)
    if V.shape[0] == 1:
        return center, np.zeros((0, V.shape[1]))
    _, s, vt = np.linalg.svd(V - center, full_matrices=False)
    return center, vt[s > tol]


def _clip_interval(t: np.ndarray, A: np.ndarray, c: np.ndarray, tol: float) -> Optional[np.ndarray]:
    lo, hi = float(t.min()), float(t.max())
    for a, ci in zip(A[:, 0], c):
        if a > 1e-14:
            hi = min(hi, ci / a)
        elif a < -1e-14:
            lo = max(lo, ci / a)
        elif ci < -tol:
            return None
    if lo > hi + tol:
        return None
    if lo > hi:
        lo = hi = (lo + hi) / 2
    return np.array([[lo], [hi]])


def _clip_polygon(T: np.ndarray, A: np.ndarray, c: np.ndarray, tol: float) -> Optional[np.ndarray]:
    hull = ConvexHull(T)
    poly = [T[i] for i in hull.vertices]  # counterclockwise
    for a, ci in zip(A, c):
        if not poly:
            return None
        out = []
        for i in range(len(poly)):
            p, q = poly[i], poly[(i + 1) % len(poly)]
            fp, fq = a @ p - ci, a @ q - ci
            if fp <= tol:
                out.append(p)
            if (fp <= tol) != (fq <= tol) and abs(fq - fp) > 1e-300:
                out.append(p + (fp / (fp - fq)) * (q - p))
        poly = out
    return np.array(poly) if poly else None


def _interior_point(A: np.ndarray, c: np.ndarray) -> Optional[np.ndarray]:
    norms = np.linalg.norm(A, axis=1)
    for margin in (1e-1, 1e-2, 1e-3, 1e-4, 1e-6):
        b = LPBuilder()
        b.add_block("t", A.shape[1], lower=-np.inf)
        b.add_ub({"t": A}, c - margin * norms)
        out = lp_feasible(b.build())
        if isinstance(out, Feasible):
            return out.assignment
    return None


def clip_polytope(poly: Polytope, normals, offsets, tol: Optional[float] = None) -> Optional[Polytope]:
    """poly ∩ {v : normals @ v <= offsets}, or None when empty.

    Works in the affine hull of `poly`: exact interval and polygon clipping in
    dimensions 1 and 2, qhull halfspace intersection above.
    """
    tol = settings.TOL_GEOM if tol is None else tol
    A = np.atleast_2d(np.asarray(normals, dtype=float))
    c = np.asarray(offsets, dtype=float).reshape(-1)
    if A.size == 0:
        return poly
    center, U = _affine_frame(poly.vertices, tol)
    r = U.shape[0]
    c_local = c - A @ center
    if r == 0:
        return poly if np.all(c_local >= -tol) else None
    A_local = A @ U.T
    T = (poly.vertices - center) @ U.T
    if r == 1:
        pts = _clip_interval(T, A_local, c_local, tol)
    elif r == 2:
        pts = _clip_polygon(T, A_local, c_local, tol)
    else:
        hull = ConvexHull(T)
        halfspaces = np.vstack([hull.equations, np.hstack([A_local, -c_local[:, None]])])
        inner = _interior_point(halfspaces[:, :-1], -halfspaces[:, -1])
        if inner is None:
            logger.warning("clipped polytope is lower dimensional; keeping surviving vertices only")
            ok = np.all(T @ A_local.T <= c_local + tol, axis=1)
            pts = T[ok] if np.any(ok) else None
        else:
            pts = HalfspaceIntersection(halfspaces, inner).intersections
    if pts is None or len(pts) == 0:
        return None
    return convex_hull(center + pts @ U)


def _null_vector(M: np.ndarray, tol: float) -> Optional[np.ndarray]:
    _, s, vt = np.linalg.svd(M)
    rank = int(np.sum(s > tol))
    if M.shape[1] - rank != 1:
        return None
    return vt[-1]


def slice_polyhedron(points_x, points_y, rays_x, rays_y, target_y) -> Optional[Polyhedron]:
    """V-representation of {Σβ p_x + Σλ r_x : β ∈ simplex, λ >= 0, Σβ p_y + Σλ r_y = target_y}.

    Vertices come from basic feasible solutions, recession directions from
    extreme rays of {λ >= 0 : Σλ r_y = 0}.  Returns None when the slice is empty.
    """
    PX, PY = np.atleast_2d(points_x), np.atleast_2d(points_y)
    RX = np.asarray(rays_x, dtype=float).reshape(-1, PX.shape[1])
    RY = np.asarray(rays_y, dtype=float).reshape(-1, PY.shape[1])
    target = np.asarray(target_y, dtype=float).reshape(-1)
    n_p, n_r = PX.shape[0], RX.shape[0]
    if n_p + n_r > MAX_SLICE_COLUMNS:
        raise CombinatorialOverflowError(f"slice with {n_p + n_r} columns exceeds {MAX_SLICE_COLUMNS}")
    tol = settings.TOL_GEOM
    M = np.vstack([np.concatenate([np.ones(n_p), np.zeros(n_r)]), np.hstack([PY.T, RY.T])])
    rhs = np.concatenate([[1.0], target])
    rank = np.linalg.matrix_rank(M, tol=1e-10)
    images = []
    for size in range(1, rank + 1):
        for S in combinations(range(n_p + n_r), size):
            MS = M[:, S]
            if np.linalg.matrix_rank(MS, tol=1e-10) < size:
                continue
            z, *_ = np.linalg.lstsq(MS, rhs, rcond=None)
            if np.max(np.abs(MS @ z - rhs)) > 1e-9 or np.min(z) < -1e-12:
                continue
            full = np.zeros(n_p + n_r)
            full[list(S)] = np.maximum(z, 0.0)
            images.append(PX.T @ full[:n_p] + RX.T @ full[n_p:])
    if not images:
        return None
    rays = []
    if n_r:
        ry_rank = np.linalg.matrix_rank(RY.T, tol=1e-10) if RY.size else 0
        for size in range(1, min(ry_rank + 1, n_r) + 1):
            for S in combinations(range(n_r), size):
                v = _null_vector(RY[list(S)].T, 1e-10) if RY.shape[1] else (np.ones(1) if size == 1 else None)
                if v is None:
                    continue
                if np.all(v >= -1e-12) or np.all(v <= 1e-12):
                    v = np.abs(v)
                    if np.min(v) <= 1e-12:
                        continue
                    d = RX[list(S)].T @ v
                    if np.linalg.norm(d) > tol:
                        rays.append(d / np.linalg.norm(d))
    cone = ConeSpec(PX.shape[1], np.array(rays).reshape(-1, PX.shape[1])).canonical()
    return Polyhedron(convex_hull(np.array(images)), cone)
