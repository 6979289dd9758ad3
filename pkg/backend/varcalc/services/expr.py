"""Piecewise-smooth scalar functions in a small s-expression language.

Functions are trees of polynomial operations (``+ - * pow``) and the
piecewise operations ``abs``, ``max`` and ``min``.  Piecewise nodes are
addressed by their path from the root (a tuple of child indices), which is
stable under printing and re-parsing.  Activity, branch and derivative
code treats ``(abs a)`` as ``(max a (- a))`` over its single child.
"""
from dataclasses import dataclass, field
from itertools import product
from typing import Dict, FrozenSet, Iterator, List, Mapping, Optional, Sequence, Tuple, Union
import logging
import math
import re

import numpy as np

from ..core.config import settings
from ..core.exceptions import (
    CombinatorialOverflowError,
    DimensionMismatchError,
    ExprSyntaxError,
    InputError,
    UnknownVariableError,
)

# Configure logging
logger = logging.getLogger(__name__)

NODE_KINDS = ("const", "var", "add", "sub", "mul", "intpow", "abs", "max", "min")
PIECEWISE_KINDS = ("abs", "max", "min")

_OPERATORS = {"+": "add", "-": "sub", "*": "mul", "pow": "intpow", "abs": "abs", "max": "max", "min": "min"}
_SYMBOLS = {kind: op for op, kind in _OPERATORS.items()}
_IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

NodeId = Tuple[int, ...]
Branch = Dict[NodeId, int]


@dataclass(frozen=True)
class VarSpace:
    names: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if not self.names:
            raise InputError("variable space must declare at least one variable")
        if len(set(self.names)) != len(self.names):
            raise InputError(f"duplicate variable names in {list(self.names)}")
        if len(self.names) > settings.MAX_VAR_DIM:
            raise InputError(f"{len(self.names)} variables exceed the limit of {settings.MAX_VAR_DIM}")
        for name in self.names:
            if not _IDENTIFIER.match(name):
                raise InputError(f"invalid variable name '{name}'")

    @property
    def dim(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownVariableError(f"unknown variable '{name}'")

    def concat(self, other: "VarSpace") -> "VarSpace":
        return VarSpace(self.names + other.names)


@dataclass(frozen=True)
class ExprNode:
    kind: str
    children: Tuple["ExprNode", ...] = ()
    payload: Union[float, int, None] = None

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if self.kind not in NODE_KINDS:
            raise InputError(f"unknown node kind '{self.kind}'")
        n = len(self.children)
        if self.kind in ("const", "var") and n:
            raise InputError(f"{self.kind} node takes no children")
        if self.kind == "const" and not math.isfinite(self.payload):
            raise InputError("constants must be finite")
        if self.kind == "intpow":
            if n != 1 or not isinstance(self.payload, int):
                raise InputError("pow takes one expression and an integer exponent")
            if self.payload < 0:
                raise InputError(f"negative intpow exponent {self.payload}")
        if self.kind == "abs" and n != 1:
            raise InputError("abs takes exactly one argument")
        if self.kind in ("max", "min") and n < 2:
            raise InputError(f"{self.kind} takes at least two arguments")
        if self.kind == "sub" and n not in (1, 2):
            raise InputError("- takes one or two arguments")
        if self.kind in ("add", "mul") and n < 1:
            raise InputError(f"{_SYMBOLS[self.kind]} takes at least one argument")


def const(value: float) -> ExprNode:
    return ExprNode("const", (), float(value))


def var(index: int) -> ExprNode:
    return ExprNode("var", (), int(index))


def node(kind: str, *children: ExprNode, payload=None) -> ExprNode:
    return ExprNode(kind, tuple(children), payload)


@dataclass(frozen=True)
class FunctionDef:
    space: VarSpace
    root: ExprNode

    def __post_init__(self):
        for n in _walk(self.root):
            if n.kind == "var" and not 0 <= n.payload < self.space.dim:
                raise UnknownVariableError(f"variable index {n.payload} outside space of dim {self.space.dim}")

    @property
    def dim(self) -> int:
        return self.space.dim

    def __str__(self) -> str:
        return to_text(self)

    def __add__(self, other: "FunctionDef") -> "FunctionDef":
        _same_space(self, other)
        return FunctionDef(self.space, node("add", self.root, other.root))

    def __sub__(self, other: "FunctionDef") -> "FunctionDef":
        _same_space(self, other)
        return FunctionDef(self.space, node("sub", self.root, other.root))

    def __neg__(self) -> "FunctionDef":
        return FunctionDef(self.space, node("sub", self.root))

    def scaled(self, c: float) -> "FunctionDef":
        return FunctionDef(self.space, node("mul", const(c), self.root))

    def embed(self, space: VarSpace, var_map: Sequence[int]) -> "FunctionDef":
        """Re-express over `space`, sending variable i to var_map[i]."""
        if len(var_map) != self.dim:
            raise DimensionMismatchError(f"variable map of length {len(var_map)} for dim {self.dim}")
        return FunctionDef(space, _remap(self.root, var_map))


@dataclass(frozen=True)
class ActivePattern:
    """Active argument indices per piecewise node (abs: 0 = +arg, 1 = -arg)."""

    selections: Mapping[NodeId, FrozenSet[int]] = field(default_factory=dict)

    def is_singleton(self) -> bool:
        return all(len(s) == 1 for s in self.selections.values())

    def key(self) -> Tuple[Tuple[NodeId, Tuple[int, ...]], ...]:
        return tuple(sorted((k, tuple(sorted(v))) for k, v in self.selections.items()))

    def within(self, other: "ActivePattern") -> bool:
        """True if every selection here is a subset of the one in `other`."""
        return all(k in other.selections and v <= other.selections[k] for k, v in self.selections.items())

    def __hash__(self):
        return hash(self.key())

    def __eq__(self, other):
        return isinstance(other, ActivePattern) and self.key() == other.key()

    def describe(self) -> Dict[str, List[int]]:
        return {"/".join(map(str, k)) or "root": sorted(v) for k, v in self.key()}


def _same_space(f: FunctionDef, g: FunctionDef):
    if f.space != g.space:
        raise DimensionMismatchError(f"functions over different spaces {f.space.names} and {g.space.names}")


def _walk(n: ExprNode) -> Iterator[ExprNode]:
    yield n
    for c in n.children:
        yield from _walk(c)


def _remap(n: ExprNode, var_map: Sequence[int]) -> ExprNode:
    if n.kind == "var":
        return var(var_map[n.payload])
    if not n.children:
        return n
    return ExprNode(n.kind, tuple(_remap(c, var_map) for c in n.children), n.payload)


# Parsing

def _skip_whitespace(s: str, i: int) -> int:
    while i < len(s):
        if s[i] == ";":
            while i < len(s) and s[i] != "\n":
                i += 1
            continue
        if not s[i].isspace():
            return i
        i += 1
    return i


def _read_token(s: str, i: int) -> Tuple[str, int]:
    start = i
    while i < len(s) and not s[i].isspace() and s[i] not in "();":
        i += 1
    return s[start:i], i


def _read_atom(s: str, i: int, space: VarSpace) -> Tuple[ExprNode, int]:
    tok, end = _read_token(s, i)
    if _IDENTIFIER.match(tok):
        if tok in _OPERATORS:
            raise ExprSyntaxError(f"operator '{tok}' outside a list", i, "constant or variable")
        if tok not in space.names:
            raise UnknownVariableError(f"unknown variable '{tok}' at offset {i} (declared: {', '.join(space.names)})")
        return var(space.index(tok)), end
    try:
        value = float(tok)
    except ValueError:
        raise ExprSyntaxError(f"invalid token '{tok}'", i, "constant or variable")
    if not math.isfinite(value):
        raise ExprSyntaxError(f"non-finite constant '{tok}'", i)
    return const(value), end


def _read_list(s: str, i: int, space: VarSpace) -> Tuple[ExprNode, int]:
    start = i
    i = _skip_whitespace(s, i + 1)
    if i == len(s):
        raise ExprSyntaxError("unclosed list", len(s), "')'")
    op, j = _read_token(s, i)
    if op not in _OPERATORS:
        raise ExprSyntaxError(f"unknown operator '{op}'", i, "one of + - * pow abs max min")
    kind = _OPERATORS[op]
    i = j
    args = []
    while True:
        i = _skip_whitespace(s, i)
        if i == len(s):
            raise ExprSyntaxError("unclosed list", len(s), "')'")
        if s[i] == ")":
            i += 1
            break
        if kind == "intpow" and len(args) == 1:
            tok, j = _read_token(s, i)
            if not re.fullmatch(r"[+-]?\d+", tok):
                raise ExprSyntaxError(f"pow exponent '{tok}' is not an integer", i, "nonnegative integer")
            if int(tok) < 0:
                raise InputError(f"negative intpow exponent {tok} at offset {i}")
            args.append(int(tok))
            i = j
            continue
        arg, i = _read(s, i, space)
        args.append(arg)
    try:
        if kind == "intpow":
            if len(args) != 2:
                raise InputError("pow takes an expression and an exponent")
            return ExprNode("intpow", (args[0],), args[1]), i
        return ExprNode(kind, tuple(args)), i
    except InputError as e:
        raise ExprSyntaxError(e.detail, start)


def _read(s: str, i: int, space: VarSpace) -> Tuple[ExprNode, int]:
    i = _skip_whitespace(s, i)
    if i == len(s):
        raise ExprSyntaxError("unexpected end of input", i, "expression")
    if s[i] == "(":
        return _read_list(s, i, space)
    if s[i] == ")":
        raise ExprSyntaxError("unbalanced ')'", i, "expression")
    return _read_atom(s, i, space)


def parse_function(text: str, space: VarSpace) -> FunctionDef:
    """Parse `text` into a FunctionDef over `space`.

    Raises:
        ExprSyntaxError: malformed input, with the offending offset.
        UnknownVariableError: an identifier not declared in `space`.
        InputError: a negative pow exponent.
    """
    root, i = _read(text, 0, space)
    i = _skip_whitespace(text, i)
    if i != len(text):
        raise ExprSyntaxError("unexpected trailing input", i, "end of input")
    return FunctionDef(space, root)


def _format_const(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _print(n: ExprNode, space: VarSpace) -> str:
    if n.kind == "const":
        return _format_const(n.payload)
    if n.kind == "var":
        return space.names[n.payload]
    if n.kind == "intpow":
        return f"(pow {_print(n.children[0], space)} {n.payload})"
    return "(" + " ".join([_SYMBOLS[n.kind]] + [_print(c, space) for c in n.children]) + ")"


def to_text(f: FunctionDef) -> str:
    """Canonical printer; parse_function(to_text(f)) == f."""
    return _print(f.root, f.space)


# Evaluation

def as_point(coords, dim: int) -> np.ndarray:
    p = np.asarray(coords, dtype=float).reshape(-1)
    if p.shape[0] != dim:
        raise DimensionMismatchError(f"point of length {p.shape[0]} in a space of dim {dim}")
    if not np.all(np.isfinite(p)):
        raise InputError("point coordinates must be finite")
    return p


def _eval(n: ExprNode, X: np.ndarray) -> np.ndarray:
    k = n.kind
    if k == "const":
        return np.full(X.shape[0], n.payload)
    if k == "var":
        return X[:, n.payload]
    vals = [_eval(c, X) for c in n.children]
    if k == "add":
        return np.sum(vals, axis=0)
    if k == "sub":
        return -vals[0] if len(vals) == 1 else vals[0] - vals[1]
    if k == "mul":
        return np.prod(vals, axis=0)
    if k == "intpow":
        return vals[0] ** n.payload
    if k == "abs":
        return np.abs(vals[0])
    if k == "max":
        return np.max(vals, axis=0)
    return np.min(vals, axis=0)


def evaluate_many(f: FunctionDef, points) -> np.ndarray:
    """Evaluate `f` at every row of `points` (shape (N, dim))."""
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or X.shape[1] != f.dim:
        raise DimensionMismatchError(f"expected points of shape (N, {f.dim}), got {X.shape}")
    return _eval(f.root, X)


def eval_function(f: FunctionDef, p) -> float:
    x = as_point(p, f.dim)
    return float(_eval(f.root, x[None, :])[0])


def _selectable(n: ExprNode) -> List[Tuple[int, float]]:
    """(child index, sign) per selectable argument; abs(a) is max(a, -a)."""
    if n.kind == "abs":
        return [(0, 1.0), (0, -1.0)]
    return [(i, 1.0) for i in range(len(n.children))]


def _pieces(n: ExprNode, vals: Sequence[float]) -> List[float]:
    return [sign * vals[i] for i, sign in _selectable(n)]


def _active(values: Sequence[float], kind: str, tau: float) -> FrozenSet[int]:
    if kind == "min":
        low = min(values)
        return frozenset(i for i, v in enumerate(values) if v <= low + tau)
    top = max(values)
    return frozenset(i for i, v in enumerate(values) if v >= top - tau)


def _pattern(n: ExprNode, path: NodeId, x: np.ndarray, tau: float, out: Dict[NodeId, FrozenSet[int]]) -> float:
    k = n.kind
    if k == "const":
        return n.payload
    if k == "var":
        return float(x[n.payload])
    vals = [_pattern(c, path + (i,), x, tau, out) for i, c in enumerate(n.children)]
    if k == "add":
        return float(sum(vals))
    if k == "sub":
        return -vals[0] if len(vals) == 1 else vals[0] - vals[1]
    if k == "mul":
        return float(np.prod(vals))
    if k == "intpow":
        return vals[0] ** n.payload
    pieces = _pieces(n, vals)
    out[path] = _active(pieces, k, tau)
    return min(pieces) if k == "min" else max(pieces)


def active_pattern(f: FunctionDef, p, tau_act: Optional[float] = None) -> ActivePattern:
    tau = settings.TAU_ACT if tau_act is None else tau_act
    if tau <= 0:
        raise InputError("activity tolerance must be positive")
    x = as_point(p, f.dim)
    out: Dict[NodeId, FrozenSet[int]] = {}
    _pattern(f.root, (), x, tau, out)
    return ActivePattern(out)


# Differentiation

def _grad(n: ExprNode, path: NodeId, x: np.ndarray, branch: Mapping[NodeId, int]) -> Tuple[float, np.ndarray]:
    k = n.kind
    dim = x.shape[0]
    if k == "const":
        return n.payload, np.zeros(dim)
    if k == "var":
        g = np.zeros(dim)
        g[n.payload] = 1.0
        return float(x[n.payload]), g
    if k in PIECEWISE_KINDS:
        choice = branch.get(path)
        pieces = _selectable(n)
        if choice is None or not 0 <= choice < len(pieces):
            raise InputError(f"branch has no valid selection for {k} node at path {list(path)}")
        i, sign = pieces[choice]
        v, g = _grad(n.children[i], path + (i,), x, branch)
        return sign * v, sign * g
    parts = [_grad(c, path + (i,), x, branch) for i, c in enumerate(n.children)]
    if k == "add":
        return sum(v for v, _ in parts), np.sum([g for _, g in parts], axis=0)
    if k == "sub":
        if len(parts) == 1:
            return -parts[0][0], -parts[0][1]
        return parts[0][0] - parts[1][0], parts[0][1] - parts[1][1]
    if k == "mul":
        vals = [v for v, _ in parts]
        g = np.zeros(dim)
        for i, (_, gi) in enumerate(parts):
            g += np.prod(vals[:i] + vals[i + 1:]) * gi
        return float(np.prod(vals)), g
    # intpow
    v, g = parts[0]
    e = n.payload
    if e == 0:
        return 1.0, np.zeros(dim)
    return v ** e, e * v ** (e - 1) * g


def branch_gradient(f: FunctionDef, p, branch: Mapping[NodeId, int]) -> np.ndarray:
    """Gradient of the polynomial obtained by fixing `branch` at every reached piecewise node."""
    x = as_point(p, f.dim)
    return _grad(f.root, (), x, branch)[1]


def _dir(n: ExprNode, path: NodeId, x: np.ndarray, d: np.ndarray, tau: float,
         pattern: Optional[Mapping[NodeId, FrozenSet[int]]]) -> Tuple[float, float]:
    k = n.kind
    if k == "const":
        return n.payload, 0.0
    if k == "var":
        return float(x[n.payload]), float(d[n.payload])
    parts = [_dir(c, path + (i,), x, d, tau, pattern) for i, c in enumerate(n.children)]
    vals = [v for v, _ in parts]
    ders = [t for _, t in parts]
    if k == "add":
        return float(sum(vals)), float(sum(ders))
    if k == "sub":
        if len(parts) == 1:
            return -vals[0], -ders[0]
        return vals[0] - vals[1], ders[0] - ders[1]
    if k == "mul":
        der = sum(np.prod(vals[:i] + vals[i + 1:]) * ders[i] for i in range(len(vals)))
        return float(np.prod(vals)), float(der)
    if k == "intpow":
        e = n.payload
        if e == 0:
            return 1.0, 0.0
        return vals[0] ** e, e * vals[0] ** (e - 1) * ders[0]
    piece_vals = _pieces(n, vals)
    piece_ders = _pieces(n, ders)
    sel = pattern[path] if pattern is not None and path in pattern else _active(piece_vals, k, tau)
    pick = min if k == "min" else max
    return pick(piece_vals), pick(piece_ders[i] for i in sel)


def directional_derivative(f: FunctionDef, p, d, pattern: Optional[ActivePattern] = None,
                           tau_act: Optional[float] = None) -> float:
    """One-sided derivative f'(p; d), exact for the expression class.

    With `pattern`, piecewise nodes only consider the listed arguments, which
    gives the derivative of the function restricted to that pattern's pieces.
    """
    tau = settings.TAU_ACT if tau_act is None else tau_act
    x = as_point(p, f.dim)
    direction = as_point(d, f.dim)
    sel = pattern.selections if pattern is not None else None
    return _dir(f.root, (), x, direction, tau, sel)[1]


def _branches(n: ExprNode, path: NodeId, sel: Mapping[NodeId, FrozenSet[int]], cap: int) -> List[Branch]:
    k = n.kind
    if k in ("const", "var"):
        return [{}]
    if k in PIECEWISE_KINDS:
        out = []
        pieces = _selectable(n)
        for c in sorted(sel[path]):
            i = pieces[c][0]
            out.extend(b | {path: c} for b in _branches(n.children[i], path + (i,), sel, cap))
    else:
        out = [{}]
        for i, c in enumerate(n.children):
            sub = _branches(c, path + (i,), sel, cap)
            out = [a | b for a, b in product(out, sub)]
            if len(out) > cap:
                break
    if len(out) > cap:
        raise CombinatorialOverflowError(f"more than {cap} branch combinations")
    return out


def iter_branches(f: FunctionDef, pattern: ActivePattern, cap: Optional[int] = None) -> List[Branch]:
    """All branch selections reachable under `pattern`, in a fixed order."""
    return _branches(f.root, (), pattern.selections, settings.BRANCH_CAP if cap is None else cap)


def active_gradients(f: FunctionDef, p, pattern: Optional[ActivePattern] = None) -> np.ndarray:
    """Distinct gradients of the branches reachable under `pattern` (default: active at p)."""
    x = as_point(p, f.dim)
    pattern = pattern or active_pattern(f, x)
    grads = [branch_gradient(f, x, b) for b in iter_branches(f, pattern)]
    return unique_rows(np.array(grads), settings.TOL_GEOM)


def unique_rows(a: np.ndarray, tol: float) -> np.ndarray:
    """Rows of `a` with near-duplicates removed, in lexicographic order."""
    if len(a) == 0:
        return a
    order = np.lexsort(a.T[::-1])
    kept: List[np.ndarray] = []
    for row in a[order]:
        if not any(np.max(np.abs(row - k)) <= tol for k in kept):
            kept.append(row)
    return np.array(kept)


# Curvature

def _curvature(n: ExprNode) -> str:
    k = n.kind
    if k in ("const", "var"):
        return "affine"
    if k == "mul":
        consts = [c for c in n.children if c.kind == "const"]
        rest = [c for c in n.children if c.kind != "const"]
        if not rest:
            return "affine"
        if len(rest) == 1:
            scale = float(np.prod([c.payload for c in consts])) if consts else 1.0
            return _scale_curvature(_curvature(rest[0]), scale)
        if len(rest) == 2 and rest[0] == rest[1] and _curvature(rest[0]) == "affine":
            scale = float(np.prod([c.payload for c in consts])) if consts else 1.0
            return _scale_curvature("convex", scale)
        return "unknown"
    inner = [_curvature(c) for c in n.children]
    if k == "sub":
        if len(inner) == 1:
            return _scale_curvature(inner[0], -1.0)
        return _sum_curvature([inner[0], _scale_curvature(inner[1], -1.0)])
    if k == "add":
        return _sum_curvature(inner)
    if k == "intpow":
        if n.payload == 0:
            return "affine"
        if n.payload == 1:
            return inner[0]
        return "convex" if n.payload % 2 == 0 and inner[0] == "affine" else "unknown"
    if k == "abs":
        return "convex" if inner[0] == "affine" else "unknown"
    if k == "max":
        return "convex" if all(c in ("affine", "convex") for c in inner) else "unknown"
    return "concave" if all(c in ("affine", "concave") for c in inner) else "unknown"


def _scale_curvature(c: str, scale: float) -> str:
    if scale == 0:
        return "affine"
    if scale > 0 or c in ("affine", "unknown"):
        return c
    return "concave" if c == "convex" else "convex"


def _sum_curvature(parts: Sequence[str]) -> str:
    if all(c == "affine" for c in parts):
        return "affine"
    if all(c in ("affine", "convex") for c in parts):
        return "convex"
    if all(c in ("affine", "concave") for c in parts):
        return "concave"
    return "unknown"


def is_syntactically_convex(f: FunctionDef) -> bool:
    """Conservative convexity check by curvature propagation (never a false positive)."""
    return _curvature(f.root) in ("affine", "convex")


def curvature(f: FunctionDef) -> str:
    """One of "affine", "convex", "concave" or "unknown"."""
    return _curvature(f.root)
