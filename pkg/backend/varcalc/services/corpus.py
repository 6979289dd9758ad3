"""Shipped test corpus: twenty piecewise-smooth functions and five graph sets with known answers."""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .convgeom import Polytope, PolytopeUnion
from .expr import FunctionDef, VarSpace, parse_function
from .normals import SetSpec

X = VarSpace(("x",))
XY = VarSpace(("x", "y"))


@dataclass(frozen=True)
class CorpusEntry:
    name: str
    text: str
    space: VarSpace
    point: Tuple[float, ...]
    convex: bool
    basic: Tuple[Tuple[Tuple[float, ...], ...], ...]
    regular: Optional[Tuple[Tuple[float, ...], ...]]

    def function(self) -> FunctionDef:
        return parse_function(self.text, self.space)

    def expected_basic(self) -> PolytopeUnion:
        return PolytopeUnion(tuple(Polytope(part) for part in self.basic))

    def expected_regular(self) -> Optional[Polytope]:
        return Polytope(self.regular) if self.regular is not None else None


def _entry(name, text, space, point, convex, basic, regular) -> CorpusEntry:
    return CorpusEntry(name, text, space, tuple(point), convex, tuple(tuple(map(tuple, p)) for p in basic),
                       tuple(map(tuple, regular)) if regular is not None else None)


CORPUS: List[CorpusEntry] = [
    _entry("abs", "(abs x)", X, [0], True, [[[-1], [1]]], [[-1], [1]]),
    _entry("neg_abs", "(- (abs x))", X, [0], False, [[[-1]], [[1]]], None),
    _entry("min_zero", "(min 0 x)", X, [0], False, [[[0]], [[1]]], None),
    _entry("max_slopes", "(max x (* 2 x))", X, [0], True, [[[1], [2]]], [[1], [2]]),
    _entry("square", "(* x x)", X, [1], True, [[[2]]], [[2]]),
    _entry("max_square", "(max x (* x x))", X, [0], True, [[[0], [1]]], [[0], [1]]),
    _entry("abs_shift", "(abs (- x 1))", X, [1], True, [[[-1], [1]]], [[-1], [1]]),
    _entry("abs_cube", "(pow (abs x) 3)", X, [0], True, [[[0]]], [[0]]),
    _entry("ramp_difference", "(- (max x 0) (max (- x) 0))", X, [0], True, [[[1]]], [[1]]),
    _entry("min_abs", "(min (abs x) (abs (- x 1)))", X, [0.5], False, [[[-1]], [[1]]], None),
    _entry("max_xy", "(max x y)", XY, [0, 0], True, [[[1, 0], [0, 1]]], [[1, 0], [0, 1]]),
    _entry("max_abs", "(max (abs x) (abs y))", XY, [0, 0], True,
           [[[1, 0], [0, 1], [-1, 0], [0, -1]]], [[1, 0], [0, 1], [-1, 0], [0, -1]]),
    _entry("l1_norm", "(+ (abs x) (abs y))", XY, [0, 0], True,
           [[[-1, -1], [1, -1], [1, 1], [-1, 1]]], [[-1, -1], [1, -1], [1, 1], [-1, 1]]),
    _entry("min_xy", "(min x y)", XY, [0, 0], False, [[[1, 0]], [[0, 1]]], None),
    _entry("abs_difference", "(- (abs x) (abs y))", XY, [0, 0], False,
           [[[-1, -1], [1, -1]], [[-1, 1], [1, 1]]], None),
    _entry("max_parabola", "(max 0 (- (* x x) y))", XY, [0, 0], True, [[[0, 0], [0, -1]]], [[0, 0], [0, -1]]),
    _entry("max_minus_min", "(- (max x y) (min x y))", XY, [0, 0], True,
           [[[1, -1], [-1, 1]]], [[1, -1], [-1, 1]]),
    _entry("product", "(* x y)", XY, [0, 0], False, [[[0, 0]]], [[0, 0]]),
    _entry("max_planes", "(max (+ x y) (- x y))", XY, [0, 0], True, [[[1, -1], [1, 1]]], [[1, -1], [1, 1]]),
    _entry("ridge", "(- y (abs x))", XY, [0, 0], False, [[[-1, 1]], [[1, 1]]], None),
]


@dataclass(frozen=True)
class GraphEntry:
    name: str
    spec: SetSpec
    point: Tuple[float, ...]
    lipschitz_like: bool


def _graph(constraints: Sequence[str]) -> SetSpec:
    return SetSpec.graph([parse_function(c, XY) for c in constraints], 1)


GRAPHS: List[GraphEntry] = [
    GraphEntry("abs_epigraph", _graph(["(- (abs x) y)"]), (0.0, 0.0), True),
    GraphEntry("sqrt_branches", _graph(["(- (* y y) x)"]), (0.0, 0.0), False),
    GraphEntry("parabola_epigraph", _graph(["(- (* x x) y)"]), (0.0, 0.0), True),
    GraphEntry("linear_map", SetSpec.map_graph(parse_function("(* 2 x)", X)), (0.0, 0.0), True),
    GraphEntry("constant_map", SetSpec.map_graph(parse_function("0", X)), (0.0, 0.0), True),
]


def corpus_entry(name: str) -> CorpusEntry:
    for entry in CORPUS:
        if entry.name == name:
            return entry
    raise KeyError(name)
