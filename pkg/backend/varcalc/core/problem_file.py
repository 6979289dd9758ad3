"""Sectioned problem files.

    [vars]        x: x1 x2          y: y1
    [lower]       objective: <expr>  constraint: <expr>   (repeatable)
    [upper]       objective: <expr>  constraint: <expr over x only>
    [candidates]  name: c1 c2 ...
    [grid]        box: lo hi (one per y variable)  x_box: lo hi  resolution: N
                  stencil_radius: r  stencil_count: n
    [params]      any Settings field in lower case, e.g. seed: 7, kappa_grid: 1 2 4

Lines starting with `#` or `;` are comments.
"""
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union
import hashlib
import logging

from .config import settings
from .exceptions import InputError, ProblemFileError, VarcalcError
from ..services.expr import FunctionDef, VarSpace, parse_function
from ..services.valuefn import GridSpec

# Configure logging
logger = logging.getLogger(__name__)

SECTIONS = ("vars", "lower", "upper", "candidates", "grid", "params")


@dataclass
class ProblemFile:
    source: str
    digest: str
    x_names: Tuple[str, ...]
    y_names: Tuple[str, ...] = ()
    lower_objective: Optional[FunctionDef] = None
    lower_constraints: List[FunctionDef] = field(default_factory=list)
    upper_objective: Optional[FunctionDef] = None
    upper_constraints: List[FunctionDef] = field(default_factory=list)
    candidates: Dict[str, Tuple[float, ...]] = field(default_factory=dict)
    grid: Optional[GridSpec] = None
    x_box: Optional[List[Tuple[float, float]]] = None
    params: Dict[str, str] = field(default_factory=dict)

    @property
    def space(self) -> VarSpace:
        return VarSpace(self.x_names + self.y_names)

    @property
    def x_space(self) -> VarSpace:
        return VarSpace(self.x_names)

    @property
    def x_dim(self) -> int:
        return len(self.x_names)

    def functions(self) -> Dict[str, FunctionDef]:
        out: Dict[str, FunctionDef] = {}
        for level in ("lower", "upper"):
            objective = getattr(self, f"{level}_objective")
            if objective is not None:
                out[f"{level}.objective"] = objective
            for i, f in enumerate(getattr(self, f"{level}_constraints")):
                out[f"{level}.constraint{i}"] = f
        return out

    def function(self, path: str) -> FunctionDef:
        funcs = self.functions()
        if path not in funcs:
            raise ProblemFileError(f"unknown function '{path}' (available: {', '.join(funcs) or 'none'})")
        return funcs[path]

    def candidate(self, name: str) -> Tuple[float, ...]:
        if name not in self.candidates:
            raise ProblemFileError(f"unknown candidate '{name}' (available: {', '.join(self.candidates) or 'none'})")
        return self.candidates[name]

    def point_for(self, f: FunctionDef, name: str) -> Tuple[float, ...]:
        """Candidate coordinates restricted to the variables `f` is defined over."""
        coords = self.candidate(name)
        return coords[:f.dim]

    def require_grid(self) -> GridSpec:
        if self.grid is None:
            raise ProblemFileError("this command needs a [grid] section")
        return self.grid

    def require_bilevel(self):
        from ..services.bilevel import BilevelProblem

        if not self.y_names:
            raise ProblemFileError("a bilevel problem needs y variables in [vars]")
        if self.lower_objective is None or self.upper_objective is None:
            raise ProblemFileError("a bilevel problem needs both [lower] and [upper] objectives")
        return BilevelProblem(self.lower_objective, tuple(self.lower_constraints), self.upper_objective,
                              tuple(self.upper_constraints), self.x_dim)


def _split(line: str, lineno: int) -> Tuple[str, str]:
    if ":" not in line:
        raise ProblemFileError(f"line {lineno}: expected 'key: value', got '{line}'")
    key, value = line.split(":", 1)
    return key.strip(), value.strip()


def _floats(value: str, lineno: int) -> Tuple[float, ...]:
    try:
        out = tuple(float(v) for v in value.replace(",", " ").split())
    except ValueError:
        raise ProblemFileError(f"line {lineno}: expected numbers, got '{value}'")
    if not out:
        raise ProblemFileError(f"line {lineno}: missing value")
    return out


def _parse(text: str, lineno: int, space: VarSpace) -> FunctionDef:
    try:
        return parse_function(text, space)
    except VarcalcError as e:
        raise ProblemFileError(f"line {lineno}: {e.detail}")


def parse_problem(source: str) -> ProblemFile:
    """Parse problem-file text; every error names its line."""
    digest = hashlib.sha256(source.encode("utf-8")).hexdigest()
    section = None
    raw: Dict[str, List[Tuple[int, str, str]]] = {s: [] for s in SECTIONS}
    for lineno, line in enumerate(source.splitlines(), start=1):
        line = line.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in SECTIONS:
                raise ProblemFileError(f"line {lineno}: unknown section [{section}] (expected one of {', '.join(SECTIONS)})")
            continue
        if section is None:
            raise ProblemFileError(f"line {lineno}: content before the first section header")
        key, value = _split(line, lineno)
        raw[section].append((lineno, key, value))

    x_names: Tuple[str, ...] = ()
    y_names: Tuple[str, ...] = ()
    for lineno, key, value in raw["vars"]:
        if key == "x":
            x_names += tuple(value.split())
        elif key == "y":
            y_names += tuple(value.split())
        else:
            raise ProblemFileError(f"line {lineno}: [vars] takes 'x:' and 'y:' entries, got '{key}'")
    if not x_names:
        raise ProblemFileError("[vars] must declare at least one x variable")
    pf = ProblemFile(source, digest, x_names, y_names)
    space = pf.space

    for level in ("lower", "upper"):
        for lineno, key, value in raw[level]:
            if key == "objective":
                if getattr(pf, f"{level}_objective") is not None:
                    raise ProblemFileError(f"line {lineno}: [{level}] declares a second objective")
                setattr(pf, f"{level}_objective", _parse(value, lineno, space))
            elif key == "constraint":
                target = pf.x_space if level == "upper" and y_names else space
                getattr(pf, f"{level}_constraints").append(_parse(value, lineno, target))
            else:
                raise ProblemFileError(f"line {lineno}: [{level}] takes 'objective:' and 'constraint:', got '{key}'")

    for lineno, key, value in raw["candidates"]:
        coords = _floats(value, lineno)
        if len(coords) != space.dim:
            raise ProblemFileError(f"line {lineno}: candidate '{key}' has {len(coords)} coordinates, expected {space.dim}")
        pf.candidates[key] = coords

    if raw["grid"]:
        box: List[Tuple[float, float]] = []
        x_box: List[Tuple[float, float]] = []
        options: Dict[str, object] = {}
        for lineno, key, value in raw["grid"]:
            if key in ("box", "x_box"):
                bounds = _floats(value, lineno)
                if len(bounds) != 2:
                    raise ProblemFileError(f"line {lineno}: '{key}' takes 'lo hi'")
                (box if key == "box" else x_box).append(bounds)
            elif key in ("resolution", "stencil_count"):
                options["resolution" if key == "resolution" else "x_stencil_count"] = int(_floats(value, lineno)[0])
            elif key == "stencil_radius":
                options["x_stencil_radius"] = _floats(value, lineno)[0]
            else:
                raise ProblemFileError(f"line {lineno}: unknown [grid] entry '{key}'")
        if len(box) != len(y_names):
            raise ProblemFileError(f"[grid] has {len(box)} box lines for {len(y_names)} y variables")
        if x_box and len(x_box) != len(x_names):
            raise ProblemFileError(f"[grid] has {len(x_box)} x_box lines for {len(x_names)} x variables")
        pf.grid = GridSpec(y_box=box, **options)
        pf.x_box = x_box or None

    for lineno, key, value in raw["params"]:
        if not hasattr(settings, key.upper()):
            raise ProblemFileError(f"line {lineno}: unknown parameter '{key}'")
        pf.params[key.upper()] = value
    logger.debug(f"parsed problem file with {len(pf.functions())} functions and {len(pf.candidates)} candidates")
    return pf


def load_problem(path: Union[str, Path]) -> ProblemFile:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        logger.error(f"Error reading problem file: {str(e)}")
        raise ProblemFileError(f"cannot read problem file '{path}': {e.strerror}")
    return parse_problem(text)


def _coerce(key: str, value: str):
    current = getattr(settings, key)
    try:
        if isinstance(current, bool):
            return value.lower() in ("1", "true", "yes")
        if isinstance(current, int):
            return int(float(value))
        if isinstance(current, float):
            return float(value)
        if isinstance(current, list):
            return [float(v) for v in value.replace(",", " ").split()]
    except ValueError:
        raise InputError(f"invalid value '{value}' for parameter {key.lower()}")
    return value


@contextmanager
def settings_override(params: Dict[str, str]) -> Iterator[None]:
    """Apply [params] entries to the settings singleton for the duration of one command."""
    saved = {key: getattr(settings, key) for key in params}
    try:
        for key, value in params.items():
            setattr(settings, key, _coerce(key, value))
        yield
    finally:
        for key, value in saved.items():
            setattr(settings, key, value)
