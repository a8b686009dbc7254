"""
Configuration module for the coupled Hamilton-Jacobi solver
Parses key-value problem files and suite files into ProblemSpec objects
"""

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .coupling import CouplingError, CouplingMatrix
from .hamiltonians import HamiltonianSpec, LegendreError
from .problem import ProblemSpec
from .torus import GridError, TorusGrid

logger = logging.getLogger(__name__)

BUNDLED_PROBLEMS = Path(__file__).resolve().parent.parent / "problems"


class ConfigError(Exception):
    """Raised for unreadable, malformed or inconsistent configuration files"""

    def __init__(self, message: str, line_number: Optional[int] = None, source: Optional[str] = None):
        location = ""
        if source:
            location = f"{source}:"
        if line_number is not None:
            location += f"{line_number}:"
        super().__init__(f"{location} {message}" if location else message)
        self.line_number = line_number
        self.source = source


PROBLEM_KEYS = {
    "name", "dim", "points", "states", "hamiltonian", "potential", "initial", "coupling",
    "horizon", "time_step", "velocity_bound", "velocity_samples", "refine_rounds", "expected_c",
}
PER_STATE_KEYS = {"hamiltonian", "potential", "initial"}
SUITE_KEYS = {
    "problems", "points", "time_step", "t_long", "tol_scale", "tol_conv", "tol_c", "tol_e",
    "mc_samples", "seed",
}

_CALL_PATTERN = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*(?:\((.*)\))?$", re.DOTALL)
_LINE_PATTERN = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*(?:\.[0-9]+)?)\s*=\s*(.*)$")


def parse_key_values(text: str, source: str = "<config>") -> Dict[str, Tuple[str, int]]:
    """
    Split a key-value document into {key: (raw value, line number)}

    '#' starts a comment; blank lines are ignored; duplicate keys are rejected.
    """
    entries: Dict[str, Tuple[str, int]] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        match = _LINE_PATTERN.match(line)
        if not match:
            raise ConfigError(f"Expected 'key = value', got '{line}'", number, source)
        key, value = match.group(1), match.group(2).strip()
        if key in entries:
            raise ConfigError(f"Duplicate key '{key}' (first set on line {entries[key][1]})", number, source)
        if not value:
            raise ConfigError(f"Empty value for '{key}'", number, source)
        entries[key] = (value, number)
    return entries


def parse_number(text: str) -> float:
    """Parse a real number, allowing a simple fraction such as 1/256"""
    text = text.strip()
    try:
        if "/" in text:
            numerator, denominator = text.split("/", 1)
            return float(numerator) / float(denominator)
        return float(text)
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"'{text}' is not a number")


def parse_call(text: str) -> Tuple[str, List]:
    """
    Parse 'name' or 'name(arg, ...)'; arguments may be numbers or JSON arrays

    Returns:
        (name, argument list)
    """
    text = text.strip()
    match = _CALL_PATTERN.match(text)
    if not match:
        raise ValueError(f"'{text}' is not a preset call")
    name, inner = match.group(1), match.group(2)
    if inner is None or not inner.strip():
        return name, []
    arguments = []
    depth = 0
    current = ""
    for char in inner:
        if char == "[":
            depth += 1
        elif char == "]":
            depth -= 1
        if char == "," and depth == 0:
            arguments.append(current)
            current = ""
        else:
            current += char
    arguments.append(current)
    parsed = []
    for argument in arguments:
        argument = argument.strip()
        parsed.append(json.loads(argument) if argument.startswith("[") else parse_number(argument))
    return name, parsed


def field_preset(text: str, grid: TorusGrid) -> np.ndarray:
    """
    Build a grid field from a preset: zero, constant(b), cosine(a, f, phase) or an inline array

    cosine(a, f, phase) samples a * mean_d cos(2 pi (f x_d + phase)).
    """
    text = text.strip()
    if text.startswith("["):
        values = np.asarray(json.loads(text), dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"inline array has shape {values.shape}, grid is {grid.shape}")
        return values
    name, args = parse_call(text)
    if name == "zero" and not args:
        return np.zeros(grid.shape)
    if name == "constant" and len(args) == 1:
        return np.full(grid.shape, float(args[0]))
    if name == "cosine" and len(args) == 3:
        amplitude, frequency, phase = (float(a) for a in args)
        return grid.sample(
            lambda *xs: amplitude * np.mean([np.cos(2 * np.pi * (frequency * x + phase)) for x in xs], axis=0)
        )
    raise ValueError(f"unknown field preset '{text}'")


def hamiltonian_preset(text: str, potential: np.ndarray) -> HamiltonianSpec:
    """Build a Hamiltonian from quadratic(kappa), power(e, p_max, samples) or tabulated([...], p_max)"""
    name, args = parse_call(text)
    if name == "quadratic" and len(args) == 1:
        return HamiltonianSpec.quadratic(float(args[0]), potential)
    if name == "power" and len(args) == 3:
        return HamiltonianSpec.power(float(args[0]), float(args[1]), int(args[2]), potential)
    if name == "tabulated" and len(args) == 2 and isinstance(args[0], list):
        table = np.asarray(args[0], dtype=float)
        axis = np.linspace(-float(args[1]), float(args[1]), table.shape[0])
        return HamiltonianSpec.tabulated(axis, table, potential)
    raise ValueError(f"unknown Hamiltonian preset '{text}'")


def coupling_preset(text: str) -> CouplingMatrix:
    """Build a coupling from an inline matrix or two_state(c1, c2)"""
    text = text.strip()
    if text.startswith("["):
        return CouplingMatrix(np.asarray(json.loads(text), dtype=float))
    name, args = parse_call(text)
    if name == "two_state" and len(args) == 2:
        return CouplingMatrix.two_state(float(args[0]), float(args[1]))
    raise ValueError(f"unknown coupling preset '{text}'")


def _per_state(entries, key: str, m: int, default: str) -> List[Tuple[str, Optional[int]]]:
    """Raw values for key.1 .. key.m, falling back to a bare key and then to the default"""
    shared = entries.get(key, (default, None))
    values = []
    for k in range(1, m + 1):
        values.append(entries.get(f"{key}.{k}", shared))
    return values


def parse_problem(text: str, name: str = "problem", source: str = "<config>",
                  points: Optional[int] = None, time_step: Optional[float] = None,
                  horizon: Optional[float] = None) -> ProblemSpec:
    """
    Build a ProblemSpec from the text of a problem file

    Args:
        text: File contents
        name: Default problem name (file stem)
        source: Label used in error messages
        points: Override for the grid size
        time_step: Override for dt
        horizon: Override for T

    Raises:
        ConfigError: on any malformed or unknown entry
    """
    entries = parse_key_values(text, source)
    for key, (_, number) in entries.items():
        base = key.split(".", 1)[0]
        if base not in PROBLEM_KEYS or ("." in key and base not in PER_STATE_KEYS):
            raise ConfigError(f"Unknown key '{key}'", number, source)

    def scalar(key, default, convert):
        if key not in entries:
            return default
        value, number = entries[key]
        try:
            return convert(value)
        except ValueError as e:
            raise ConfigError(f"Bad value for '{key}': {e}", number, source)

    def as_int(value):
        number = parse_number(value)
        if number != int(number):
            raise ValueError(f"'{value}' is not an integer")
        return int(number)

    dim = scalar("dim", 1, as_int)
    n = points if points is not None else scalar("points", 128, as_int)
    m = scalar("states", 2, as_int)
    try:
        grid = TorusGrid(dim=dim, points_per_axis=n)
    except GridError as e:
        raise ConfigError(str(e), entries.get("points", (None, None))[1], source)

    def build(key, default, builder):
        built = []
        for raw, number in _per_state(entries, key, m, default):
            try:
                built.append(builder(raw))
            except (ValueError, LegendreError, json.JSONDecodeError) as e:
                raise ConfigError(f"Bad value for '{key}': {e}", number, source)
        return built

    potentials = build("potential", "zero", lambda raw: field_preset(raw, grid))
    initial = build("initial", "zero", lambda raw: field_preset(raw, grid))
    hamiltonian_texts = _per_state(entries, "hamiltonian", m, "quadratic(1)")
    hamiltonians = []
    for (raw, number), potential in zip(hamiltonian_texts, potentials):
        try:
            hamiltonians.append(hamiltonian_preset(raw, potential))
        except (ValueError, LegendreError, json.JSONDecodeError) as e:
            raise ConfigError(f"Bad value for 'hamiltonian': {e}", number, source)

    coupling_text, coupling_line = entries.get("coupling", ("two_state(1, 1)", None))
    try:
        coupling = coupling_preset(coupling_text)
    except (ValueError, CouplingError, json.JSONDecodeError) as e:
        raise ConfigError(f"Bad value for 'coupling': {e}", coupling_line, source)
    if coupling.m != m:
        raise ConfigError(f"Coupling has {coupling.m} states but states = {m}", coupling_line, source)

    def velocity(value):
        return None if value.strip() == "auto" else parse_number(value)

    return ProblemSpec(
        grid=grid,
        hamiltonians=tuple(hamiltonians),
        coupling=coupling,
        initial_data=tuple(initial),
        horizon=horizon if horizon is not None else scalar("horizon", 1.0, parse_number),
        time_step=time_step if time_step is not None else scalar("time_step", 1.0 / (2 * n), parse_number),
        velocity_bound=scalar("velocity_bound", None, velocity),
        name=entries["name"][0] if "name" in entries else name,
        velocity_samples=scalar("velocity_samples", None, as_int),
        refine_rounds=scalar("refine_rounds", 3, as_int),
        expected_c=scalar("expected_c", None, parse_number),
    )


def load_problem(path, **overrides) -> ProblemSpec:
    """Read and parse a problem file; keyword overrides are passed to parse_problem"""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"Cannot read problem file: {e}", source=str(path))
    logger.debug(f"Loading problem from {path}")
    return parse_problem(text, name=path.stem, source=str(path), **overrides)


def resolve_problem(name: str, search_dirs: List[Path]) -> Path:
    """Find <name>.cfg in the given directories, then among the bundled problems"""
    for directory in list(search_dirs) + [BUNDLED_PROBLEMS]:
        candidate = Path(directory) / f"{name}.cfg"
        if candidate.is_file():
            return candidate
    raise ConfigError(f"Unknown problem preset '{name}'")


@dataclass
class SuiteConfig:
    """A battery of named problems plus run-wide overrides"""

    name: str
    problems: List[Path] = field(default_factory=list)
    points: Optional[int] = None
    time_step: Optional[float] = None
    t_long: float = 20.0
    tol_scale: float = 1.0
    tol_conv: Optional[float] = None
    tol_c: Optional[float] = None
    tol_e: Optional[float] = None
    mc_samples: int = 100_000
    seed: int = 0

    def load(self, path: Path, **overrides) -> ProblemSpec:
        """Load one of the suite's problems with the suite's grid overrides applied"""
        settings = {"points": self.points, "time_step": self.time_step}
        settings.update(overrides)
        return load_problem(path, **settings)


def parse_suite(text: str, name: str = "suite", source: str = "<suite>",
                search_dirs: Optional[List[Path]] = None) -> SuiteConfig:
    """Build a SuiteConfig from the text of a suite file"""
    entries = parse_key_values(text, source)
    suite = SuiteConfig(name=name)
    for key, (value, number) in entries.items():
        if key not in SUITE_KEYS:
            raise ConfigError(f"Unknown suite key '{key}'", number, source)
        try:
            if key == "problems":
                names = [item.strip() for item in value.split(",") if item.strip()]
                try:
                    suite.problems = [resolve_problem(item, search_dirs or []) for item in names]
                except ConfigError as e:
                    raise ConfigError(str(e), number, source)
            elif key in ("points", "mc_samples", "seed"):
                setattr(suite, key, int(parse_number(value)))
            else:
                setattr(suite, key, parse_number(value))
        except ValueError as e:
            raise ConfigError(f"Bad value for '{key}': {e}", number, source)
    return suite


def load_suite(path) -> SuiteConfig:
    """Read and parse a suite file; problem names resolve next to it first"""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"Cannot read suite file: {e}", source=str(path))
    return parse_suite(text, name=path.stem, source=str(path), search_dirs=[path.parent])
