"""
Manifest module for the coupled Hamilton-Jacobi solver
Run manifests, phase timing and the CSV / JSON writers behind every output file
"""

import hashlib
import json
import logging
import math
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def config_hash(*texts: str) -> str:
    """SHA-256 over the configuration texts a run was started from"""
    digest = hashlib.sha256()
    for text in texts:
        digest.update(text.encode("utf-8"))
        digest.update(b"\0")
    return digest.hexdigest()


def json_safe(value: Any) -> Any:
    """Recursively convert numpy scalars and arrays to JSON types; NaN / Inf become strings"""
    if isinstance(value, dict):
        return {str(key): json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(item) for item in value]
    if isinstance(value, np.ndarray):
        return json_safe(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        number = float(value)
        if math.isfinite(number):
            return number
        if math.isnan(number):
            return "NaN"
        return "Infinity" if number > 0 else "-Infinity"
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path, data: Dict[str, Any]) -> Path:
    """
    Atomic JSON write with sorted keys and a trailing newline

    Writes to a temporary file next to the target, then replaces it.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temporary = path.with_suffix(path.suffix + ".tmp")
    temporary.write_text(json.dumps(json_safe(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(temporary, path)
    logger.debug(f"Wrote {path}")
    return path


def write_csv(path, header: Sequence[str], rows) -> Path:
    """
    CSV with a header row, floats at 17 significant digits and a trailing newline

    Args:
        path: Output file
        header: Column names
        rows: 2-D array-like of numbers, one row per line
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = np.asarray(rows, dtype=float).reshape(-1, len(header))
    np.savetxt(path, table, fmt=FLOAT_FORMAT, delimiter=",", header=",".join(header), comments="")
    logger.debug(f"Wrote {path} ({len(table)} rows)")
    return path


class WarningCollector(logging.Handler):
    """Logging handler that keeps the text of every warning emitted during a run"""

    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages: List[str] = []

    def emit(self, record: logging.LogRecord):
        try:
            self.messages.append(f"{record.name}: {record.getMessage()}")
        except Exception:
            self.handleError(record)


class PhaseTimer:
    """Wall-clock timings of the named phases of a run"""

    def __init__(self):
        self.timings: Dict[str, float] = {}

    @contextmanager
    def phase(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.timings[name] = self.timings.get(name, 0.0) + elapsed
            logger.debug(f"Phase '{name}' took {elapsed:.3f} s")

    @property
    def total(self) -> float:
        return sum(self.timings.values())


@dataclass
class RunManifest:
    """
    Record of one CLI invocation

    Attributes:
        subcommand: Subcommand that ran
        config_hash: Hash of the configuration texts
        parameters: Resolved parameters (overrides included)
        version: Package version
        timings: Wall-clock seconds per phase
        warnings: Warnings logged during the run
        seeds: Named seeds used by the run
        outputs: Files written, relative to the output directory
    """

    subcommand: str
    config_hash: str
    parameters: Dict[str, Any] = field(default_factory=dict)
    version: str = ""
    timings: Dict[str, float] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    seeds: Dict[str, int] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    exit_status: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand, "config_hash": self.config_hash, "parameters": self.parameters,
            "version": self.version, "timings": self.timings, "warnings": self.warnings, "seeds": self.seeds,
            "outputs": self.outputs, "exit_status": self.exit_status,
        }

    def write(self, out_dir) -> Path:
        return write_json(Path(out_dir) / "manifest.json", self.to_dict())


class RunContext:
    """
    Output directory of one run with its manifest, timer and warning capture

    Use as a context manager; the warning handler is attached to the root
    logger while the context is open.
    """

    def __init__(self, out_dir, manifest: RunManifest):
        self.out_dir = Path(out_dir)
        self.manifest = manifest
        self.timer = PhaseTimer()
        self.collector = WarningCollector()

    def __enter__(self) -> "RunContext":
        self.out_dir.mkdir(parents=True, exist_ok=True)
        logging.getLogger().addHandler(self.collector)
        return self

    def __exit__(self, exc_type, exc, tb):
        logging.getLogger().removeHandler(self.collector)
        self.manifest.timings = dict(self.timer.timings)
        self.manifest.warnings = list(self.collector.messages)
        self.manifest.write(self.out_dir)
        return False

    def phase(self, name: str):
        return self.timer.phase(name)

    def json(self, name: str, data: Dict[str, Any]) -> Path:
        path = write_json(self.out_dir / name, data)
        self.manifest.outputs.append(name)
        return path

    def csv(self, name: str, header: Sequence[str], rows) -> Path:
        path = write_csv(self.out_dir / name, header, rows)
        self.manifest.outputs.append(name)
        return path
