"""
Diagnostics module for the coupled Hamilton-Jacobi solver
Text reports for scheme failures and audit term breakdowns
"""

import logging
from typing import Any, Dict, Optional

import numpy as np

logger = logging.getLogger(__name__)

WIDTH = 80


class FieldDebugger:
    """
    Summaries of the per-state fields held by a failing computation
    Used for exception reporting and troubleshooting
    """

    def __init__(self, fields: Optional[np.ndarray] = None, params=None,
                 time: Optional[float] = None, step: Optional[int] = None):
        """
        Initialize debugger

        Args:
            fields: Array of shape (m, *grid shape) (optional)
            params: SchemeParams in use (optional)
            time: Time at which the failure happened (optional)
            step: Step index at which the failure happened (optional)
        """
        self.fields = None if fields is None else np.asarray(fields, dtype=float)
        self.params = params
        self.time = time
        self.step = step

    def dump_position(self) -> str:
        lines = ["Position:"]
        lines.append(f"  time: {'-' if self.time is None else f'{self.time:.6g}'}")
        lines.append(f"  step: {'-' if self.step is None else self.step}")
        return "\n".join(lines)

    def dump_fields(self) -> str:
        """Per-state min / max / mean and the first non-finite node, if any"""
        if self.fields is None:
            return "Fields: (none captured)"
        lines = [f"Fields ({self.fields.shape[0]} states, grid {self.fields.shape[1:]}):"]
        for k, values in enumerate(self.fields):
            finite = np.isfinite(values)
            if finite.all():
                lines.append(
                    f"  u_{k + 1}: min {values.min(): .6e}  max {values.max(): .6e}  mean {values.mean(): .6e}"
                )
            else:
                first = tuple(int(i) for i in np.argwhere(~finite)[0])
                lines.append(f"  u_{k + 1}: {int((~finite).sum())} non-finite nodes, first at index {first}")
        return "\n".join(lines)

    def dump_params(self) -> str:
        if self.params is None:
            return "Scheme parameters: (none captured)"
        lines = ["Scheme parameters:"]
        for name, value in vars(self.params).items():
            lines.append(f"  {name}: {value}")
        return "\n".join(lines)

    def classify_failure(self, exception: Exception) -> Dict[str, Any]:
        """
        Classify a failure and attach hints

        Args:
            exception: The exception that occurred

        Returns:
            Dictionary with type, category, message and hints
        """
        from .solver import SchemeError

        try:
            message = Exception.__str__(exception) if isinstance(exception, SchemeError) else str(exception)
        except Exception:
            message = repr(exception)

        classification = {"type": type(exception).__name__, "message": message,
                          "category": "Unknown", "hints": []}
        lowered = message.lower()
        if "cfl" in lowered:
            classification["category"] = "Stability Condition"
            classification["hints"].append("Reduce the finite-difference time step or leave it unset")
            classification["hints"].append("Large dissipation coefficients need smaller steps")
        elif "non-finite" in lowered:
            classification["category"] = "Numerical Blow-up"
            classification["hints"].append("Check that the Hamiltonians are convex and coercive")
            classification["hints"].append("Check the velocity bound against the potential oscillation")
        elif "lattice" in lowered:
            classification["category"] = "Time Lattice Mismatch"
            classification["hints"].append("Times must be integer multiples of the time step")
        elif isinstance(exception, SchemeError):
            classification["category"] = "Scheme Error"
        elif isinstance(exception, FloatingPointError):
            classification["category"] = "Floating Point Error"
        return classification


def format_failure_report(exception: Exception, fields=None, params=None,
                          time: Optional[float] = None, step: Optional[int] = None) -> str:
    """
    Generate a failure report with classification, position, fields and parameters

    Returns:
        Formatted report string
    """
    debugger = FieldDebugger(fields, params, time, step)
    lines = ["", "=" * WIDTH, " SCHEME FAILURE ".center(WIDTH, "="), "=" * WIDTH, ""]

    classification = debugger.classify_failure(exception)
    lines.append(f"Exception Type: {classification['type']}")
    lines.append(f"Category: {classification['category']}")
    lines.append(f"Message: {classification['message']}")
    if classification["hints"]:
        lines.append("")
        lines.append("Hints:")
        for hint in classification["hints"]:
            lines.append(f"  • {hint}")

    for section in (debugger.dump_position(), debugger.dump_fields(), debugger.dump_params()):
        lines.extend(["", "-" * WIDTH, "", section])
    lines.extend(["", "=" * WIDTH])
    return "\n".join(lines)


def format_breakdown(title: str, terms: Dict[str, Any]) -> str:
    """Aligned name / value listing of the terms of an audit"""
    lines = ["-" * WIDTH, f" {title} ".center(WIDTH, "-")]
    width = max((len(name) for name in terms), default=0)
    for name, value in terms.items():
        if isinstance(value, float):
            value = f"{value: .9e}"
        lines.append(f"  {name.ljust(width)} : {value}")
    lines.append("-" * WIDTH)
    return "\n".join(lines)
