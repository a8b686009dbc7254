"""
Problem module for the coupled Hamilton-Jacobi solver
Problem data of a weakly coupled system, its constants ledger and the assumption checks
"""

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .coupling import CouplingMatrix
from .hamiltonians import (
    HamiltonianSpec, LagrangianSpec, LegendreError, legendre_transform, upper_hamiltonian,
)
from .torus import TorusGrid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckOutcome:
    """Result of one assumption check"""
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    """Pass/fail outcome of every assumption check on a problem"""

    problem: str
    outcomes: List[CheckOutcome] = field(default_factory=list)

    def add(self, name: str, passed: bool, detail: str = ""):
        self.outcomes.append(CheckOutcome(name, bool(passed), detail))

    @property
    def accepted(self) -> bool:
        return all(outcome.passed for outcome in self.outcomes)

    def failures(self) -> List[CheckOutcome]:
        return [outcome for outcome in self.outcomes if not outcome.passed]

    def outcome(self, name: str) -> CheckOutcome:
        for item in self.outcomes:
            if item.name == name:
                return item
        raise KeyError(name)

    def format(self) -> str:
        lines = [f"Validation of '{self.problem}': {'accepted' if self.accepted else 'REJECTED'}"]
        for outcome in self.outcomes:
            mark = "pass" if outcome.passed else "FAIL"
            suffix = f"  ({outcome.detail})" if outcome.detail else ""
            lines.append(f"  [{mark}] {outcome.name}{suffix}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "accepted": self.accepted,
            "checks": [
                {"name": o.name, "passed": o.passed, "detail": o.detail} for o in self.outcomes
            ],
        }


class ValidationError(Exception):
    """Raised when a problem fails its assumption checks"""

    def __init__(self, report: ValidationReport):
        super().__init__(report.format())
        self.report = report


@dataclass(frozen=True)
class ConstantsLedger:
    """
    Problem constants used by bounds, default parameters and tolerances

    Attributes:
        growth: Constant C of the quadratic growth sandwich for every H_k and L_k
        m1: max(0, max H_k(x, Dg_k) + sum_j c_kj g_j)
        c1: Time-Lipschitz constant of the value functions
        velocity_bound: Default half-width Q_max of the velocity search box
        gradient_bound: Bound P on the gradients seen by the finite-difference scheme
        dissipation: Per-state Lax-Friedrichs coefficient max |dH_k/dp| on |p| <= P
    """

    growth: float
    m1: float
    c1: float
    velocity_bound: float
    gradient_bound: float
    dissipation: Tuple[float, ...]

    def problem_constant(self, horizon: float = 0.0) -> float:
        """K(T) = max(1, C, C_1)(1 + T)"""
        return max(1.0, self.growth, self.c1) * (1.0 + horizon)

    def to_dict(self) -> dict:
        return {
            "growth": self.growth,
            "m1": self.m1,
            "c1": self.c1,
            "velocity_bound": self.velocity_bound,
            "gradient_bound": self.gradient_bound,
            "dissipation": list(self.dissipation),
            "problem_constant": self.problem_constant(0.0),
        }


def _oscillation(field_values: np.ndarray) -> float:
    return float(np.max(field_values) - np.min(field_values))


def _cross_oscillation(fields: Sequence[np.ndarray]) -> float:
    """max_x max_{j,k} |f_j(x) - f_k(x)|"""
    stacked = np.stack(fields)
    return float(np.max(stacked.max(axis=0) - stacked.min(axis=0)))


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """
    A weakly coupled system on the torus with its discretization

    Attributes:
        grid: Spatial grid
        hamiltonians: One HamiltonianSpec per state
        coupling: Coupling matrix (m x m)
        initial_data: One grid field g_k per state
        horizon: Final time T
        time_step: Time step dt
        velocity_bound: Half-width Q_max of the velocity box (None picks the ledger default)
        name: Problem name used in reports
        velocity_samples: Velocity samples per axis (None picks 65 in 1-D, 17 in 2-D)
        refine_rounds: Golden-section refinement rounds after the sampled search
        expected_c: Known ergodic constant, when there is one
    """

    grid: TorusGrid
    hamiltonians: Tuple[HamiltonianSpec, ...]
    coupling: CouplingMatrix
    initial_data: Tuple[np.ndarray, ...]
    horizon: float = 1.0
    time_step: float = 1.0 / 256
    velocity_bound: Optional[float] = None
    name: str = "problem"
    velocity_samples: Optional[int] = None
    refine_rounds: int = 3
    expected_c: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "hamiltonians", tuple(self.hamiltonians))
        fields = []
        for g in self.initial_data:
            array = np.array(g, dtype=float)
            array.setflags(write=False)
            fields.append(array)
        object.__setattr__(self, "initial_data", tuple(fields))
        if self.velocity_bound is None:
            object.__setattr__(self, "velocity_bound", self.ledger.velocity_bound)
        if self.velocity_samples is None:
            object.__setattr__(self, "velocity_samples", 65 if self.grid.dim == 1 else 17)

    @property
    def m(self) -> int:
        return self.coupling.m

    @property
    def steps(self) -> int:
        """Number of time steps needed to reach the horizon"""
        return int(round(self.horizon / self.time_step))

    @cached_property
    def lagrangians(self) -> Tuple[LagrangianSpec, ...]:
        return tuple(legendre_transform(h) for h in self.hamiltonians)

    @cached_property
    def ledger(self) -> ConstantsLedger:
        return compute_ledger(self.grid, self.hamiltonians, self.coupling, self.initial_data)

    @property
    def is_symmetric(self) -> bool:
        """All states share the same Hamiltonian and initial data"""
        first_h = self.hamiltonians[0]
        for h in self.hamiltonians[1:]:
            if h.kind != first_h.kind or h.kappa != first_h.kappa:
                return False
            if not np.array_equal(h.potential, first_h.potential):
                return False
            if h.kind == "tabulated" and not (
                np.array_equal(h.p_axis, first_h.p_axis) and np.array_equal(h.kinetic_table, first_h.kinetic_table)
            ):
                return False
        return all(np.array_equal(g, self.initial_data[0]) for g in self.initial_data[1:])

    def with_horizon(self, horizon: float) -> "ProblemSpec":
        return replace(self, horizon=float(horizon))

    def with_initial_data(self, initial_data: Sequence[np.ndarray]) -> "ProblemSpec":
        return replace(self, initial_data=tuple(initial_data))

    def shifted_potentials(self, shift: float) -> "ProblemSpec":
        """Same problem with every V_k replaced by V_k + shift"""
        hamiltonians = tuple(
            replace(h, potential=np.asarray(h.potential) + shift) for h in self.hamiltonians
        )
        return replace(self, hamiltonians=hamiltonians, name=f"{self.name}+{shift:g}")

    def permuted(self, permutation: Sequence[int]) -> "ProblemSpec":
        """Relabel states so that new state k is old state permutation[k]"""
        order = list(permutation)
        return replace(
            self,
            hamiltonians=tuple(self.hamiltonians[k] for k in order),
            initial_data=tuple(self.initial_data[k] for k in order),
            coupling=self.coupling.conjugate(order),
            name=f"{self.name}[{','.join(str(k + 1) for k in order)}]",
        )

    def describe(self) -> dict:
        return {
            "name": self.name,
            "dim": self.grid.dim,
            "points": self.grid.points_per_axis,
            "states": self.m,
            "coupling": self.coupling.to_list(),
            "horizon": self.horizon,
            "time_step": self.time_step,
            "velocity_bound": self.velocity_bound,
            "velocity_samples": self.velocity_samples,
            "refine_rounds": self.refine_rounds,
        }


def compute_ledger(grid: TorusGrid, hamiltonians: Sequence[HamiltonianSpec],
                   coupling: CouplingMatrix, initial_data: Sequence[np.ndarray]) -> ConstantsLedger:
    """Assemble the constants ledger of a problem from its data"""
    growth = max(h.growth_constant() for h in hamiltonians)
    initial = [np.asarray(g, dtype=float) for g in initial_data]

    coupling_terms = np.tensordot(coupling.entries, np.stack(initial), axes=(1, 0))
    m1 = 0.0
    gradient_sup = 0.0
    for k, (h, g) in enumerate(zip(hamiltonians, initial)):
        backward, forward = grid.one_sided_gradients(g)
        m1 = max(m1, float(np.max(upper_hamiltonian(h, backward, forward) + coupling_terms[k])))
        gradient_sup = max(gradient_sup, grid.lipschitz_constant(g))

    rest_cost = 0.0
    for h in hamiltonians:
        rest = float(np.max(np.abs(legendre_transform(h).at_rest())))
        rest_cost = max(rest_cost, rest)
    cross = _cross_oscillation(initial)
    c1 = max(m1, rest_cost + coupling.max_rate * cross)

    oscillation = max(_oscillation(g) for g in initial)
    velocity_bound = 2.0 * np.sqrt(2.0 * growth * (growth + oscillation + 1.0))
    level = c1 + coupling.max_rate * cross
    gradient_bound = max(np.sqrt(2.0 * growth * (level + growth)), gradient_sup)
    dissipation = tuple(h.max_speed(gradient_bound) for h in hamiltonians)
    ledger = ConstantsLedger(
        growth=float(growth), m1=float(m1), c1=float(c1),
        velocity_bound=float(velocity_bound), gradient_bound=float(gradient_bound),
        dissipation=tuple(float(d) for d in dissipation),
    )
    logger.debug(f"Constants ledger: {ledger}")
    return ledger


def validate(spec: ProblemSpec) -> ValidationReport:
    """
    Run every checkable assumption on a problem

    Args:
        spec: Problem to check

    Returns:
        ValidationReport listing each check with the location of its first failure
    """
    report = ValidationReport(problem=spec.name)
    m = spec.m

    lengths_ok = len(spec.hamiltonians) == m and len(spec.initial_data) == m
    report.add("lengths", lengths_ok,
               "" if lengths_ok else f"{len(spec.hamiltonians)} Hamiltonians, {len(spec.initial_data)} "
                                     f"initial fields for {m} states")
    if not lengths_ok:
        return report

    bad_fields = []
    for k in range(m):
        if spec.hamiltonians[k].potential.shape != spec.grid.shape:
            bad_fields.append(f"potential {k + 1}")
        if spec.initial_data[k].shape != spec.grid.shape or not np.all(np.isfinite(spec.initial_data[k])):
            bad_fields.append(f"initial {k + 1}")
    report.add("grid", not bad_fields, ", ".join(bad_fields))
    if bad_fields:
        return report

    growth = max(h.growth_constant() for h in spec.hamiltonians)
    for k, h in enumerate(spec.hamiltonians):
        label = f"hamiltonian[{k + 1}]"
        if h.kind == "quadratic":
            report.add(f"{label}.convexity", h.kappa > 0.0, "" if h.kappa > 0.0 else f"kappa = {h.kappa}")
            report.add(f"{label}.coercivity", h.kappa > 0.0)
        else:
            violation = h.convexity_violation()
            detail = ""
            if violation is not None:
                p_index, axis, second = violation
                detail = f"x-index {(0,) * h.dim}, p-index {p_index}, axis {axis}, second difference {second:.3e}"
            report.add(f"{label}.convexity", violation is None, detail)
            gap = h.coercivity_gap()
            report.add(f"{label}.coercivity", gap >= h.coercivity_margin,
                       "" if gap >= h.coercivity_margin else f"edge rise {gap:.3e} < margin {h.coercivity_margin:.3e}")
        try:
            lagrangian = legendre_transform(h)
        except LegendreError as e:
            report.add(f"lagrangian[{k + 1}].growth", False, str(e))
            continue
        q_bound = spec.velocity_bound if h.kind == "quadratic" else float(lagrangian.q_axis[-1])
        failing = lagrangian.growth_violation(growth, q_bound)
        report.add(f"lagrangian[{k + 1}].growth", failing is None and np.isfinite(growth),
                   "" if failing is None else f"sandwich fails at |q| = {failing:.4g} with C = {growth:.4g}")

    coupling = spec.coupling
    sign = coupling.sign_violation()
    report.add("coupling.signs", sign is None,
               "" if sign is None else f"entry ({sign[0] + 1}, {sign[1] + 1}) = {coupling.entries[sign]:.6g}")
    row = coupling.row_sum_violation()
    report.add("coupling.row_sums", row is None,
               "" if row is None else f"row {row + 1} sums to {coupling.entries[row].sum():.3e}")
    column = coupling.column_sum_violation()
    report.add("coupling.column_sums", column is None,
               "" if column is None else f"column {column + 1} sums to {coupling.entries[:, column].sum():.3e}")
    witness = coupling.irreducibility_witness()
    report.add("coupling.irreducible", witness is None,
               "" if witness is None else f"isolated subset I = {{{', '.join(str(k + 1) for k in witness)}}}")

    dt_ok = spec.time_step > 0.0 and (spec.time_step <= spec.horizon or spec.horizon == 0.0)
    report.add("time_step", dt_ok, "" if dt_ok else f"dt = {spec.time_step}, T = {spec.horizon}")
    reach_ok = spec.velocity_bound * spec.time_step >= spec.grid.spacing
    report.add("velocity_bound", reach_ok,
               "" if reach_ok else f"Q_max*dt = {spec.velocity_bound * spec.time_step:.3e} < dx = {spec.grid.spacing:.3e}")

    for failure in report.failures():
        logger.debug(f"Check {failure.name} failed: {failure.detail}")
    return report


def require_valid(spec: ProblemSpec) -> ValidationReport:
    """Validate a problem, raising ValidationError if any check fails"""
    report = validate(spec)
    if not report.accepted:
        raise ValidationError(report)
    return report
