"""
Ergodic module for the coupled Hamilton-Jacobi solver
Ergodic constant and ergodic functions of the coupled cell problem, and the large-time convergence audit
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .hamiltonians import godunov, lax_friedrichs
from .problem import ProblemSpec
from .solver import DPPOperator, SchemeParams, ValueField, solve

logger = logging.getLogger(__name__)


def tolerance_c(spec: ProblemSpec, params: SchemeParams, tol_scale: float = 1.0) -> float:
    """5 (dx + dt)"""
    return tol_scale * 5.0 * (spec.grid.spacing + params.time_step)


def tolerance_e(spec: ProblemSpec, params: SchemeParams, tol_scale: float = 1.0) -> float:
    """10 (dx + dt) K(0)"""
    return tol_scale * 10.0 * (spec.grid.spacing + params.time_step) * spec.ledger.problem_constant(0.0)


def tolerance_conv(spec: ProblemSpec, params: SchemeParams, tol_scale: float = 1.0) -> float:
    """10 (dx + dt)"""
    return tol_scale * 10.0 * (spec.grid.spacing + params.time_step)


@dataclass
class SlopeEstimate:
    """
    Ergodic constant from the long-time slope of the mean of u_1

    Attributes:
        c: Negated slope over the last half of [0, T_long]
        c_quarter: Negated slope over the last quarter
        converged: Whether the two slopes agree within the tolerance
        tolerance: Tolerance used for the agreement
        run: The long-time ValueField, reusable by later audits
    """

    c: float
    c_quarter: float
    converged: bool
    tolerance: float
    run: ValueField = field(repr=False)


def _slope(times: np.ndarray, means: np.ndarray, start: float) -> float:
    mask = times >= start - 1e-12
    return float(np.polyfit(times[mask], means[mask], 1)[0])


def ergodic_constant_slope(spec: ProblemSpec, params: Optional[SchemeParams] = None, t_long: float = 20.0,
                           record_every: int = 16, tol_scale: float = 1.0,
                           operator: Optional[DPPOperator] = None) -> SlopeEstimate:
    """
    Ergodic constant c as minus the least-squares slope of t -> mean_x u_1(x, t)

    Args:
        spec: Problem (its initial data start the run)
        params: Scheme parameters
        t_long: Length of the run
        record_every: Record the run every n steps
        tol_scale: Multiplier of the agreement tolerance
        operator: Prebuilt operator to reuse
    """
    params = params or SchemeParams.for_problem(spec)
    run = solve(spec.with_horizon(t_long), params, record_every=record_every, operator=operator)
    times = run.time_array()
    means = np.array([values[0].mean() for values in run.values])
    c_half = -_slope(times, means, t_long / 2.0)
    c_quarter = -_slope(times, means, 3.0 * t_long / 4.0)
    tolerance = tolerance_c(spec, params, tol_scale)
    converged = abs(c_half - c_quarter) <= tolerance
    if not converged:
        logger.warning(
            f"Slope estimate of '{spec.name}' not yet converged: last half {c_half:.6f}, "
            f"last quarter {c_quarter:.6f}"
        )
    logger.debug(f"Slope estimate of '{spec.name}': c = {c_half:.8f}")
    return SlopeEstimate(c=c_half, c_quarter=c_quarter, converged=converged, tolerance=tolerance, run=run)


def ergodic_residuals(spec: ProblemSpec, values: np.ndarray, c: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Residuals H_k(x, Dv_k) + sum_j c_kj v_j - c of the cell problem

    Returns:
        (upwind residuals, Lax-Friedrichs residuals), each of shape (m, *grid.shape)
    """
    grid = spec.grid
    coupling_terms = np.tensordot(spec.coupling.entries, values, axes=(1, 0))
    upwind = np.empty_like(values)
    central = np.empty_like(values)
    for k, h in enumerate(spec.hamiltonians):
        backward, forward = grid.one_sided_gradients(values[k])
        upwind[k] = godunov(h, backward, forward) + coupling_terms[k] - c
        central[k] = lax_friedrichs(h, backward, forward, spec.ledger.dissipation[k], local=True) \
            + coupling_terms[k] - c
    return upwind, central


@dataclass
class ErgodicSolution:
    """
    Ergodic constant and ergodic functions (v_1, ..., v_m) with v_1(origin) = 0

    Attributes:
        c: Ergodic constant (relative-value estimate when it converged, else the slope estimate)
        values: Ergodic functions, shape (m, *grid.shape)
        c_slope: Slope estimate
        c_relative_value: Relative-value estimate
        converged: Relative-value iteration reached the fixed-point tolerance
        slope_converged: Slope estimates over the last half and quarter agreed
        iterations: Relative-value iterations performed
        residuals: Upwind residuals of the cell problem
        lf_residuals: Lax-Friedrichs residuals of the cell problem
        tol_e: Residual tolerance
        tol_c: Estimator agreement tolerance
    """

    c: float
    values: np.ndarray
    c_slope: float
    c_relative_value: float
    converged: bool
    slope_converged: bool
    iterations: int
    residuals: np.ndarray
    lf_residuals: np.ndarray
    tol_e: float
    tol_c: float
    slope_run: Optional[ValueField] = field(default=None, repr=False)

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals)))

    @property
    def max_lf_residual(self) -> float:
        return float(np.max(np.abs(self.lf_residuals)))

    @property
    def estimators_agree(self) -> bool:
        return abs(self.c_slope - self.c_relative_value) <= self.tol_c

    @property
    def residual_ok(self) -> bool:
        return self.max_residual <= self.tol_e

    def summary(self) -> dict:
        return {
            "c": self.c,
            "c_slope": self.c_slope,
            "c_relative_value": self.c_relative_value,
            "tol_c": self.tol_c,
            "tol_e": self.tol_e,
            "converged": self.converged and self.slope_converged,
            "relative_value_converged": self.converged,
            "slope_converged": self.slope_converged,
            "iterations": self.iterations,
            "max_residual": self.max_residual,
            "max_lf_residual": self.max_lf_residual,
        }


def relative_value_iteration(operator: DPPOperator, start: np.ndarray, tol_fix: float = 1e-8,
                             max_iterations: int = 20000):
    """
    Fixed point of w -> T(w) - T(w)_1(origin)

    Returns:
        (fixed point, constant estimate -T(w)_1(origin)/dt, iterations, converged)
    """
    origin = (0,) + operator.grid.origin
    current = start - start[origin]
    constant = np.nan
    for iteration in range(1, max_iterations + 1):
        image = operator.step(current).values
        constant = -image[origin] / operator.window
        updated = image - image[origin]
        gap = float(np.max(np.abs(updated - current)))
        current = updated
        if iteration % 500 == 0:
            logger.debug(f"Relative value iteration {iteration}: gap {gap:.3e}, c {constant:.10f}")
        if gap < tol_fix:
            return current, float(constant), iteration, True
    logger.warning(f"Relative value iteration stopped after {max_iterations} iterations without converging")
    return current, float(constant), max_iterations, False


def ergodic_functions(spec: ProblemSpec, params: Optional[SchemeParams] = None, t_long: float = 20.0,
                      slope: Optional[SlopeEstimate] = None, tol_fix: float = 1e-8, max_iterations: int = 20000,
                      tol_scale: float = 1.0, operator: Optional[DPPOperator] = None) -> ErgodicSolution:
    """
    Ergodic functions by relative value iteration, warm-started from the long-time run

    Args:
        spec: Problem
        params: Scheme parameters
        t_long: Length of the slope run (when slope is not given)
        slope: Precomputed slope estimate
        tol_fix: Sup-norm gap between iterates that ends the iteration
        max_iterations: Iteration cap
        tol_scale: Multiplier of all tolerances
        operator: Prebuilt operator to reuse
    """
    params = params or SchemeParams.for_problem(spec)
    operator = operator or DPPOperator(spec, params)
    slope = slope or ergodic_constant_slope(spec, params, t_long, tol_scale=tol_scale, operator=operator)
    values, c_relative, iterations, converged = relative_value_iteration(
        operator, slope.run.final, tol_fix, max_iterations
    )
    c = c_relative if converged else slope.c
    residuals, lf_residuals = ergodic_residuals(spec, values, c)
    solution = ErgodicSolution(
        c=float(c), values=values, c_slope=slope.c, c_relative_value=c_relative, converged=converged,
        slope_converged=slope.converged, iterations=iterations, residuals=residuals,
        lf_residuals=lf_residuals, tol_e=tolerance_e(spec, params, tol_scale),
        tol_c=tolerance_c(spec, params, tol_scale), slope_run=slope.run,
    )
    logger.info(
        f"Ergodic constant of '{spec.name}': c = {solution.c:.8f} "
        f"(slope {slope.c:.8f}, relative value {c_relative:.8f}, {iterations} iterations)"
    )
    if not solution.residual_ok:
        logger.warning(f"Cell-problem residual {solution.max_residual:.3e} exceeds {solution.tol_e:.3e}")
    return solution


@dataclass
class ConvergenceAudit:
    """
    Distances d(t) = max_k |u_k(., t) + c t - v_k| on a ladder of times

    Attributes:
        rows: (t, d(t)) pairs in increasing t
        c: Ergodic constant used
        reference_time: Time the limit v was extracted at
        tolerance: Bound on d(T_long)
        monotone: d is non-increasing for t >= transient
        passed: monotone and d(T_long) <= tolerance
    """

    rows: List[Tuple[float, float]]
    c: float
    reference_time: float
    tolerance: float
    transient: float
    monotone: bool
    final: float

    @property
    def passed(self) -> bool:
        return self.monotone and self.final <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "rows": [[t, d] for t, d in self.rows], "c": self.c, "reference_time": self.reference_time,
            "tolerance": self.tolerance, "transient": self.transient, "monotone": self.monotone,
            "final": self.final, "passed": self.passed,
        }


def ladder_times(t_long: float, time_step: float, rungs: int = 7) -> List[float]:
    """T_long 2^-j for j < rungs, snapped to the time lattice, plus T_long"""
    times = set()
    for j in range(rungs):
        steps = int(round(t_long * 2.0 ** (-j) / time_step))
        if steps > 0:
            times.add(steps * time_step)
    return sorted(times)


def convergence_audit(spec: ProblemSpec, params: Optional[SchemeParams], es: ErgodicSolution, t_long: float = 20.0,
                      tol_conv: Optional[float] = None, transient: float = 2.0, tol_scale: float = 1.0,
                      operator: Optional[DPPOperator] = None) -> ConvergenceAudit:
    """
    Large-time convergence of u_k(., t) + c t

    The limit v is re-extracted from the same run at 1.5 T_long from the problem's
    initial data, and d(t) is reported on a geometric ladder up to T_long.
    """
    params = params or SchemeParams.for_problem(spec)
    if tol_conv is None:
        tolerance = tolerance_conv(spec, params, tol_scale)
    else:
        tolerance = tol_conv * tol_scale
    c = es.c_relative_value if es.converged else es.c_slope
    reference = int(round(1.5 * t_long / params.time_step)) * params.time_step
    ladder = ladder_times(t_long, params.time_step)
    run = solve(spec.with_horizon(reference), params, record_every=None, record_times=ladder, operator=operator)
    limit = run.final + c * reference

    rows = []
    for t in ladder:
        distance = float(np.max(np.abs(run.at(t) + c * t - limit)))
        rows.append((t, distance))
    slack = 1e-3 * tolerance
    tail = [d for t, d in rows if t >= transient - 1e-12]
    monotone = all(later <= earlier + slack for earlier, later in zip(tail, tail[1:]))
    final = rows[-1][1] if rows else 0.0
    if not monotone:
        logger.warning(f"Convergence distances of '{spec.name}' are not decreasing after t = {transient}")
    logger.debug(f"Convergence ladder of '{spec.name}': {rows}")
    return ConvergenceAudit(rows=rows, c=c, reference_time=reference, tolerance=tolerance,
                            transient=transient, monotone=monotone, final=final)


@dataclass
class ShiftReport:
    """
    Ergodic solutions of V and V + shift compared

    Attributes:
        shift: Constant added to every potential
        slope_error: |c_slope(V + shift) - c_slope(V) - shift|
        relative_value_error: |c_rv(V + shift) - c_rv(V) - shift|
        values_error: max_k |v_k(V + shift) - v_k(V)|
        tolerance: Bound on both constant errors
        values_tolerance: Bound on the ergodic-function change
        converged: Both relative value iterations converged
    """

    shift: float
    slope_error: float
    relative_value_error: float
    values_error: float
    tolerance: float
    values_tolerance: float
    converged: bool

    @property
    def passed(self) -> bool:
        return (self.converged and self.slope_error <= self.tolerance
                and self.relative_value_error <= self.tolerance and self.values_error <= self.values_tolerance)

    def to_dict(self) -> dict:
        return {
            "shift": self.shift, "slope_error": self.slope_error,
            "relative_value_error": self.relative_value_error, "values_error": self.values_error,
            "tolerance": self.tolerance, "values_tolerance": self.values_tolerance,
            "converged": self.converged, "passed": self.passed,
        }


def shift_covariance(base: ErgodicSolution, shifted: ErgodicSolution, shift: float, tolerance: float,
                     values_tolerance: float = 1e-8) -> ShiftReport:
    """Both constants move by exactly shift and the ergodic functions stay put"""
    report = ShiftReport(
        shift=shift,
        slope_error=abs(shifted.c_slope - base.c_slope - shift),
        relative_value_error=abs(shifted.c_relative_value - base.c_relative_value - shift),
        values_error=float(np.max(np.abs(shifted.values - base.values))),
        tolerance=tolerance,
        values_tolerance=values_tolerance,
        converged=base.converged and shifted.converged,
    )
    if not report.passed:
        logger.warning(f"Shift covariance failed for shift {shift:g}: {report.to_dict()}")
    return report
