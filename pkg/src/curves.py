"""
Curves module for the coupled Hamilton-Jacobi solver
Approximate extremal curves of the ergodic functions and the audits run along them
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .diagnostics import format_breakdown
from .ergodic import ErgodicSolution
from .problem import ProblemSpec
from .solver import DPPOperator, SchemeError, SchemeParams, ValueField
from .weights import weight_gap_integral, weights_for

logger = logging.getLogger(__name__)


def curve_slack(spec: ProblemSpec, params: SchemeParams, tol_scale: float = 1.0) -> float:
    """10 (dx + dt) K(0)"""
    return tol_scale * 10.0 * (spec.grid.spacing + params.time_step) * spec.ledger.problem_constant(0.0)


@dataclass
class Curve:
    """
    Discrete backward curve gamma on [-T, 0] ending at gamma(0) = x

    Segment n runs from s_n = -n dt back to s_{n+1} with constant velocity q_n,
    gamma(s) = gamma(s_n) + (s - s_n) q_n. Records along the curve are taken at
    segment midpoints.

    Attributes:
        start: Start state i (0-based)
        step: Time step dt
        points: gamma(s_n), shape (n + 1, dim)
        velocities: q_n, shape (n, dim)
        mixtures: Weights phi^(i)(s_n), shape (n + 1, m)
        defects: Per-step defect of the dynamic programming identity for v, shape (n,)
        lagrangians: L_k(gamma, q) at midpoints, shape (n, m)
        gradients: Centered-difference gradients of v_k at midpoints, shape (n, m, dim)
        boundary_hits: Velocity at the box boundary, shape (n,)
    """

    start: int
    step: float
    points: np.ndarray
    velocities: np.ndarray
    mixtures: np.ndarray
    defects: np.ndarray
    lagrangians: np.ndarray
    gradients: np.ndarray
    boundary_hits: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.velocities)

    @property
    def window(self) -> float:
        return self.steps * self.step

    @property
    def times(self) -> np.ndarray:
        return -self.step * np.arange(self.steps + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return self.points[:-1] - 0.5 * self.step * self.velocities

    @property
    def end_point(self) -> np.ndarray:
        return self.points[-1]

    @property
    def final_mixture(self) -> np.ndarray:
        return self.mixtures[-1]

    @property
    def untrusted(self) -> bool:
        return bool(np.any(self.boundary_hits))

    @property
    def window_defect(self) -> float:
        """Weighted running cost + weighted v at -T + cT - weighted v at 0"""
        return float(np.sum(self.defects))

    def prefix(self, steps: int) -> "Curve":
        """The first steps segments of the curve"""
        return Curve(
            start=self.start, step=self.step, points=self.points[: steps + 1],
            velocities=self.velocities[:steps], mixtures=self.mixtures[: steps + 1],
            defects=self.defects[:steps], lagrangians=self.lagrangians[:steps],
            gradients=self.gradients[:steps], boundary_hits=self.boundary_hits[:steps],
        )

    def concatenate(self, other: "Curve") -> "Curve":
        """This curve followed by a continuation traced from its end point"""
        return Curve(
            start=self.start, step=self.step,
            points=np.concatenate([self.points, other.points[1:]]),
            velocities=np.concatenate([self.velocities, other.velocities]),
            mixtures=np.concatenate([self.mixtures, other.mixtures[1:]]),
            defects=np.concatenate([self.defects, other.defects]),
            lagrangians=np.concatenate([self.lagrangians, other.lagrangians]),
            gradients=np.concatenate([self.gradients, other.gradients]),
            boundary_hits=np.concatenate([self.boundary_hits, other.boundary_hits]),
        )

    def rows(self) -> List[List[float]]:
        """One row per node: s, gamma, q, L_k, weights, defect (last node has no segment data)"""
        m = self.mixtures.shape[1]
        dim = self.points.shape[1]
        rows = []
        for n in range(self.steps + 1):
            segment = n < self.steps
            row = [float(self.times[n])] + list(self.points[n])
            row += list(self.velocities[n]) if segment else [np.nan] * dim
            row += list(self.lagrangians[n]) if segment else [np.nan] * m
            row += list(self.mixtures[n])
            row.append(float(self.defects[n]) if segment else np.nan)
            rows.append(row)
        return rows

    def header(self) -> List[str]:
        m = self.mixtures.shape[1]
        dim = self.points.shape[1]
        names = ["s"] + [f"gamma_{d + 1}" for d in range(dim)] + [f"q_{d + 1}" for d in range(dim)]
        names += [f"L_{k + 1}" for k in range(m)] + [f"phi_{k + 1}" for k in range(m)] + ["defect"]
        return names


def trace_curves(es: ErgodicSolution, points, mixtures, steps: int, spec: ProblemSpec, params: SchemeParams,
                 starts: Optional[Sequence[int]] = None, operator: Optional[DPPOperator] = None) -> List[Curve]:
    """
    Greedy backward extraction from several points and start mixtures at once

    Each step minimizes the one-step functional applied to v, moves every point
    back along its minimizing velocity and advances its mixture by exp(-C dt).
    Curves do not interact; batching only shares the sequential time loop.

    Args:
        es: Ergodic solution
        points: End points gamma(0), shape (P, dim)
        mixtures: Start mixtures, shape (P, m)
        steps: Number of segments
        spec: Problem
        params: Scheme parameters
        starts: Start state recorded on each curve (default: argmax of its mixture)
        operator: Prebuilt operator to reuse

    Returns:
        One Curve per point
    """
    operator = operator or DPPOperator(spec, params)
    grid = spec.grid
    fields = es.values
    dt = operator.window
    point = grid.wrap(np.asarray(points, dtype=float).reshape(-1, grid.dim))
    mixture = np.asarray(mixtures, dtype=float).reshape(len(point), spec.m)
    if starts is None:
        starts = [int(np.argmax(row)) for row in mixture]

    trail, velocities, weights, defects = [point], [], [mixture], []
    for _ in range(steps):
        velocity, value = operator.minimize(point, fields, mixture)
        here = np.stack([grid.interpolate(v, point) for v in fields], axis=-1)
        defects.append(value + es.c * dt - np.sum(mixture * here, axis=-1))
        point = grid.wrap(point - dt * velocity)
        mixture = mixture @ operator.terminal
        trail.append(point)
        velocities.append(velocity)
        weights.append(mixture)

    trail = np.stack(trail)
    weights = np.stack(weights)
    velocities = np.array(velocities).reshape(steps, len(point), grid.dim)
    defects = np.array(defects).reshape(steps, len(point))
    midpoints = trail[:-1] - 0.5 * dt * velocities
    if steps:
        lagrangians = np.stack([lag.evaluate(grid, midpoints, velocities) for lag in spec.lagrangians], axis=-1)
        gradients = np.stack([grid.centered_gradient(v, midpoints) for v in fields], axis=-2)
    else:
        lagrangians = np.zeros((0, len(point), spec.m))
        gradients = np.zeros((0, len(point), spec.m, grid.dim))
    hits = np.any(np.abs(velocities) >= params.velocity_bound * (1.0 - 1e-12), axis=-1)
    return [
        Curve(
            start=int(starts[p]), step=dt, points=trail[:, p], velocities=velocities[:, p],
            mixtures=weights[:, p], defects=defects[:, p], lagrangians=lagrangians[:, p],
            gradients=gradients[:, p], boundary_hits=hits[:, p],
        )
        for p in range(len(point))
    ]


def trace_curve(es: ErgodicSolution, point, mixture, steps: int, spec: ProblemSpec, params: SchemeParams,
                start: int = 0, operator: Optional[DPPOperator] = None) -> Curve:
    """Greedy backward extraction from one point and start mixture"""
    return trace_curves(es, np.reshape(point, (1, -1)), np.reshape(mixture, (1, -1)), steps, spec, params,
                        starts=[start], operator=operator)[0]


def _window_steps(T: float, time_step: float) -> int:
    steps = int(round(T / time_step))
    if abs(steps * time_step - T) > 1e-9 * max(1.0, T):
        raise SchemeError(f"Curve window {T} is not on the time lattice of step {time_step}")
    return steps


def _flag_untrusted(curve: Curve):
    if curve.untrusted:
        logger.warning(
            f"Curve from state {curve.start + 1} hit the velocity bound on {int(curve.boundary_hits.sum())} steps; "
            f"marked untrusted"
        )


def extract_curves(es: ErgodicSolution, points, states: Sequence[int], T: float, spec: ProblemSpec,
                   params: Optional[SchemeParams] = None, operator: Optional[DPPOperator] = None) -> List[Curve]:
    """Approximate extremal curves on [-T, 0], one per (point, start state) pair, traced together"""
    params = params or SchemeParams.for_problem(spec)
    steps = _window_steps(T, params.time_step)
    mixtures = np.eye(spec.m)[list(states)]
    curves = trace_curves(es, points, mixtures, steps, spec, params, starts=states, operator=operator)
    for curve in curves:
        _flag_untrusted(curve)
    return curves


def extract_curve(es: ErgodicSolution, x, i: int, T: float, spec: ProblemSpec,
                  params: Optional[SchemeParams] = None, operator: Optional[DPPOperator] = None) -> Curve:
    """
    Approximate extremal curve on [-T, 0] ending at x for start state i

    Raises:
        SchemeError: T is not on the time lattice
    """
    params = params or SchemeParams.for_problem(spec)
    steps = _window_steps(T, params.time_step)
    unit = np.zeros(spec.m)
    unit[i] = 1.0
    curve = trace_curve(es, x, unit, steps, spec, params, start=i, operator=operator)
    _flag_untrusted(curve)
    return curve


def extend_curve(curve: Curve, es: ErgodicSolution, T: float, spec: ProblemSpec,
                 params: Optional[SchemeParams] = None, operator: Optional[DPPOperator] = None) -> Curve:
    """Continue a curve by a further window T, traced from its end point with its final mixture"""
    params = params or SchemeParams.for_problem(spec)
    steps = _window_steps(T, params.time_step)
    continuation = trace_curve(es, curve.end_point, curve.final_mixture, steps, spec, params,
                               start=curve.start, operator=operator)
    return curve.concatenate(continuation)


def kink_mask(spec: ProblemSpec, field_values: np.ndarray, kink_factor: float = 0.5) -> np.ndarray:
    """Nodes whose second difference exceeds kink_factor dx Lip(v), dilated by one node"""
    grid = spec.grid
    threshold = kink_factor * grid.spacing * grid.lipschitz_constant(field_values)
    mask = np.zeros(grid.shape, dtype=bool)
    for d in range(grid.dim):
        mask |= np.abs(grid.second_difference(field_values, d)) > threshold
    dilated = mask.copy()
    for d in range(grid.dim):
        dilated |= np.roll(mask, 1, axis=d) | np.roll(mask, -1, axis=d)
    return dilated


def _touches(spec: ProblemSpec, mask: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Whether the interpolation stencils of the points or of their centered-difference neighbors hit the mask"""
    grid = spec.grid
    probes = [points]
    for d in range(grid.dim):
        offset = np.zeros(grid.dim)
        offset[d] = grid.spacing
        probes.extend([points + offset, points - offset])
    touched = np.zeros(len(points), dtype=bool)
    for probe in probes:
        stencil = grid.stencil(probe)
        for index, weight in zip(stencil.indices, stencil.weights):
            touched |= mask[index] & (weight > 0.0)
    return touched


@dataclass
class IdentityReport:
    """
    Along-curve Fenchel and stationarity identities

    Attributes:
        fenchel_min: Smallest L + H(p) - p.q over all points and states (never below -1e-12)
        identity_defect: Largest |L + H(p) - p.q| away from kinks
        stationarity_defect: Largest |H(p) + sum_j c_kj v_j - c| away from kinks
        excluded: Points excluded as touching a kink
        total: Points audited
        slack: Bound for the two defects
        strict: Whether the defects are asserted (all states share H and g)
    """

    fenchel_min: float
    identity_defect: float
    stationarity_defect: float
    excluded: int
    total: int
    slack: float
    strict: bool

    FENCHEL_FLOOR = -1e-12
    LOW_CONFIDENCE_FRACTION = 0.2

    @property
    def fenchel_ok(self) -> bool:
        return self.fenchel_min >= self.FENCHEL_FLOOR

    @property
    def low_confidence(self) -> bool:
        return self.total > 0 and self.excluded > self.LOW_CONFIDENCE_FRACTION * self.total

    @property
    def defects_ok(self) -> bool:
        return self.identity_defect <= self.slack and self.stationarity_defect <= self.slack

    @property
    def passed(self) -> bool:
        return self.fenchel_ok and (not self.strict or self.defects_ok)

    def to_dict(self) -> dict:
        return {
            "fenchel_min": self.fenchel_min, "fenchel_ok": self.fenchel_ok,
            "identity_defect": self.identity_defect, "stationarity_defect": self.stationarity_defect,
            "excluded": self.excluded, "total": self.total, "low_confidence": self.low_confidence,
            "slack": self.slack, "strict": self.strict, "passed": self.passed,
        }


def along_curve_identities(curve: Curve, es: ErgodicSolution, spec: ProblemSpec,
                           params: Optional[SchemeParams] = None, kink_factor: float = 0.5,
                           tol_scale: float = 1.0) -> IdentityReport:
    """
    Fenchel equality and cell-problem identity along a curve, with gradients from centered differences

    Points whose stencils touch a kink of any v_k are excluded from the defects
    but not from the Fenchel inequality.
    """
    params = params or SchemeParams.for_problem(spec)
    grid = spec.grid
    midpoints = curve.midpoints
    velocities = curve.velocities
    slack = curve_slack(spec, params, tol_scale)
    if curve.steps == 0:
        return IdentityReport(0.0, 0.0, 0.0, 0, 0, slack, spec.is_symmetric)

    excluded = np.zeros(curve.steps, dtype=bool)
    for k in range(spec.m):
        excluded |= _touches(spec, kink_mask(spec, es.values[k], kink_factor), midpoints)

    coupling_terms = np.tensordot(spec.coupling.entries, es.values, axes=(1, 0))
    fenchel = np.empty((curve.steps, spec.m))
    stationarity = np.empty((curve.steps, spec.m))
    for k, h in enumerate(spec.hamiltonians):
        p = curve.gradients[:, k, :]
        hamiltonian = h.evaluate(grid, midpoints, p)
        fenchel[:, k] = curve.lagrangians[:, k] + hamiltonian - np.sum(p * velocities, axis=-1)
        stationarity[:, k] = hamiltonian + grid.interpolate(coupling_terms[k], midpoints) - es.c

    kept = ~excluded
    report = IdentityReport(
        fenchel_min=float(np.min(fenchel)),
        identity_defect=float(np.max(np.abs(fenchel[kept]))) if kept.any() else 0.0,
        stationarity_defect=float(np.max(np.abs(stationarity[kept]))) if kept.any() else 0.0,
        excluded=int(excluded.sum()),
        total=curve.steps,
        slack=slack,
        strict=spec.is_symmetric,
    )
    if report.low_confidence:
        logger.warning(f"{report.excluded} of {report.total} curve points touch kinks; identities low-confidence")
    if not report.fenchel_ok:
        logger.warning(f"Fenchel inequality violated along the curve: {report.fenchel_min:.3e}")
    return report


@dataclass
class StabilityReport:
    """
    Both sides of the scaling inequality on one curve, and the coupling-term bound

    Attributes:
        left: (u_i(x,T) + cT) - sum_k phi_k(-T) (u_k(gamma(-T), tau) + c tau)
        right: v_i(x) - sum_k phi_k(-T) v_k(gamma(-T)) + (1 + tau T/(T - tau)) A tau/(T - tau)
        modulus_constant: Final A of the linear modulus
        widenings: Number of times A was doubled
        coupling_term: |sum over the curve of dt (phi_i - phi_j)(v_j - v_i)(gamma)|
        coupling_bound: max |v_j - v_i| times the weight-gap integral
    """

    tau: float
    horizon: float
    left: float
    right: float
    slack: float
    modulus_constant: float
    widenings: int
    strict: bool
    coupling_term: float
    coupling_bound: float
    terms: Dict[str, float] = field(default_factory=dict)

    @property
    def inequality_ok(self) -> bool:
        return self.left <= self.right + self.slack

    @property
    def coupling_ok(self) -> bool:
        return self.coupling_term <= self.coupling_bound + 1e-12

    @property
    def passed(self) -> bool:
        return self.coupling_ok and (not self.strict or self.inequality_ok)

    @property
    def margin(self) -> float:
        return self.right + self.slack - self.left

    def breakdown(self) -> str:
        return format_breakdown(f"stability tau={self.tau:g} T={self.horizon:g}", self.terms)

    def to_dict(self) -> dict:
        return {
            "tau": self.tau, "T": self.horizon, "left": self.left, "right": self.right, "slack": self.slack,
            "margin": self.margin, "modulus_constant": self.modulus_constant, "widenings": self.widenings,
            "strict": self.strict, "inequality_ok": self.inequality_ok, "coupling_term": self.coupling_term,
            "coupling_bound": self.coupling_bound, "coupling_ok": self.coupling_ok, "passed": self.passed,
        }


def stability_audit(curve: Curve, vf_short: ValueField, es: ErgodicSolution, tau: float, T: float,
                    spec: ProblemSpec, vf_long: Optional[ValueField] = None,
                    params: Optional[SchemeParams] = None, delta0: float = 0.1, max_widenings: int = 3,
                    tol_scale: float = 1.0) -> StabilityReport:
    """
    Scaling inequality on an extracted curve with a linear modulus A r

    A starts at C_v + 2 max|v_j - v_k|, C_v = max along the curve of |L_k| + |q||p_k|,
    and is doubled up to max_widenings times while the inequality fails.

    Args:
        curve: Curve of window T ending at x, extracted for state curve.start
        vf_short: Value field holding u(., tau) from the problem's initial data
        es: Ergodic solution
        tau: Short time
        T: Long time
        spec: Problem
        vf_long: Value field holding u(., T) (default: vf_short)
        params: Scheme parameters
        delta0: Largest admissible tau / (T - tau)
        max_widenings: Doublings of A allowed before reporting failure
        tol_scale: Multiplier of the slack
    """
    params = params or SchemeParams.for_problem(spec)
    if not 0.0 < tau < T:
        raise SchemeError(f"Stability audit needs 0 < tau < T, got tau={tau}, T={T}")
    ratio = tau / (T - tau)
    if ratio > delta0:
        raise SchemeError(f"tau / (T - tau) = {ratio:.4f} exceeds {delta0}")
    steps = int(round(T / params.time_step))
    if curve.steps < steps:
        raise SchemeError(f"Curve covers {curve.window} but the audit needs {T}")
    curve = curve.prefix(steps)
    vf_long = vf_long or vf_short
    grid = spec.grid
    i = curve.start
    x = curve.points[0]
    y = curve.end_point
    weights = curve.final_mixture
    c = es.c

    u_x = float(grid.interpolate(vf_long.at(T)[i], x))
    u_y = np.array([grid.interpolate(u, y) for u in vf_short.at(tau)])
    v_x = float(grid.interpolate(es.values[i], x))
    v_y = np.array([grid.interpolate(v, y) for v in es.values])
    left = (u_x + c * T) - float(weights @ (u_y + c * tau))
    base_right = v_x - float(weights @ v_y)

    speed = np.linalg.norm(curve.velocities, axis=-1)
    momentum = np.linalg.norm(curve.gradients, axis=-1)
    c_v = float(np.max(np.abs(curve.lagrangians) + speed[:, None] * momentum)) if curve.steps else 0.0
    stacked = es.values.reshape(spec.m, -1)
    spread = float(np.max(stacked.max(axis=0) - stacked.min(axis=0)))
    constant = c_v + 2.0 * spread
    scale = (1.0 + tau * T / (T - tau)) * ratio
    slack = curve_slack(spec, params, tol_scale)

    widenings = 0
    while left > base_right + scale * constant + slack and widenings < max_widenings:
        constant *= 2.0
        widenings += 1
        logger.warning(f"Stability inequality fails at tau={tau}, T={T}; widening modulus constant to {constant:.4g}")
    right = base_right + scale * constant

    system = weights_for(spec.coupling, i)
    mids = -(np.arange(curve.steps) + 0.5) * curve.step
    phi = system.eval(mids)
    v_mid = np.stack([grid.interpolate(v, curve.midpoints) for v in es.values], axis=1) if curve.steps else None
    coupling_term, coupling_bound = 0.0, 0.0
    for j in range(spec.m):
        if j == i or curve.steps == 0:
            continue
        term = abs(float(np.sum(curve.step * (phi[:, i] - phi[:, j]) * (v_mid[:, j] - v_mid[:, i]))))
        gap = weight_gap_integral(system, i, j)
        bound = float(np.max(np.abs(es.values[j] - es.values[i]))) * gap.value
        if term - bound > coupling_term - coupling_bound:
            coupling_term, coupling_bound = term, bound

    terms = {
        "u_i(x,T) + cT": u_x + c * T,
        "weighted u(y,tau) + c tau": float(weights @ (u_y + c * tau)),
        "v_i(x)": v_x,
        "weighted v(y)": float(weights @ v_y),
        "C_v": c_v,
        "max |v_j - v_k|": spread,
        "A": constant,
        "modulus term": scale * constant,
        "slack": slack,
        "left": left,
        "right": right,
    }
    report = StabilityReport(
        tau=tau, horizon=T, left=left, right=right, slack=slack, modulus_constant=constant,
        widenings=widenings, strict=spec.is_symmetric, coupling_term=coupling_term,
        coupling_bound=coupling_bound, terms=terms,
    )
    if not report.inequality_ok:
        level = logging.WARNING if report.strict else logging.INFO
        logger.log(level, f"Stability inequality violated:\n{report.breakdown()}")
    return report


@dataclass
class LipschitzReport:
    """Empirical time and space difference quotients of a value field"""
    time_quotient: float
    space_quotient: float
    c1: float
    slack: float
    worst_excess: float

    @property
    def passed(self) -> bool:
        return self.worst_excess <= 0.0

    def to_dict(self) -> dict:
        return {"time_quotient": self.time_quotient, "space_quotient": self.space_quotient,
                "c1": self.c1, "slack": self.slack, "worst_excess": self.worst_excess, "passed": self.passed}


def lipschitz_audit(vf: ValueField, spec: ProblemSpec, slack: Optional[float] = None,
                    tol_scale: float = 1.0) -> LipschitzReport:
    """
    Check |u_k(., t + h) - u_k(., t)| <= C_1 h + slack over all recorded pairs (t, t + h)

    The slack defaults to 2 (dx + dt). The spatial quotient is reported only.
    """
    if slack is None:
        slack = 2.0 * (spec.grid.spacing + vf.time_step)
    slack *= tol_scale
    c1 = spec.ledger.c1
    stacked = vf.as_array()
    times = vf.time_array()
    time_quotient = 0.0
    worst = -np.inf
    for a in range(len(times)):
        differences = np.max(np.abs(stacked[a + 1:] - stacked[a]).reshape(len(times) - a - 1, -1), axis=1) \
            if a + 1 < len(times) else np.zeros(0)
        gaps = times[a + 1:] - times[a]
        if len(gaps):
            time_quotient = max(time_quotient, float(np.max(differences / gaps)))
            worst = max(worst, float(np.max(differences - c1 * gaps - slack)))
    space = max(spec.grid.lipschitz_constant(values[k]) for values in vf.values for k in range(values.shape[0]))
    report = LipschitzReport(time_quotient, float(space), float(c1), float(slack),
                             float(worst) if np.isfinite(worst) else -slack)
    if not report.passed:
        logger.warning(f"Time-Lipschitz bound exceeded by {report.worst_excess:.3e} (C_1 = {c1:.4g})")
    return report
