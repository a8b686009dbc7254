"""
Solver module for the coupled Hamilton-Jacobi solver
Value functions of the coupled system by a semi-Lagrangian dynamic programming scheme,
with a monotone Lax-Friedrichs finite-difference scheme as an independent oracle
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .diagnostics import format_failure_report
from .hamiltonians import lax_friedrichs
from .problem import ProblemSpec
from .torus import TorusGrid
from .weights import switching_matrix

logger = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class SchemeError(Exception):
    """
    Enhanced scheme exception with the state of the computation

    Captures the fields, time, step and parameters at the point of failure and
    renders them through the diagnostics report.
    """

    def __init__(self, message: str, time: Optional[float] = None, step: Optional[int] = None,
                 fields=None, params=None, original_exception: Optional[Exception] = None):
        """
        Initialize SchemeError with debugging context

        Args:
            message: Error message
            time: Time at which the failure happened
            step: Step index at which the failure happened
            fields: Per-state fields at the failure
            params: SchemeParams in use
            original_exception: The original exception that was caught
        """
        super().__init__(message)
        self.time = time
        self.step = step
        self.fields = fields
        self.params = params
        self.original_exception = original_exception
        self.detailed_report = None

        if fields is not None or params is not None:
            try:
                self.detailed_report = format_failure_report(
                    original_exception or self, fields, params, time, step
                )
            except Exception as e:
                logger.error(f"Failed to generate failure report: {e}")
                self.detailed_report = None

    def __str__(self):
        """Return detailed failure report if available, otherwise basic message"""
        if self.detailed_report:
            return self.detailed_report
        return super().__str__()


@dataclass(frozen=True)
class SchemeParams:
    """
    Discretization parameters shared by both schemes

    Attributes:
        time_step: Time step dt of the dynamic programming scheme
        velocity_bound: Half-width Q_max of the velocity box
        velocity_samples: Sampled velocities per axis (odd, >= 3)
        refine_rounds: Golden-section refinement rounds after the sampled search
        golden_iterations: Golden-section iterations per axis and round
        quadrature_substeps: Midpoint substeps of the running-cost integral per step
        dissipation: Per-state Lax-Friedrichs dissipation caps
        lf_time_step: Finite-difference time step (None picks the largest stable one)
        lf_local_dissipation: Local (Rusanov) dissipation capped by the per-state caps; False uses the caps everywhere
        boundary_warn_fraction: Fraction of nodes at the velocity-box boundary that triggers a warning
    """

    time_step: float
    velocity_bound: float
    velocity_samples: int = 65
    refine_rounds: int = 3
    golden_iterations: int = 6
    quadrature_substeps: int = 1
    dissipation: tuple = ()
    lf_time_step: Optional[float] = None
    lf_local_dissipation: bool = True
    boundary_warn_fraction: float = 0.01

    def __post_init__(self):
        if self.time_step <= 0.0:
            raise SchemeError(f"Time step must be positive, got {self.time_step}")
        if self.velocity_bound <= 0.0:
            raise SchemeError(f"Velocity bound must be positive, got {self.velocity_bound}")
        if self.velocity_samples < 3 or self.velocity_samples % 2 == 0:
            raise SchemeError(f"Velocity samples must be odd and >= 3, got {self.velocity_samples}")
        if self.refine_rounds < 0 or self.quadrature_substeps < 1:
            raise SchemeError("Refinement rounds must be >= 0 and quadrature substeps >= 1")

    @classmethod
    def for_problem(cls, spec: ProblemSpec, **overrides) -> "SchemeParams":
        """Parameters taken from a problem and its constants ledger"""
        settings = dict(
            time_step=spec.time_step,
            velocity_bound=spec.velocity_bound,
            velocity_samples=spec.velocity_samples,
            refine_rounds=spec.refine_rounds,
            dissipation=tuple(spec.ledger.dissipation),
        )
        settings.update(overrides)
        return cls(**settings)

    @property
    def velocity_spacing(self) -> float:
        return 2.0 * self.velocity_bound / (self.velocity_samples - 1)


@dataclass
class ValueField:
    """
    Per-state value functions on the grid at a sequence of recorded times

    Attributes:
        grid: Spatial grid
        times: Increasing recorded times, starting at 0
        values: One array of shape (m, *grid.shape) per recorded time
        time_step: Step of the lattice the times lie on
        boundary_fraction: Largest fraction of nodes whose optimal velocity hit the box boundary
    """

    grid: TorusGrid
    times: List[float] = field(default_factory=list)
    values: List[np.ndarray] = field(default_factory=list)
    time_step: float = 0.0
    boundary_fraction: float = 0.0

    @property
    def m(self) -> int:
        return self.values[0].shape[0]

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    @property
    def final_time(self) -> float:
        return self.times[-1]

    def record(self, time: float, fields: np.ndarray):
        self.times.append(float(time))
        self.values.append(np.array(fields, dtype=float))

    def index_of(self, time: float) -> int:
        """Index of a recorded time, matched to within a millionth of a step"""
        times = np.asarray(self.times)
        index = int(np.argmin(np.abs(times - time)))
        if abs(times[index] - time) > 1e-6 * max(self.time_step, 1e-12):
            raise SchemeError(f"Time {time} is not on the recorded lattice")
        return index

    def at(self, time: float) -> np.ndarray:
        return self.values[self.index_of(time)]

    def time_array(self) -> np.ndarray:
        return np.asarray(self.times)

    def as_array(self) -> np.ndarray:
        """All recorded values, shape (n_times, m, *grid.shape)"""
        return np.stack(self.values)


@dataclass
class StepOutcome:
    """Result of one application of the dynamic programming operator"""
    values: np.ndarray
    velocities: np.ndarray
    boundary_fraction: float


class DPPOperator:
    """
    One window of the dynamic programming principle with straight-segment curves

    For a start mixture mu (a probability row over states; e_i for state i) the
    functional of velocity q at x is
        sum_j sum_k (mu A_j)_k L_k(x - s_j q, q) + sum_k (mu B)_k u_k(x - h q)
    with A_j the midpoint weights (h/S) exp(-C s_j) at s_j = (j + 1/2) h / S and
    B = exp(-C h). The minimum over the velocity box is found by sampling a
    regular grid of velocities and refining with golden-section searches.
    """

    def __init__(self, spec: ProblemSpec, params: SchemeParams, window: Optional[float] = None,
                 substeps: Optional[int] = None):
        """
        Initialize operator

        Args:
            spec: Problem
            params: Scheme parameters
            window: Window length h (default: the time step)
            substeps: Midpoint substeps for the running cost (default: params.quadrature_substeps)
        """
        self.spec = spec
        self.params = params
        self.grid = spec.grid
        self.m = spec.m
        self.window = params.time_step if window is None else float(window)
        self.substeps = params.quadrature_substeps if substeps is None else int(substeps)
        self.lagrangians = spec.lagrangians
        self.potentials = np.stack([h.potential for h in spec.hamiltonians])

        h, count = self.window, self.substeps
        self.offsets = (np.arange(count) + 0.5) * h / count
        self.running = np.stack([(h / count) * switching_matrix(spec.coupling, -s) for s in self.offsets])
        self.terminal = switching_matrix(spec.coupling, -h)

        axis = np.linspace(-params.velocity_bound, params.velocity_bound, params.velocity_samples)
        axis[params.velocity_samples // 2] = 0.0
        mesh = np.meshgrid(*([axis] * self.grid.dim), indexing="ij")
        # C order keeps argmin's first hit at the lexicographically smallest velocity
        self.velocities = np.stack([g.ravel() for g in mesh], axis=-1)
        self._node_cache = None

    def _kinetic(self, velocities: np.ndarray) -> np.ndarray:
        """Kinetic parts T*_k(q) of every Lagrangian, shape (m, ...)"""
        return np.stack([lagrangian.kinetic(velocities) for lagrangian in self.lagrangians])

    def evaluate(self, points, velocities, fields, mixtures) -> np.ndarray:
        """
        Functional value for arbitrary points, velocities and start mixtures

        Args:
            points: (..., dim)
            velocities: (..., dim)
            fields: Terminal fields, shape (m, *grid.shape)
            mixtures: (..., m) probability rows

        Returns:
            Array of shape (...)
        """
        points = np.asarray(points, dtype=float)
        velocities = np.asarray(velocities, dtype=float)
        mixtures = np.asarray(mixtures, dtype=float)
        sub_weights = np.einsum("...i,sik->s...k", mixtures, self.running)
        kinetic = self._kinetic(velocities)
        total_weights = sub_weights.sum(axis=0)
        value = np.einsum("...k,k...->...", total_weights, kinetic)
        for j, offset in enumerate(self.offsets):
            stencil = self.grid.stencil(points - offset * velocities)
            potential = self.grid.apply_stencil(self.potentials, stencil, leading=1)
            value = value - np.einsum("...k,k...->...", sub_weights[j], potential)
        departure = self.grid.apply_stencil(fields, self.grid.stencil(points - self.window * velocities), leading=1)
        terminal = mixtures @ self.terminal
        return value + np.einsum("...k,k...->...", terminal, departure)

    def _node_tables(self):
        """Running cost (m, nodes, V) of every sampled velocity and the departure stencils"""
        if self._node_cache is None:
            nodes = self.grid.node_points()
            points = np.broadcast_to(nodes[:, None, :], (len(nodes), len(self.velocities), self.grid.dim))
            velocities = np.broadcast_to(self.velocities[None, :, :], points.shape)
            kinetic = self._kinetic(self.velocities)
            cost = np.broadcast_to(
                (self.running.sum(axis=0) @ kinetic)[:, None, :], (self.m,) + points.shape[:2]
            ).copy()
            for j, offset in enumerate(self.offsets):
                stencil = self.grid.stencil(points - offset * velocities)
                potential = self.grid.apply_stencil(self.potentials, stencil, leading=1)
                cost -= np.einsum("ik,kpv->ipv", self.running[j], potential)
            departure = self.grid.stencil(points - self.window * velocities)
            self._node_cache = (nodes, cost, departure)
            logger.debug(f"Cached DPP tables for {len(nodes)} nodes x {len(self.velocities)} velocities")
        return self._node_cache

    def _refine(self, points, mixtures, fields, velocity, value):
        """Golden-section refinement per axis around the sampled minimizer, keeping strict improvements"""
        best_q = np.array(velocity, dtype=float)
        best_v = np.array(value, dtype=float)
        bound = self.params.velocity_bound
        for round_index in range(self.params.refine_rounds):
            width = self.params.velocity_spacing * 2.0 ** (-round_index)
            for d in range(self.grid.dim):
                base = best_q.copy()
                lower = np.maximum(base[..., d] - width, -bound)
                upper = np.minimum(base[..., d] + width, bound)

                def probe(coordinate):
                    trial = base.copy()
                    trial[..., d] = coordinate
                    trial_value = self.evaluate(points, trial, fields, mixtures)
                    better = trial_value < best_v
                    best_v[better] = trial_value[better]
                    best_q[better] = trial[better]
                    return trial_value

                x1 = upper - GOLDEN * (upper - lower)
                x2 = lower + GOLDEN * (upper - lower)
                f1, f2 = probe(x1), probe(x2)
                for _ in range(self.params.golden_iterations):
                    left = f1 <= f2
                    lower, upper = np.where(left, lower, x1), np.where(left, x2, upper)
                    new_x1 = np.where(left, upper - GOLDEN * (upper - lower), x2)
                    new_x2 = np.where(left, x1, lower + GOLDEN * (upper - lower))
                    sample = probe(np.where(left, new_x1, new_x2))
                    f1, f2 = np.where(left, sample, f2), np.where(left, f1, sample)
                    x1, x2 = new_x1, new_x2
        return best_q, best_v

    def _boundary_hits(self, velocities) -> np.ndarray:
        bound = self.params.velocity_bound
        return np.any(np.abs(velocities) >= bound * (1.0 - 1e-12), axis=-1)

    def step(self, fields) -> StepOutcome:
        """
        Apply the operator at every node for every start state

        Args:
            fields: Terminal fields u(., t - h), shape (m, *grid.shape)

        Returns:
            StepOutcome with values (m, *grid.shape) and minimizing velocities (m, *grid.shape, dim)
        """
        fields = np.asarray(fields, dtype=float)
        nodes, cost, departure = self._node_tables()
        total = cost + np.einsum("ik,kpv->ipv", self.terminal, self.grid.apply_stencil(fields, departure, leading=1))
        best = np.argmin(total, axis=2)
        value = np.take_along_axis(total, best[..., None], axis=2)[..., 0]
        velocity = self.velocities[best]
        if self.params.refine_rounds:
            points = np.broadcast_to(nodes[None], (self.m,) + nodes.shape)
            mixtures = np.broadcast_to(np.eye(self.m)[:, None, :], (self.m, len(nodes), self.m))
            velocity, value = self._refine(points, mixtures, fields, velocity, value)
        hits = self._boundary_hits(velocity)
        shape = (self.m,) + self.grid.shape
        return StepOutcome(
            values=value.reshape(shape),
            velocities=velocity.reshape(shape + (self.grid.dim,)),
            boundary_fraction=float(hits.mean()),
        )

    def minimize(self, points, fields, mixtures):
        """
        Minimize the functional at arbitrary points for given start mixtures

        Args:
            points: (P, dim)
            fields: Terminal fields (m, *grid.shape)
            mixtures: (P, m)

        Returns:
            (velocities (P, dim), values (P,))
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        mixtures = np.atleast_2d(np.asarray(mixtures, dtype=float))
        count, samples = len(points), len(self.velocities)
        grid_points = np.broadcast_to(points[:, None, :], (count, samples, self.grid.dim))
        grid_velocities = np.broadcast_to(self.velocities[None], grid_points.shape)
        grid_mixtures = np.broadcast_to(mixtures[:, None, :], (count, samples, self.m))
        values = self.evaluate(grid_points, grid_velocities, fields, grid_mixtures)
        best = np.argmin(values, axis=1)
        value = values[np.arange(count), best]
        velocity = self.velocities[best]
        if self.params.refine_rounds:
            velocity, value = self._refine(points, mixtures, fields, velocity, value)
        return velocity, value


def _check_finite(values, time, step, params):
    if not np.all(np.isfinite(values)):
        raise SchemeError("Scheme produced non-finite values", time=time, step=step,
                          fields=values, params=params)


def _lattice_steps(horizon: float, time_step: float, params=None) -> int:
    steps = int(round(horizon / time_step))
    if abs(steps * time_step - horizon) > 1e-9 * max(1.0, horizon):
        raise SchemeError(f"Horizon {horizon} is not on the time lattice of step {time_step}", params=params)
    return steps


def _should_record(step: int, steps: int, record_every: Optional[int], record_steps) -> bool:
    if step == steps or step == 0:
        return True
    if record_steps is not None:
        return step in record_steps
    return record_every is not None and step % record_every == 0


def step_dpp(fields, spec: ProblemSpec, params: SchemeParams,
             operator: Optional[DPPOperator] = None) -> np.ndarray:
    """
    One dynamic programming step: per-state fields at t - dt to fields at t

    Returns:
        Array of shape (m, *grid.shape)
    """
    operator = operator or DPPOperator(spec, params)
    outcome = operator.step(fields)
    if outcome.boundary_fraction > params.boundary_warn_fraction:
        logger.warning(
            f"Optimal velocity at the box boundary on {100 * outcome.boundary_fraction:.1f}% of nodes; "
            f"velocity bound {params.velocity_bound:.4g} may truncate the infimum"
        )
    return outcome.values


def solve(spec: ProblemSpec, params: Optional[SchemeParams] = None, record_every: Optional[int] = 1,
          record_times: Optional[Sequence[float]] = None, operator: Optional[DPPOperator] = None) -> ValueField:
    """
    Value functions by iterating the dynamic programming step from the initial data

    Args:
        spec: Problem (horizon and initial data are taken from it)
        params: Scheme parameters (default: from the problem)
        record_every: Record every n-th step (the first and last are always recorded)
        record_times: Record exactly these lattice times instead
        operator: Prebuilt operator to reuse

    Returns:
        ValueField on the recorded times
    """
    params = params or SchemeParams.for_problem(spec)
    steps = _lattice_steps(spec.horizon, params.time_step, params)
    record_steps = None
    if record_times is not None:
        record_steps = {_lattice_steps(t, params.time_step, params) for t in record_times}

    fields = np.stack(spec.initial_data)
    result = ValueField(grid=spec.grid, time_step=params.time_step)
    result.record(0.0, fields)
    if steps == 0:
        return result

    operator = operator or DPPOperator(spec, params)
    logger.debug(f"Solving '{spec.name}' for {steps} steps of {params.time_step:.6g}")
    for step in range(1, steps + 1):
        outcome = operator.step(fields)
        fields = outcome.values
        _check_finite(fields, step * params.time_step, step, params)
        result.boundary_fraction = max(result.boundary_fraction, outcome.boundary_fraction)
        if _should_record(step, steps, record_every, record_steps):
            result.record(step * params.time_step, fields)
    if result.boundary_fraction > params.boundary_warn_fraction:
        logger.warning(
            f"Optimal velocity at the box boundary on up to {100 * result.boundary_fraction:.1f}% of nodes; "
            f"velocity bound {params.velocity_bound:.4g} may truncate the infimum"
        )
    return result


def lf_substeps(spec: ProblemSpec, params: SchemeParams) -> int:
    """
    Finite-difference substeps per dynamic programming step

    Raises:
        SchemeError: a configured finite-difference step violates the CFL condition
    """
    theta = max(params.dissipation) if params.dissipation else max(spec.ledger.dissipation)
    rate = theta * spec.grid.dim / spec.grid.spacing + spec.coupling.max_rate
    if params.lf_time_step is None:
        return max(1, math.ceil(params.time_step * rate / 0.5 - 1e-12))
    if params.lf_time_step * rate > 0.5 + 1e-12:
        raise SchemeError(
            f"CFL condition violated: dt_lf * (theta * dim / dx + max c_kk) = "
            f"{params.lf_time_step * rate:.4f} > 1/2",
            params=params,
        )
    substeps = int(round(params.time_step / params.lf_time_step))
    if substeps < 1 or abs(substeps * params.lf_time_step - params.time_step) > 1e-9 * params.time_step:
        raise SchemeError(
            f"Finite-difference step {params.lf_time_step} does not divide the time step {params.time_step}",
            params=params,
        )
    return substeps


def solve_lf(spec: ProblemSpec, params: Optional[SchemeParams] = None, record_every: Optional[int] = 1,
             record_times: Optional[Sequence[float]] = None) -> ValueField:
    """
    Value functions by explicit Euler with the Lax-Friedrichs numerical Hamiltonian

    u_k <- u_k - dt_lf (H^_k(x, D-u_k, D+u_k) + sum_j c_kj u_j), recorded on the
    lattice of the dynamic programming time step. The dissipation is the local
    one unless params.lf_local_dissipation is False, then the constant per-state cap.
    """
    params = params or SchemeParams.for_problem(spec)
    dissipation = params.dissipation or spec.ledger.dissipation
    substeps = lf_substeps(spec, params)
    small_step = params.time_step / substeps
    steps = _lattice_steps(spec.horizon, params.time_step, params)
    record_steps = None
    if record_times is not None:
        record_steps = {_lattice_steps(t, params.time_step, params) for t in record_times}

    grid = spec.grid
    coupling = spec.coupling.entries
    fields = np.stack(spec.initial_data).astype(float)
    result = ValueField(grid=grid, time_step=params.time_step)
    result.record(0.0, fields)
    logger.debug(f"Lax-Friedrichs solve of '{spec.name}': {steps} steps x {substeps} substeps")
    for step in range(1, steps + 1):
        for _ in range(substeps):
            rates = np.tensordot(coupling, fields, axes=(1, 0))
            for k, h in enumerate(spec.hamiltonians):
                backward, forward = grid.one_sided_gradients(fields[k])
                rates[k] += lax_friedrichs(h, backward, forward, dissipation[k], local=params.lf_local_dissipation)
            fields = fields - small_step * rates
        _check_finite(fields, step * params.time_step, step, params)
        if _should_record(step, steps, record_every, record_steps):
            result.record(step * params.time_step, fields)
    return result


@dataclass
class CrosscheckReport:
    """
    Sup-norm distance between the two schemes

    Attributes:
        sup_difference: Distance at the horizon
        bound: 5 (dx + dt) K(T) times the tolerance scale
        passed: sup_difference <= bound
        rows: (t, distance at t) over the recorded times
    """
    sup_difference: float
    bound: float
    passed: bool
    rows: List[Tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"sup_difference": self.sup_difference, "bound": self.bound, "passed": self.passed}


def crosscheck_bound(spec: ProblemSpec, params: SchemeParams, tol_scale: float = 1.0) -> float:
    """5 (dx + dt) K(T)"""
    return tol_scale * 5.0 * (spec.grid.spacing + params.time_step) * spec.ledger.problem_constant(spec.horizon)


def crosscheck(spec: ProblemSpec, params: Optional[SchemeParams] = None, tol_scale: float = 1.0,
               record_every: Optional[int] = None) -> CrosscheckReport:
    """Compare solve and solve_lf on the recorded times; the verdict is taken at the horizon"""
    params = params or SchemeParams.for_problem(spec)
    semi_lagrangian = solve(spec, params, record_every=record_every)
    finite_difference = solve_lf(spec, params, record_every=record_every)
    rows = [
        (t, float(np.max(np.abs(a - b))))
        for t, a, b in zip(semi_lagrangian.times, semi_lagrangian.values, finite_difference.values)
    ]
    difference = rows[-1][1]
    bound = crosscheck_bound(spec, params, tol_scale)
    logger.debug(f"Crosscheck of '{spec.name}': sup difference {difference:.3e}, bound {bound:.3e}")
    return CrosscheckReport(difference, bound, difference <= bound, rows)


def path_cost(spec: ProblemSpec, x, start: int, velocities, durations: Sequence[float], fields,
              time_step: Optional[float] = None) -> np.ndarray:
    """
    Weighted cost of piecewise-linear curves ending at x

    Segment n runs backward in time with constant velocity velocities[..., n, :]
    for durations[n]. The running cost uses composite midpoint quadrature with
    substeps no longer than time_step; the terminal cost is the weighted fields at
    the curve's far end.

    Args:
        spec: Problem
        x: End point (dim,)
        start: Start state (0-based)
        velocities: (..., n_segments, dim)
        durations: Segment lengths
        fields: Terminal fields (m, *grid.shape)
        time_step: Largest quadrature substep (default: the problem's time step)

    Returns:
        Costs of shape velocities.shape[:-2]
    """
    velocities = np.asarray(velocities, dtype=float)
    grid = spec.grid
    time_step = time_step or spec.time_step
    potentials = np.stack([h.potential for h in spec.hamiltonians])
    kinetic = np.stack([lag.kinetic(velocities) for lag in spec.lagrangians])
    position = np.broadcast_to(np.asarray(x, dtype=float), velocities.shape[:-2] + (grid.dim,))
    elapsed = 0.0
    cost = np.zeros(velocities.shape[:-2])
    for n, duration in enumerate(durations):
        q = velocities[..., n, :]
        count = max(1, math.ceil(duration / time_step - 1e-12))
        sub = duration / count
        for j in range(count):
            local = (j + 0.5) * sub
            weights = switching_matrix(spec.coupling, -(elapsed + local))[start]
            point = position - local * q
            potential = grid.apply_stencil(potentials, grid.stencil(point), leading=1)
            cost += sub * np.einsum("k,k...->...", weights, kinetic[:, ..., n] - potential)
        position = position - duration * q
        elapsed += duration
    terminal = switching_matrix(spec.coupling, -elapsed)[start]
    departure = grid.apply_stencil(np.asarray(fields, dtype=float), grid.stencil(position), leading=1)
    return cost + np.einsum("k,k...->...", terminal, departure)


def direct_minimization(spec: ProblemSpec, x, start: int, t: float, fields, samples: int = 33,
                        segments: int = 2, time_step: Optional[float] = None) -> float:
    """Brute-force minimum of path_cost over piecewise-linear curves with equal-length segments"""
    axis = np.linspace(-spec.velocity_bound, spec.velocity_bound, samples)
    per_segment = np.stack([g.ravel() for g in np.meshgrid(*([axis] * spec.grid.dim), indexing="ij")], axis=-1)
    choices = np.meshgrid(*([np.arange(len(per_segment))] * segments), indexing="ij")
    picks = np.stack([c.ravel() for c in choices], axis=-1)
    velocities = per_segment[picks]
    costs = path_cost(spec, x, start, velocities, [t / segments] * segments, fields, time_step)
    return float(np.min(costs))


@dataclass
class WindowReport:
    """Outcome of re-minimizing the dynamic programming principle over a longer window"""
    window: float
    time: float
    max_discrepancy: float
    bound: float
    probes: List[int]
    direct_cost: Optional[float] = None
    direct_slack: Optional[float] = None
    direct_ok: Optional[bool] = None

    @property
    def passed(self) -> bool:
        return self.max_discrepancy <= self.bound and self.direct_ok is not False

    def to_dict(self) -> dict:
        return {
            "window": self.window, "time": self.time, "max_discrepancy": self.max_discrepancy,
            "bound": self.bound, "probes": len(self.probes), "direct_cost": self.direct_cost,
            "direct_slack": self.direct_slack, "direct_ok": self.direct_ok, "passed": self.passed,
        }


def one_step_bound(spec: ProblemSpec, fields, time_step: float) -> float:
    """(dx^2 / 8) max |D^2 u| + dt^2 K(0)"""
    grid = spec.grid
    curvature = max(
        float(np.max(np.abs(grid.second_difference(f, d)))) for f in fields for d in range(grid.dim)
    )
    return curvature / 8.0 + time_step ** 2 * spec.ledger.problem_constant(0.0)


def dpp_window_check(vf: ValueField, spec: ProblemSpec, params: SchemeParams, h: float, t: float,
                     n_probe: int = 32, seed: int = 0, direct: bool = False) -> WindowReport:
    """
    Re-minimize the dynamic programming principle over a window of length h

    The operator for window h runs from the recorded fields at t - h; the
    discrepancy with the recorded fields at t is measured at n_probe random
    nodes. A window of one step reproduces the scheme exactly. With direct=True
    and h = t, two-segment curves from the initial data are also minimized by
    brute force at the probes; their cost bounds the value from above.
    """
    if not (0.0 < h <= t + 1e-12):
        raise SchemeError(f"Window {h} must lie in (0, {t}]")
    ratio = _lattice_steps(h, params.time_step, params)
    operator = DPPOperator(spec, params, window=h, substeps=ratio * params.quadrature_substeps)
    before = vf.at(t - h)
    after = vf.at(t)
    recomputed = operator.step(before).values

    rng = np.random.default_rng(seed)
    probes = sorted(int(p) for p in rng.choice(spec.grid.size, size=min(n_probe, spec.grid.size), replace=False))
    flat_recomputed = recomputed.reshape(spec.m, -1)[:, probes]
    flat_after = after.reshape(spec.m, -1)[:, probes]
    discrepancy = float(np.max(np.abs(flat_recomputed - flat_after)))
    if ratio == 1:
        bound = 0.0
    else:
        bound = 3.0 * one_step_bound(spec, after, params.time_step)

    report = WindowReport(window=h, time=t, max_discrepancy=discrepancy, bound=bound, probes=probes)
    if direct:
        nodes = spec.grid.node_points()
        slack = 5.0 * (spec.grid.spacing + params.time_step) * spec.ledger.problem_constant(t)
        worst = np.inf
        for p in probes[: min(len(probes), 4)]:
            for i in range(spec.m):
                cost = direct_minimization(spec, nodes[p], i, t, vf.values[0], time_step=params.time_step)
                worst = min(worst, cost - after.reshape(spec.m, -1)[i, p])
        report.direct_cost = float(worst)
        report.direct_slack = float(slack)
        report.direct_ok = bool(worst >= -slack)
    logger.debug(f"DPP window check h={h}, t={t}: discrepancy {discrepancy:.3e}, bound {bound:.3e}")
    return report


@dataclass
class ConvergenceStudy:
    """Sup differences between successive resolutions of the same problem"""
    points: List[int]
    differences: List[float]

    @property
    def ratio(self) -> float:
        if len(self.differences) < 2 or self.differences[1] == 0.0:
            return math.nan
        return self.differences[0] / self.differences[1]

    def to_dict(self) -> dict:
        return {"points": self.points, "differences": self.differences, "ratio": self.ratio}


def self_convergence(build: Callable[[int], ProblemSpec], points: int, levels: int = 3,
                     params_factory: Optional[Callable[[ProblemSpec], SchemeParams]] = None) -> ConvergenceStudy:
    """
    Solve on N, 2N, 4N, ... points and compare each level with the next on the coarse nodes

    Args:
        build: Problem builder for a grid size (the builder sets the time step)
        points: Coarsest grid size
        levels: Number of resolutions
        params_factory: Scheme parameters for each problem (default: from the problem)
    """
    finals = []
    sizes = [points * 2 ** level for level in range(levels)]
    for size in sizes:
        spec = build(size)
        params = params_factory(spec) if params_factory else SchemeParams.for_problem(spec)
        finals.append(solve(spec, params, record_every=None).final)
        logger.debug(f"Self-convergence level N={size} done")
    differences = []
    for coarse, fine in zip(finals, finals[1:]):
        sub = (slice(None),) + (slice(None, None, 2),) * (fine.ndim - 1)
        differences.append(float(np.max(np.abs(coarse - fine[sub]))))
    return ConvergenceStudy(points=sizes, differences=differences)
