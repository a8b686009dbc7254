"""
Chain module for the coupled Hamilton-Jacobi solver
Monte Carlo simulation of the backward switching chain, used as a stochastic oracle for the weights
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .coupling import CouplingMatrix
from .torus import TorusGrid
from .weights import switching_matrix

logger = logging.getLogger(__name__)


class ChainError(Exception):
    """Raised for absorbing states or invalid simulation horizons"""
    pass


@dataclass(frozen=True)
class ChainSample:
    """
    One backward path of the switching chain on [-t, 0]

    Attributes:
        start: State at time 0
        horizon: Length t of the window
        jump_times: Jump times in (-t, 0), decreasing
        states: states[0] is the start; states[n] holds after the n-th jump going back in time
        seed: Seed the path was drawn with
    """

    start: int
    horizon: float
    jump_times: Tuple[float, ...]
    states: Tuple[int, ...]
    seed: int

    def state_at(self, s: float) -> int:
        """State occupied at time s in [-t, 0]"""
        jumps = sum(1 for time in self.jump_times if time >= s)
        return self.states[jumps]

    @property
    def final_state(self) -> int:
        """State at time -t"""
        return self.states[-1]


def _check_rates(coupling: CouplingMatrix):
    rates = coupling.rates
    absorbing = np.flatnonzero(rates <= 0.0)
    if len(absorbing):
        raise ChainError(f"State {absorbing[0] + 1} is absorbing (c_kk = {rates[absorbing[0]]})")
    return rates


def sample_chain(coupling: CouplingMatrix, start: int, t: float, seed: int) -> ChainSample:
    """
    Simulate the backward chain from state start at time 0 down to time -t

    Holding times in state k are exponential with rate c_kk; a jump goes to
    j != k with probability -c_kj / c_kk. The path is drawn forward on [0, t]
    and flipped in time.
    """
    if t <= 0.0:
        raise ChainError(f"Simulation horizon must be positive, got {t}")
    rates = _check_rates(coupling)
    rng = np.random.default_rng(seed)
    state = start
    clock = rng.exponential(1.0 / rates[state])
    times, states = [], [state]
    while clock < t:
        state = int(rng.choice(coupling.m, p=coupling.jump_probabilities(state)))
        times.append(-clock)
        states.append(state)
        clock += rng.exponential(1.0 / rates[state])
    return ChainSample(start=start, horizon=float(t), jump_times=tuple(times), states=tuple(states), seed=seed)


def _cumulative_jumps(coupling: CouplingMatrix) -> np.ndarray:
    """Row-wise cumulative jump probabilities, forced to 1 from the last reachable state on"""
    cumulative = np.cumsum(np.stack([coupling.jump_probabilities(k) for k in range(coupling.m)]), axis=1)
    for k in range(coupling.m):
        last = np.flatnonzero(coupling.jump_probabilities(k) > 0.0)[-1]
        cumulative[k, last:] = 1.0
    return cumulative


def sample_final_states(coupling: CouplingMatrix, start: int, t: float, n: int, seed) -> np.ndarray:
    """
    States nu(-t) of n independent paths started from start

    Args:
        seed: Integer seed or numpy SeedSequence

    Returns:
        Integer array of length n
    """
    if t <= 0.0:
        raise ChainError(f"Simulation horizon must be positive, got {t}")
    rates = _check_rates(coupling)
    cumulative = _cumulative_jumps(coupling)
    rng = np.random.default_rng(seed)
    states = np.full(n, start, dtype=np.intp)
    clock = np.zeros(n)
    active = np.arange(n)
    while len(active):
        clock[active] += rng.exponential(1.0 / rates[states[active]])
        active = active[clock[active] < t]
        if not len(active):
            break
        draws = rng.random(len(active))
        states[active] = np.sum(draws[:, None] >= cumulative[states[active]], axis=1)
    return states


@dataclass(frozen=True)
class MCEstimate:
    """Monte Carlo estimate with its standard error"""
    estimate: float
    stderr: float
    samples: int


CHUNK_SIZE = 50_000


def mc_expectation(coupling: CouplingMatrix, start: int, t: float, fields: Sequence[np.ndarray], x,
                   n_samples: int, seed: int, threads: int = 1) -> MCEstimate:
    """
    Estimate E_start[psi_{nu(-t)}(x)] by simulating the chain

    Samples are drawn in chunks of CHUNK_SIZE, each with its own stream spawned
    from SeedSequence(seed), so the estimate depends only on the inputs and the
    seed, never on the thread count.

    Args:
        coupling: Coupling matrix
        start: Start state (0-based)
        t: Horizon
        fields: One grid field psi_k per state
        x: Evaluation point (dim,)
        n_samples: Number of paths
        seed: Root seed
        threads: Worker threads

    Returns:
        MCEstimate
    """
    if n_samples < 1:
        raise ChainError(f"Need at least one sample, got {n_samples}")
    grid = TorusGrid.for_field(fields[0])
    values = np.array([float(grid.interpolate(f, np.atleast_1d(x))) for f in fields])
    if np.all(values == values[0]):
        return MCEstimate(float(values[0]), 0.0, n_samples)

    chunks = math.ceil(n_samples / CHUNK_SIZE)
    sizes = [CHUNK_SIZE] * (chunks - 1) + [n_samples - CHUNK_SIZE * (chunks - 1)]
    streams = np.random.SeedSequence(seed).spawn(chunks)

    def count(job):
        size, stream = job
        final = sample_final_states(coupling, start, t, size, stream)
        return np.bincount(final, minlength=coupling.m)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        counts = sum(pool.map(count, zip(sizes, streams)))
    mean = float(counts @ values / n_samples)
    if n_samples > 1:
        variance = float(counts @ (values - mean) ** 2 / (n_samples - 1))
    else:
        variance = 0.0
    logger.debug(f"MC estimate {mean:.6f} from {n_samples} samples in {chunks} chunks")
    return MCEstimate(mean, math.sqrt(variance / n_samples), n_samples)


@dataclass(frozen=True)
class MCComparison:
    """Monte Carlo estimate against the deterministic weighted value"""
    estimate: float
    stderr: float
    closed_form: float
    z_score: float

    def within(self, sigmas: float = 3.0) -> bool:
        return abs(self.z_score) <= sigmas

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "stderr": self.stderr,
                "closed_form": self.closed_form, "z_score": self.z_score}


def mc_comparison(coupling: CouplingMatrix, start: int, t: float, fields: Sequence[np.ndarray], x,
                  n_samples: int, seed: int, threads: int = 1) -> MCComparison:
    """Compare mc_expectation with sum_k phi_k^(start)(-t) psi_k(x)"""
    estimate = mc_expectation(coupling, start, t, fields, x, n_samples, seed, threads)
    grid = TorusGrid.for_field(fields[0])
    values = np.array([float(grid.interpolate(f, np.atleast_1d(x))) for f in fields])
    exact = float(switching_matrix(coupling, -t)[start] @ values)
    difference = estimate.estimate - exact
    if estimate.stderr > 0.0:
        z_score = difference / estimate.stderr
    else:
        z_score = 0.0 if abs(difference) < 1e-12 else math.copysign(math.inf, difference)
    return MCComparison(estimate.estimate, estimate.stderr, exact, float(z_score))
