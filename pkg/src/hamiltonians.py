"""
Hamiltonian module for the coupled Hamilton-Jacobi solver
Convex Hamiltonians, their Lagrangians via the Legendre transform, and the numerical
Hamiltonians used by the finite-difference oracle and the residual audits
"""

import itertools
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


class LegendreError(Exception):
    """Raised when a Hamiltonian table cannot be conjugated (non-convex or malformed)"""
    pass


def _uniform_step(axis: np.ndarray) -> float:
    return float(axis[-1] - axis[0]) / (len(axis) - 1)


def _table_lookup(table: np.ndarray, axis: np.ndarray, points) -> np.ndarray:
    """
    Multilinear lookup in a table sampled on axis^dim, extrapolating linearly past the ends

    Args:
        table: Array of shape (n,)*dim
        axis: Uniform 1-D sample axis shared by all table axes
        points: Array of shape (..., dim)

    Returns:
        Array of shape points.shape[:-1]
    """
    points = np.asarray(points, dtype=float)
    dim = table.ndim
    n = len(axis)
    scaled = (points - axis[0]) / _uniform_step(axis)
    base = np.clip(np.floor(scaled), 0, n - 2).astype(np.intp)
    frac = scaled - base
    result = None
    for corner in itertools.product((0, 1), repeat=dim):
        weight = np.ones(points.shape[:-1])
        index = []
        for d, bit in enumerate(corner):
            weight = weight * (frac[..., d] if bit else 1.0 - frac[..., d])
            index.append(base[..., d] + bit)
        term = weight * table[tuple(index)]
        result = term if result is None else result + term
    return result


def _axis_points(axis: np.ndarray, dim: int) -> np.ndarray:
    """All points of axis^dim as an array of shape (n^dim, dim)"""
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _conjugate_table(source_axis, source_table, target_axis, chunk=256) -> np.ndarray:
    """Brute-force sup over the source samples of <y, z> - f(y) for every target sample z"""
    dim = source_table.ndim
    sources = _axis_points(source_axis, dim)
    values = source_table.ravel()
    targets = _axis_points(target_axis, dim)
    result = np.empty(len(targets))
    for start in range(0, len(targets), chunk):
        block = targets[start:start + chunk]
        result[start:start + chunk] = np.max(block @ sources.T - values[None, :], axis=1)
    return result.reshape((len(target_axis),) * dim)


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    """
    Convex Hamiltonian H(x,p) = T(p) + V(x) for one state

    The quadratic kind has T(p) = kappa|p|^2/2. The tabulated kind samples a convex
    kinetic part T on the symmetric p-grid p_axis^dim; x enters through the
    grid-sampled potential V only.
    """

    kind: str
    potential: np.ndarray
    kappa: float = 1.0
    p_axis: Optional[np.ndarray] = None
    kinetic_table: Optional[np.ndarray] = None
    coercivity_margin: float = 1e-6

    KINDS = ("quadratic", "tabulated")
    CONVEXITY_TOLERANCE = 1e-12

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise LegendreError(f"Unknown Hamiltonian kind '{self.kind}'")
        potential = np.array(self.potential, dtype=float)
        potential.setflags(write=False)
        object.__setattr__(self, "potential", potential)
        if self.kind == "tabulated":
            if self.p_axis is None or self.kinetic_table is None:
                raise LegendreError("Tabulated Hamiltonian needs p_axis and kinetic_table")
            axis = np.array(self.p_axis, dtype=float)
            table = np.array(self.kinetic_table, dtype=float)
            if table.shape != (len(axis),) * potential.ndim:
                raise LegendreError(
                    f"Kinetic table shape {table.shape} does not match p-axis length {len(axis)} "
                    f"in dimension {potential.ndim}"
                )
            axis.setflags(write=False)
            table.setflags(write=False)
            object.__setattr__(self, "p_axis", axis)
            object.__setattr__(self, "kinetic_table", table)

    @classmethod
    def quadratic(cls, kappa: float, potential) -> "HamiltonianSpec":
        """H(x,p) = kappa|p|^2/2 + V(x)"""
        return cls(kind="quadratic", potential=potential, kappa=float(kappa))

    @classmethod
    def tabulated(cls, p_axis, kinetic_table, potential, coercivity_margin=1e-6) -> "HamiltonianSpec":
        """H(x,p) = T(p) + V(x) with T sampled on p_axis^dim"""
        return cls(kind="tabulated", potential=potential, p_axis=p_axis,
                   kinetic_table=kinetic_table, coercivity_margin=coercivity_margin)

    @classmethod
    def power(cls, exponent: float, p_max: float, samples: int, potential) -> "HamiltonianSpec":
        """Tabulated T(p) = |p|^exponent / exponent on [-p_max, p_max]^dim"""
        potential = np.asarray(potential, dtype=float)
        axis = np.linspace(-p_max, p_max, int(samples))
        norms = np.sqrt(np.sum(_axis_points(axis, potential.ndim) ** 2, axis=-1))
        table = (norms ** exponent / exponent).reshape((len(axis),) * potential.ndim)
        return cls.tabulated(axis, table, potential)

    @property
    def dim(self) -> int:
        return self.potential.ndim

    @property
    def p_max(self) -> float:
        return float(self.p_axis[-1]) if self.kind == "tabulated" else np.inf

    def kinetic(self, p) -> np.ndarray:
        """T(p) for p of shape (..., dim)"""
        p = np.asarray(p, dtype=float)
        if self.kind == "quadratic":
            return 0.5 * self.kappa * np.sum(p * p, axis=-1)
        return _table_lookup(self.kinetic_table, self.p_axis, p)

    def kinetic_gradient(self, p) -> np.ndarray:
        """D_p T(p) for p of shape (..., dim)"""
        p = np.asarray(p, dtype=float)
        if self.kind == "quadratic":
            return self.kappa * p
        step = _uniform_step(self.p_axis)
        partials = np.gradient(self.kinetic_table, step) if self.dim > 1 else [np.gradient(self.kinetic_table, step)]
        return np.stack([_table_lookup(part, self.p_axis, p) for part in partials], axis=-1)

    def kinetic_minimizer(self) -> np.ndarray:
        """Point p* where T attains its minimum"""
        if self.kind == "quadratic":
            return np.zeros(self.dim)
        flat = int(np.argmin(self.kinetic_table))
        index = np.unravel_index(flat, self.kinetic_table.shape)
        return np.array([self.p_axis[i] for i in index])

    def evaluate(self, grid, x, p) -> np.ndarray:
        """H(x,p) at arbitrary points x (..., dim) and momenta p (..., dim)"""
        return self.kinetic(p) + grid.interpolate(self.potential, x)

    def at_nodes(self, p_components: Sequence[np.ndarray]) -> np.ndarray:
        """H(x,p(x)) on the grid nodes, with p given as one field per axis"""
        return self.kinetic(np.stack(p_components, axis=-1)) + self.potential

    def convexity_violation(self) -> Optional[Tuple[Tuple[int, ...], int, float]]:
        """
        First axis-wise negative second difference of the kinetic table

        Returns:
            (p-index, axis, second difference) or None when the table is convex
        """
        if self.kind == "quadratic":
            return None
        table = self.kinetic_table
        scale = max(1.0, float(np.max(np.abs(table))))
        for axis in range(table.ndim):
            second = np.diff(table, n=2, axis=axis)
            bad = np.argwhere(second < -self.CONVEXITY_TOLERANCE * scale)
            if len(bad):
                index = list(bad[0])
                index[axis] += 1
                return tuple(int(i) for i in index), axis, float(second[tuple(bad[0])])
        return None

    def coercivity_gap(self) -> float:
        """Smallest rise of T from p=0 to the edges of the p-box along each axis"""
        if self.kind == "quadratic":
            return np.inf
        centre = float(self.kinetic(np.zeros(self.dim)))
        gaps = []
        for d in range(self.dim):
            for sign in (-1.0, 1.0):
                edge = np.zeros(self.dim)
                edge[d] = sign * self.p_max
                gaps.append(float(self.kinetic(edge)) - centre)
        return min(gaps)

    def growth_constant(self) -> float:
        """
        Constant C with |p|^2/(2C) - C <= H(x,p) <= (C/2)(|p|^2 + 1)

        The quadratic kind uses max(kappa, 1/kappa, 2 max|V|). Tabulated tables take the
        first power of two that satisfies both bounds on the sampled p-grid.
        """
        v_abs = float(np.max(np.abs(self.potential)))
        if self.kind == "quadratic":
            return max(self.kappa, 1.0 / self.kappa, 2.0 * v_abs)
        points = _axis_points(self.p_axis, self.dim)
        norms2 = np.sum(points ** 2, axis=-1)
        table = self.kinetic_table.ravel()
        v_min = float(np.min(self.potential))
        v_max = float(np.max(self.potential))
        constant = max(1.0, 2.0 * v_abs)
        while constant <= 2.0 ** 20:
            lower_ok = np.all(norms2 / (2.0 * constant) - constant <= table + v_min + 1e-12)
            upper_ok = np.all(table + v_max <= 0.5 * constant * (norms2 + 1.0) + 1e-12)
            if lower_ok and upper_ok:
                return constant
            constant *= 2.0
        return np.inf

    def max_speed(self, p_bar: float, samples: int = 201) -> float:
        """max |dH/dp_d| over the box |p_d| <= p_bar"""
        if self.kind == "quadratic":
            return self.kappa * p_bar
        axis = np.linspace(-p_bar, p_bar, samples if self.dim == 1 else 41)
        return float(np.max(np.abs(self.kinetic_gradient(_axis_points(axis, self.dim)))))


@dataclass(frozen=True, eq=False)
class LagrangianSpec:
    """
    Lagrangian L(x,q) = T*(q) - V(x) conjugate to a HamiltonianSpec

    The quadratic kind uses the closed form |q|^2/(2 kappa); the tabulated kind holds
    T* sampled on q_axis^dim.
    """

    kind: str
    potential: np.ndarray
    kappa: float = 1.0
    q_axis: Optional[np.ndarray] = None
    kinetic_table: Optional[np.ndarray] = None

    def __post_init__(self):
        potential = np.array(self.potential, dtype=float)
        potential.setflags(write=False)
        object.__setattr__(self, "potential", potential)
        if self.kind == "tabulated":
            axis = np.array(self.q_axis, dtype=float)
            table = np.array(self.kinetic_table, dtype=float)
            axis.setflags(write=False)
            table.setflags(write=False)
            object.__setattr__(self, "q_axis", axis)
            object.__setattr__(self, "kinetic_table", table)

    @property
    def dim(self) -> int:
        return self.potential.ndim

    def kinetic(self, q) -> np.ndarray:
        """T*(q) for q of shape (..., dim)"""
        q = np.asarray(q, dtype=float)
        if self.kind == "quadratic":
            return np.sum(q * q, axis=-1) / (2.0 * self.kappa)
        return _table_lookup(self.kinetic_table, self.q_axis, q)

    def evaluate(self, grid, x, q) -> np.ndarray:
        """L(x,q) at arbitrary points x (..., dim) and velocities q (..., dim)"""
        return self.kinetic(q) - grid.interpolate(self.potential, x)

    def at_rest(self) -> np.ndarray:
        """L(x,0) on the grid nodes"""
        return float(self.kinetic(np.zeros(self.dim))) - self.potential

    def growth_violation(self, constant: float, q_bound: float, samples: int = 101) -> Optional[float]:
        """
        Check |q|^2/(2C) - C <= L(x,q) <= (C/2)(|q|^2+1) on a sampled q-box

        Returns:
            A sampled velocity norm where the sandwich fails, or None
        """
        axis = np.linspace(-q_bound, q_bound, samples if self.dim == 1 else 41)
        points = _axis_points(axis, self.dim)
        norms2 = np.sum(points ** 2, axis=-1)
        kinetic = self.kinetic(points)
        v_min = float(np.min(self.potential))
        v_max = float(np.max(self.potential))
        lower = norms2 / (2.0 * constant) - constant <= kinetic - v_max + 1e-9
        upper = kinetic - v_min <= 0.5 * constant * (norms2 + 1.0) + 1e-9
        bad = np.flatnonzero(~(lower & upper))
        if len(bad):
            return float(np.sqrt(norms2[bad[0]]))
        return None


def legendre_transform(h: HamiltonianSpec, q_grid=None, q_samples: int = 401) -> LagrangianSpec:
    """
    Lagrangian L(x,q) = max_p (p.q - H(x,p))

    Args:
        h: Hamiltonian to conjugate
        q_grid: Uniform symmetric q axis for tabulated input (default: spans the table's slopes)
        q_samples: Axis length used when q_grid is omitted

    Returns:
        LagrangianSpec (closed form for the quadratic kind)

    Raises:
        LegendreError: the tabulated kinetic part is not convex
    """
    if h.kind == "quadratic":
        return LagrangianSpec(kind="quadratic", potential=h.potential, kappa=h.kappa)

    violation = h.convexity_violation()
    if violation is not None:
        p_index, axis, second = violation
        raise LegendreError(
            f"Hamiltonian is not convex at (x-index {(0,) * h.dim}, p-index {p_index}) "
            f"along axis {axis}: second difference {second:.3e}"
        )
    if q_grid is None:
        slopes = np.abs(h.kinetic_gradient(_axis_points(h.p_axis[[0, -1]], h.dim)))
        bound = float(np.max(slopes))
        q_grid = np.linspace(-bound, bound, q_samples if h.dim == 1 else min(q_samples, 81))
    q_grid = np.asarray(q_grid, dtype=float)
    logger.debug(f"Conjugating tabulated Hamiltonian on {len(h.p_axis)} p-samples, {len(q_grid)} q-samples")
    table = _conjugate_table(h.p_axis, h.kinetic_table, q_grid)
    return LagrangianSpec(kind="tabulated", potential=h.potential, q_axis=q_grid, kinetic_table=table)


def inverse_legendre_transform(lagrangian: LagrangianSpec, p_grid=None) -> HamiltonianSpec:
    """
    Hamiltonian H(x,p) = max_q (p.q - L(x,q)), recovering H from its Lagrangian

    Args:
        lagrangian: Lagrangian to conjugate back
        p_grid: Uniform symmetric p axis for tabulated input

    Returns:
        HamiltonianSpec (exact for the quadratic kind)
    """
    if lagrangian.kind == "quadratic":
        return HamiltonianSpec.quadratic(lagrangian.kappa, lagrangian.potential)
    if p_grid is None:
        raise LegendreError("Tabulated Lagrangian needs a p_grid to conjugate back")
    p_grid = np.asarray(p_grid, dtype=float)
    table = _conjugate_table(lagrangian.q_axis, lagrangian.kinetic_table, p_grid)
    return HamiltonianSpec.tabulated(p_grid, table, lagrangian.potential)


def _stack(components: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack(components, axis=-1)


def lax_friedrichs(h: HamiltonianSpec, backward: List[np.ndarray], forward: List[np.ndarray],
                   theta: float, local: bool = True) -> np.ndarray:
    """
    Lax-Friedrichs numerical Hamiltonian H(x,(D- + D+)/2) - sum_d theta_d (D+ - D-)/2

    Args:
        h: Hamiltonian
        backward: Backward differences, one field per axis
        forward: Forward differences, one field per axis
        theta: Dissipation coefficient (the cap when local is True)
        local: Use theta_d(x) = max |dH/dp_d| over the two one-sided gradients, capped by theta

    Returns:
        Field of numerical Hamiltonian values
    """
    average = [(b + f) / 2.0 for b, f in zip(backward, forward)]
    value = h.at_nodes(average)
    if local:
        speed_back = np.abs(h.kinetic_gradient(_stack(backward)))
        speed_fwd = np.abs(h.kinetic_gradient(_stack(forward)))
    for d, (b, f) in enumerate(zip(backward, forward)):
        if local:
            coefficient = np.minimum(np.maximum(speed_back[..., d], speed_fwd[..., d]), theta)
        else:
            coefficient = theta
        value = value - coefficient * (f - b) / 2.0
    return value


def godunov(h: HamiltonianSpec, backward: List[np.ndarray], forward: List[np.ndarray]) -> np.ndarray:
    """
    Upwind (Godunov) numerical Hamiltonian for H convex with minimum at p*

    Per axis: min of H over [D-, D+] when D- <= D+, otherwise the endpoint with the larger H.
    Exact for separable Hamiltonians; vanishes on semiconcave kinks of solutions.
    """
    p_star = h.kinetic_minimizer()
    chosen = []
    for d, (b, f) in enumerate(zip(backward, forward)):
        expanding = np.minimum(np.maximum(p_star[d], b), f)
        probe_b = np.broadcast_to(p_star, b.shape + (h.dim,)).copy()
        probe_f = probe_b.copy()
        probe_b[..., d] = b
        probe_f[..., d] = f
        compressing = np.where(h.kinetic(probe_b) >= h.kinetic(probe_f), b, f)
        chosen.append(np.where(b <= f, expanding, compressing))
    return h.at_nodes(chosen)


def upper_hamiltonian(h: HamiltonianSpec, backward: List[np.ndarray], forward: List[np.ndarray]) -> np.ndarray:
    """Largest H over all choices of one-sided difference per axis"""
    result = None
    for choice in itertools.product((0, 1), repeat=len(backward)):
        components = [forward[d] if bit else backward[d] for d, bit in enumerate(choice)]
        value = h.at_nodes(components)
        result = value if result is None else np.maximum(result, value)
    return result
