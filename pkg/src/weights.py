"""
Weights module for the coupled Hamilton-Jacobi solver
Deterministic switching weights phi_k(s), s <= 0, of the backward switching chain
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, linalg

from .coupling import CouplingMatrix

logger = logging.getLogger(__name__)


class WeightsError(Exception):
    """Raised for invalid rates, indices or couplings that break the spectral premise"""
    pass


@dataclass(frozen=True, eq=False)
class WeightSystem:
    """
    Weights phi^(i)(s) = row i of exp(C s) for a start state i

    phi_k(s) is the probability that the backward chain started in state i at
    time 0 occupies state k at time s. In the spectral form
    phi_k(s) = pi_k + sum_l a_kl exp(lambda_l s) over the nonzero eigenvalues.

    Attributes:
        coupling: Coupling matrix
        start: Start state i (0-based)
        method: 'closed_form' (two states), 'spectral' or 'ode'
        eigenvalues: Nonzero eigenvalues lambda_l of the coupling
        coefficients: a_kl, shape (m, m-1); None for the ode method
        stationary: Limit pi of phi(s) as s -> -infinity
    """

    coupling: CouplingMatrix
    start: int
    method: str
    eigenvalues: np.ndarray
    coefficients: Optional[np.ndarray]
    stationary: np.ndarray

    ODE_STEP = 1e-3

    @property
    def m(self) -> int:
        return self.coupling.m

    @property
    def closed_form(self) -> bool:
        return self.method == "closed_form"

    @property
    def decay_rate(self) -> float:
        """Smallest real part among the nonzero eigenvalues"""
        return float(np.min(self.eigenvalues.real))

    def eval(self, s) -> np.ndarray:
        """
        Weights at times s <= 0

        Args:
            s: Scalar or array of non-positive times

        Returns:
            Array of shape np.shape(s) + (m,)
        """
        s_array = np.asarray(s, dtype=float)
        if np.any(s_array > 0.0):
            raise WeightsError(f"Weights are defined for s <= 0, got max s = {np.max(s_array)}")
        if self.method == "ode":
            result = self._propagate(s_array.ravel()).reshape(s_array.shape + (self.m,))
        else:
            growth = np.exp(np.multiply.outer(s_array, self.eigenvalues))
            result = self.stationary + np.real(growth @ self.coefficients.T)
        unit = np.zeros(self.m)
        unit[self.start] = 1.0
        return np.where((s_array == 0.0)[..., None], unit, result)

    def __call__(self, s) -> np.ndarray:
        return self.eval(s)

    def _propagate(self, times: np.ndarray) -> np.ndarray:
        """Fixed-step exponential propagation phi(s - h) = phi(s) exp(-C h) towards decreasing s"""
        order = np.argsort(-times)
        step = linalg.expm(-self.coupling.entries * self.ODE_STEP)
        result = np.empty((len(times), self.m))
        current = np.zeros(self.m)
        current[self.start] = 1.0
        position = 0.0
        for index in order:
            target = times[index]
            whole = int(np.floor((position - target) / self.ODE_STEP))
            for _ in range(whole):
                current = current @ step
            position -= whole * self.ODE_STEP
            remainder = position - target
            if remainder > 0.0:
                current = current @ linalg.expm(-self.coupling.entries * remainder)
                position = target
            result[index] = current
        return result

    def tail_bound(self, s) -> np.ndarray:
        """Bound (sum_l |a_kl|) exp(min Re lambda * s) on |phi_k(s) - pi_k|, shape np.shape(s) + (m,)"""
        if self.coefficients is None:
            raise WeightsError("Tail bound needs the spectral coefficients")
        amplitude = np.sum(np.abs(self.coefficients), axis=1)
        return np.multiply.outer(np.exp(self.decay_rate * np.asarray(s, dtype=float)), amplitude)

    def to_dict(self) -> dict:
        return {
            "start": self.start + 1,
            "method": self.method,
            "eigenvalues": [[float(v.real), float(v.imag)] for v in self.eigenvalues],
            "stationary": self.stationary.tolist(),
        }


def _check_start(start: int, m: int):
    if not 0 <= start < m:
        raise WeightsError(f"Start state {start + 1} out of range 1..{m}")


def weights_two_state(c1: float, c2: float, start: int) -> WeightSystem:
    """
    Closed-form weights for the coupling [[c1, -c1], [-c2, c2]]

    With j the other state and lambda = c1 + c2:
    phi_i(s) = (c_j + c_i e^{lambda s}) / lambda, phi_j(s) = c_i (1 - e^{lambda s}) / lambda.
    """
    if c1 <= 0.0 or c2 <= 0.0:
        raise WeightsError(f"Two-state rates must be positive, got c1={c1}, c2={c2}")
    _check_start(start, 2)
    rates = (float(c1), float(c2))
    total = rates[0] + rates[1]
    other = 1 - start
    coefficients = np.zeros((2, 1))
    coefficients[start, 0] = rates[start] / total
    coefficients[other, 0] = -rates[start] / total
    stationary = np.array([rates[1], rates[0]]) / total
    return WeightSystem(
        coupling=CouplingMatrix.two_state(*rates),
        start=start,
        method="closed_form",
        eigenvalues=np.array([total]),
        coefficients=coefficients,
        stationary=stationary,
    )


def _spectrum(coupling: CouplingMatrix):
    """Eigen-decomposition with the zero eigenvalue checked to be simple and the rest to decay"""
    values, vectors = linalg.eig(coupling.entries)
    scale = max(1.0, float(np.max(np.abs(coupling.entries))))
    tolerance = 1e-9 * scale
    zero = np.flatnonzero(np.abs(values) <= tolerance)
    if len(zero) != 1:
        raise WeightsError(f"Zero eigenvalue of the coupling is not simple: eigenvalues {values}")
    nonzero = [l for l in range(len(values)) if l != zero[0]]
    if np.any(values[nonzero].real <= tolerance):
        raise WeightsError(f"Coupling has a nonzero eigenvalue with non-positive real part: {values}")
    return values, vectors, int(zero[0]), nonzero


def weights_general(coupling: CouplingMatrix, start: int, cond_limit: float = 1e8) -> WeightSystem:
    """
    Weights for any balanced irreducible coupling

    Uses the eigen-decomposition when the eigenvector matrix is well conditioned,
    otherwise fixed-step exponential propagation.

    Raises:
        WeightsError: invalid coupling, bad start state or failed spectral premise
    """
    _check_start(start, coupling.m)
    if coupling.sign_violation() is not None:
        raise WeightsError(f"Coupling sign pattern violated at {coupling.sign_violation()}")
    if not coupling.is_balanced():
        raise WeightsError("Coupling rows and columns must sum to zero")
    witness = coupling.irreducibility_witness()
    if witness is not None:
        raise WeightsError(f"Coupling is reducible: subset {[k + 1 for k in witness]} is isolated")

    values, vectors, zero, nonzero = _spectrum(coupling)
    stationary = coupling.stationary_distribution()
    condition = np.linalg.cond(vectors)
    if condition > cond_limit:
        logger.debug(f"Eigenvector matrix condition {condition:.3e} > {cond_limit:.0e}, using propagation")
        return WeightSystem(coupling, start, "ode", values[nonzero], None, stationary)
    inverse = linalg.inv(vectors)
    coefficients = np.array([[vectors[start, l] * inverse[l, k] for l in nonzero] for k in range(coupling.m)])
    return WeightSystem(coupling, start, "spectral", values[nonzero], coefficients, stationary)


def weights_for(coupling: CouplingMatrix, start: int) -> WeightSystem:
    """Closed-form weights for two states with positive rates, otherwise the general construction"""
    entries = coupling.entries
    if coupling.m == 2 and entries[0, 0] > 0.0 and entries[1, 1] > 0.0:
        return weights_two_state(entries[0, 0], entries[1, 1], start)
    return weights_general(coupling, start)


def switching_matrix(coupling: CouplingMatrix, s: float) -> np.ndarray:
    """exp(C s): row i holds the weights phi^(i)(s) for every start state at once"""
    if s > 0.0:
        raise WeightsError(f"Weights are defined for s <= 0, got {s}")
    entries = coupling.entries
    if coupling.m == 2 and entries[0, 0] > 0.0 and entries[1, 1] > 0.0:
        c1, c2 = entries[0, 0], entries[1, 1]
        total = c1 + c2
        decay = np.exp(total * s)
        return np.array([
            [(c2 + c1 * decay) / total, c1 * (1.0 - decay) / total],
            [c2 * (1.0 - decay) / total, (c1 + c2 * decay) / total],
        ])
    return linalg.expm(entries * s)


def semigroup_defect(coupling: CouplingMatrix, times) -> float:
    """
    Largest violation of Phi(s + h) = Phi(h) Phi(s) over all pairs of times

    Phi(s) stacks the weights phi^(i)(s) of every start state i as rows, each
    evaluated through its own WeightSystem.

    Args:
        coupling: Coupling matrix
        times: Non-positive times used for both s and h

    Returns:
        max |Phi(s + h) - Phi(h) Phi(s)|
    """
    times = np.asarray(times, dtype=float)
    systems = [weights_for(coupling, i) for i in range(coupling.m)]
    single = np.stack([system.eval(times) for system in systems], axis=-2)
    sums = np.add.outer(times, times)
    combined = np.stack([system.eval(sums) for system in systems], axis=-2)
    predicted = np.einsum("hik,skj->hsij", single, single)
    return float(np.max(np.abs(combined - predicted)))


@dataclass(frozen=True)
class GapIntegral:
    """Truncated integral of |phi_i - phi_j| over (-infinity, 0] with its truncation data"""
    value: float
    horizon: float
    tail_bound: float
    samples: int

    def to_dict(self) -> dict:
        return {"value": self.value, "horizon": self.horizon, "tail_bound": self.tail_bound,
                "samples": self.samples}


def weight_gap_integral(w: WeightSystem, i: int, j: int, tail_tolerance: float = 1e-10,
                        quadrature_tolerance: float = 1e-10) -> GapIntegral:
    """
    Integral of |phi_i(s) - phi_j(s)| over (-infinity, 0]

    The horizon S is chosen from the spectral decay so that the neglected tail is
    below tail_tolerance; the trapezoid rule on [-S, 0] is refined until two
    successive values agree within quadrature_tolerance.

    Returns:
        GapIntegral; the value is infinite when the stationary weights of i and j differ
    """
    _check_start(i, w.m)
    _check_start(j, w.m)
    if i == j:
        return GapIntegral(0.0, 0.0, 0.0, 0)
    if abs(w.stationary[i] - w.stationary[j]) > 1e-12:
        logger.warning(f"Weights {i + 1} and {j + 1} have different limits, gap integral diverges")
        return GapIntegral(np.inf, np.inf, np.inf, 0)

    rate = w.decay_rate
    if w.coefficients is not None:
        amplitude = float(np.sum(np.abs(w.coefficients[i] - w.coefficients[j])))
    else:
        # defective spectra carry polynomial factors; halve the rate
        amplitude, rate = 2.0, rate / 2.0
    amplitude = max(amplitude, 1e-300)
    horizon = max(1.0, np.log(amplitude / (rate * tail_tolerance)) / rate)
    tail = amplitude * np.exp(-rate * horizon) / rate

    samples = 2049
    previous = None
    while True:
        s = np.linspace(-horizon, 0.0, samples)
        phi = w.eval(s)
        value = float(integrate.trapezoid(np.abs(phi[:, i] - phi[:, j]), s))
        if previous is not None and abs(value - previous) < quadrature_tolerance:
            break
        if samples > 2 ** 21:
            logger.warning(f"Gap integral quadrature did not settle: last change {abs(value - previous):.3e}")
            break
        previous = value
        samples = 2 * samples - 1
    logger.debug(f"Gap integral ({i + 1},{j + 1}) = {value:.12g} on [-{horizon:.3g}, 0] with {samples} samples")
    return GapIntegral(value, float(horizon), float(tail), samples)
