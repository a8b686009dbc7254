"""
Coupling module for the coupled Hamilton-Jacobi solver
Coupling matrices (c_ij) linking the equations of the system and the switching rates they define
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


class CouplingError(Exception):
    """Raised when a coupling matrix is structurally malformed"""
    pass


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    """
    Coupling matrix of a weakly coupled system

    Construction only checks the shape and finiteness of the entries, so that
    invalid matrices can still be built and reported on by validation. The
    sign pattern, zero row and column sums and irreducibility are exposed
    as separate checks.
    """

    entries: np.ndarray

    TOLERANCE = 1e-12
    MAX_STATES = 6

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise CouplingError(f"Coupling must be a square matrix, got shape {entries.shape}")
        if entries.shape[0] < 2:
            raise CouplingError(f"Coupling needs at least 2 states, got {entries.shape[0]}")
        if entries.shape[0] > self.MAX_STATES:
            raise CouplingError(f"Coupling has {entries.shape[0]} states, at most {self.MAX_STATES} supported")
        if not np.all(np.isfinite(entries)):
            raise CouplingError("Coupling contains non-finite entries")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @classmethod
    def two_state(cls, c1: float, c2: float) -> "CouplingMatrix":
        """[[c1, -c1], [-c2, c2]]"""
        return cls(np.array([[c1, -c1], [-c2, c2]], dtype=float))

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def rates(self) -> np.ndarray:
        """Diagonal entries c_kk (total switching rate out of state k)"""
        return np.diag(self.entries).copy()

    @property
    def max_rate(self) -> float:
        return float(np.max(self.rates))

    def _scale(self) -> float:
        return max(1.0, float(np.max(np.abs(self.entries))))

    def sign_violation(self) -> Optional[Tuple[int, int]]:
        """First (i, j) breaking c_ii >= 0, c_ij <= 0 (i != j)"""
        for i, j in itertools.product(range(self.m), repeat=2):
            value = self.entries[i, j]
            if (i == j and value < 0.0) or (i != j and value > 0.0):
                return i, j
        return None

    def row_sum_violation(self) -> Optional[int]:
        """First row whose sum is not zero"""
        sums = np.abs(self.entries.sum(axis=1))
        bad = np.flatnonzero(sums > self.TOLERANCE * self._scale())
        return int(bad[0]) if len(bad) else None

    def column_sum_violation(self) -> Optional[int]:
        """First column whose sum is not zero"""
        sums = np.abs(self.entries.sum(axis=0))
        bad = np.flatnonzero(sums > self.TOLERANCE * self._scale())
        return int(bad[0]) if len(bad) else None

    def irreducibility_witness(self) -> Optional[Tuple[int, ...]]:
        """
        Proper nonempty subset I of states with c_ij = 0 for all i in I, j not in I

        Subsets are enumerated by size, then lexicographically.

        Returns:
            The first such subset, or None when the matrix is irreducible
        """
        states = range(self.m)
        for size in range(1, self.m):
            for subset in itertools.combinations(states, size):
                outside = [j for j in states if j not in subset]
                if not np.any(self.entries[np.ix_(subset, outside)] != 0.0):
                    return subset
        return None

    def is_irreducible(self) -> bool:
        return self.irreducibility_witness() is None

    def is_balanced(self) -> bool:
        """Zero column sums on top of zero row sums"""
        return self.row_sum_violation() is None and self.column_sum_violation() is None

    def stationary_distribution(self) -> np.ndarray:
        """
        Long-run distribution pi of the switching chain (pi C = 0, sum pi = 1)

        Uniform for balanced couplings; (c2, c1)/(c1 + c2) for two states.
        """
        system = np.vstack([self.entries.T, np.ones((1, self.m))])
        rhs = np.zeros(self.m + 1)
        rhs[-1] = 1.0
        solution, *_ = np.linalg.lstsq(system, rhs, rcond=None)
        return solution

    def jump_probabilities(self, state: int) -> np.ndarray:
        """Probabilities -c_kj/c_kk of jumping from state k to each j (zero at k)"""
        rate = self.entries[state, state]
        if rate <= 0.0:
            raise CouplingError(f"State {state + 1} is absorbing (c_kk = {rate})")
        probabilities = -self.entries[state] / rate
        probabilities[state] = 0.0
        return probabilities

    def conjugate(self, permutation: Sequence[int]) -> "CouplingMatrix":
        """Coupling seen after relabelling state permutation[k] as k"""
        order = np.asarray(permutation, dtype=np.intp)
        return CouplingMatrix(self.entries[np.ix_(order, order)])

    def to_list(self):
        return self.entries.tolist()

    def __repr__(self):
        return f"CouplingMatrix({self.to_list()})"
