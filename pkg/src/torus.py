"""
Torus grid module for the coupled Hamilton-Jacobi solver
Uniform periodic grid on the unit torus with multilinear interpolation and difference stencils
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

logger = logging.getLogger(__name__)


class GridError(Exception):
    """Raised when a grid or a field sampled on it is malformed"""
    pass


@dataclass(frozen=True)
class Stencil:
    """Precomputed corner indices and weights of a multilinear interpolation"""
    indices: Tuple[Tuple[np.ndarray, ...], ...]
    weights: Tuple[np.ndarray, ...]


@dataclass(frozen=True)
class TorusGrid:
    """
    Uniform grid on the torus [0,1)^dim with N nodes per axis

    Node k on an axis sits at k/N. Fields are numpy arrays of shape (N,)*dim,
    and all index arithmetic wraps around (the neighbor of N-1 is 0).
    """

    dim: int
    points_per_axis: int

    MIN_POINTS = 4
    SUPPORTED_DIMS = (1, 2)
    # Points closer than this (in cell units) to a node are snapped onto it
    SNAP_TOLERANCE = 1e-10

    def __post_init__(self):
        if self.dim not in self.SUPPORTED_DIMS:
            raise GridError(f"Unsupported dimension {self.dim} (expected one of {self.SUPPORTED_DIMS})")
        if self.points_per_axis < self.MIN_POINTS:
            raise GridError(
                f"Grid needs at least {self.MIN_POINTS} points per axis, got {self.points_per_axis}"
            )

    @classmethod
    def for_field(cls, field) -> "TorusGrid":
        """Infer the grid a field was sampled on from its shape"""
        field = np.asarray(field)
        if field.ndim not in cls.SUPPORTED_DIMS or len(set(field.shape)) != 1:
            raise GridError(f"Field of shape {field.shape} is not sampled on a square torus grid")
        return cls(dim=field.ndim, points_per_axis=field.shape[0])

    @property
    def spacing(self) -> float:
        return 1.0 / self.points_per_axis

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_axis ** self.dim

    @property
    def origin(self) -> Tuple[int, ...]:
        return (0,) * self.dim

    def axis(self) -> np.ndarray:
        """Node coordinates along one axis"""
        return np.arange(self.points_per_axis) / self.points_per_axis

    def coordinates(self) -> List[np.ndarray]:
        """Coordinate arrays (one per axis) with the grid's shape"""
        return list(np.meshgrid(*([self.axis()] * self.dim), indexing="ij"))

    def node_points(self) -> np.ndarray:
        """All nodes as an array of shape (size, dim), in C order of the field arrays"""
        return np.stack([c.ravel() for c in self.coordinates()], axis=-1)

    def node_point(self, index) -> np.ndarray:
        """Coordinates of a single node given by its multi-index"""
        index = np.atleast_1d(np.asarray(index, dtype=float))
        return np.mod(index, self.points_per_axis) / self.points_per_axis

    def sample(self, func: Callable[..., np.ndarray]) -> np.ndarray:
        """Sample func(x_1, ..., x_dim) on the nodes"""
        values = np.asarray(func(*self.coordinates()), dtype=float)
        return np.broadcast_to(values, self.shape).copy()

    def check_field(self, field, name="field") -> np.ndarray:
        """Return field as a float array, raising GridError if it does not live on this grid"""
        array = np.asarray(field, dtype=float)
        if array.shape != self.shape:
            raise GridError(f"{name} has shape {array.shape}, expected {self.shape}")
        if not np.all(np.isfinite(array)):
            raise GridError(f"{name} contains non-finite values")
        return array

    def wrap(self, points) -> np.ndarray:
        """Map points onto [0,1)^dim"""
        wrapped = np.mod(np.asarray(points, dtype=float), 1.0)
        return np.where(wrapped >= 1.0, 0.0, wrapped)

    def stencil(self, points) -> Stencil:
        """
        Corner indices and weights for periodic multilinear interpolation at points

        Args:
            points: Array of shape (..., dim)

        Returns:
            Stencil usable with apply_stencil for any field on this grid
        """
        points = np.asarray(points, dtype=float)
        if points.shape[-1] != self.dim:
            raise GridError(f"Points have trailing size {points.shape[-1]}, expected {self.dim}")
        n = self.points_per_axis
        scaled = np.mod(points, 1.0) * n
        nearest = np.rint(scaled)
        scaled = np.where(np.abs(scaled - nearest) < self.SNAP_TOLERANCE, nearest, scaled)
        base = np.floor(scaled)
        frac = scaled - base
        lower = base.astype(np.intp) % n
        upper = (lower + 1) % n

        indices = []
        weights = []
        for corner in itertools.product((0, 1), repeat=self.dim):
            weight = np.ones(points.shape[:-1])
            index = []
            for d, bit in enumerate(corner):
                if bit:
                    weight = weight * frac[..., d]
                    index.append(upper[..., d])
                else:
                    weight = weight * (1.0 - frac[..., d])
                    index.append(lower[..., d])
            indices.append(tuple(index))
            weights.append(weight)
        return Stencil(indices=tuple(indices), weights=tuple(weights))

    @staticmethod
    def apply_stencil(field, stencil: Stencil, leading: int = 0) -> np.ndarray:
        """
        Evaluate a field through a precomputed stencil

        Args:
            field: Grid field, or a stack of fields with `leading` extra axes in front
            stencil: Stencil from stencil()
            leading: Number of leading axes carried through unchanged

        Returns:
            Array of shape field.shape[:leading] + stencil point shape
        """
        prefix = (slice(None),) * leading
        result = None
        for index, weight in zip(stencil.indices, stencil.weights):
            term = weight * field[prefix + index]
            result = term if result is None else result + term
        return result

    def interpolate(self, field, points) -> np.ndarray:
        """Periodic multilinear interpolation of a grid field at arbitrary points (..., dim)"""
        return self.apply_stencil(np.asarray(field, dtype=float), self.stencil(points))

    def forward_difference(self, field, axis: int) -> np.ndarray:
        """(u(x + e_axis dx) - u(x)) / dx with periodic wrap"""
        return (np.roll(field, -1, axis=axis) - field) / self.spacing

    def backward_difference(self, field, axis: int) -> np.ndarray:
        """(u(x) - u(x - e_axis dx)) / dx with periodic wrap"""
        return (field - np.roll(field, 1, axis=axis)) / self.spacing

    def one_sided_gradients(self, field):
        """Backward and forward difference lists, one array per axis"""
        backward = [self.backward_difference(field, d) for d in range(self.dim)]
        forward = [self.forward_difference(field, d) for d in range(self.dim)]
        return backward, forward

    def second_difference(self, field, axis: int) -> np.ndarray:
        """u(x+dx) - 2u(x) + u(x-dx), not divided by dx^2"""
        return np.roll(field, -1, axis=axis) - 2.0 * field + np.roll(field, 1, axis=axis)

    def centered_gradient(self, field, points) -> np.ndarray:
        """
        Centered-difference gradient of an interpolated field at arbitrary points

        Args:
            field: Grid field
            points: Array of shape (..., dim)

        Returns:
            Array of shape (..., dim)
        """
        points = np.asarray(points, dtype=float)
        h = self.spacing
        components = []
        for d in range(self.dim):
            offset = np.zeros(self.dim)
            offset[d] = h
            ahead = self.interpolate(field, points + offset)
            behind = self.interpolate(field, points - offset)
            components.append((ahead - behind) / (2.0 * h))
        return np.stack(components, axis=-1)

    def lipschitz_constant(self, field) -> float:
        """Largest one-sided difference quotient of a field"""
        field = np.asarray(field, dtype=float)
        return float(max(np.max(np.abs(self.forward_difference(field, d))) for d in range(self.dim)))

    def torus_distance(self, a, b) -> np.ndarray:
        """Euclidean distance on the torus between points (..., dim)"""
        delta = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
        delta = np.mod(delta, 1.0)
        delta = np.minimum(delta, 1.0 - delta)
        return np.sqrt(np.sum(delta ** 2, axis=-1))
