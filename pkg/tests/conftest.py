"""
pytest configuration and shared fixtures
"""

import pytest
import sys
from pathlib import Path

import numpy as np

# Add repository root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.coupling import CouplingMatrix
from src.torus import TorusGrid
from tests.fixtures.test_helpers import build_problem, cosine_field


@pytest.fixture
def grid():
    """Create a 1-D grid with 32 nodes"""
    return TorusGrid(dim=1, points_per_axis=32)


@pytest.fixture
def grid_2d():
    """Create a 2-D grid with 8 nodes per axis"""
    return TorusGrid(dim=2, points_per_axis=8)


@pytest.fixture
def two_state():
    """Create the symmetric two-state coupling [[1, -1], [-1, 1]]"""
    return CouplingMatrix.two_state(1.0, 1.0)


@pytest.fixture
def cyclic():
    """Create the balanced three-state cyclic coupling"""
    return CouplingMatrix(np.array([[1.0, -1.0, 0.0], [0.0, 1.0, -1.0], [-1.0, 0.0, 1.0]]))


@pytest.fixture
def zero_problem():
    """V = 0, g_1 = 0, g_2 = 1, two states, N = 32, dt = 1/64"""
    return build_problem(points=32, initial=[0.0, 1.0], horizon=0.5, name="zero")


@pytest.fixture
def cosine_problem():
    """Identical cosine potentials in both states, N = 32, dt = 1/64"""
    return build_problem(points=32, potentials=[cosine_field(32), cosine_field(32)], horizon=0.5,
                         name="cosine", expected_c=1.0)


@pytest.fixture
def asymmetric_problem():
    """Different cosine potentials, N = 32, dt = 1/64"""
    return build_problem(points=32, potentials=[cosine_field(32), cosine_field(32, amplitude=0.5, phase=0.25)],
                         horizon=0.5, name="asymmetric")


@pytest.fixture
def problems_dir():
    """Directory of the bundled problem files"""
    return Path(__file__).parent.parent / "problems"


@pytest.fixture
def unequal_problem():
    """Different potentials and initial data with rates c = (2, 1), N = 32, dt = 1/64"""
    return build_problem(points=32, potentials=[cosine_field(32), cosine_field(32, amplitude=0.5, phase=0.25)],
                         initial=[cosine_field(32, amplitude=0.3, phase=0.1), 0.2],
                         coupling=CouplingMatrix.two_state(2.0, 1.0), horizon=0.125, name="unequal")
