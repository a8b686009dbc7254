"""
Unit tests for the problem module
Tests the problem data, the constants ledger and the assumption checks
"""

import numpy as np
import pytest

from src.coupling import CouplingMatrix
from src.hamiltonians import HamiltonianSpec
from src.problem import ValidationError, require_valid, validate
from tests.fixtures.test_helpers import build_problem, cosine_field


class TestProblemSpec:
    """Test derived data of a problem"""

    def test_defaults(self, zero_problem):
        """Test the velocity defaults are filled in"""
        assert zero_problem.m == 2
        assert zero_problem.velocity_samples == 65
        assert zero_problem.velocity_bound == pytest.approx(zero_problem.ledger.velocity_bound)
        assert zero_problem.steps == 32

    def test_initial_data_read_only(self, zero_problem):
        """Test initial fields cannot be modified in place"""
        with pytest.raises(ValueError):
            zero_problem.initial_data[0][0] = 1.0

    def test_symmetry(self, cosine_problem, asymmetric_problem, zero_problem):
        """Test symmetry needs equal Hamiltonians and equal initial data"""
        assert cosine_problem.is_symmetric
        assert not asymmetric_problem.is_symmetric
        assert not zero_problem.is_symmetric

    def test_with_horizon(self, zero_problem):
        """Test replacing the horizon keeps everything else"""
        longer = zero_problem.with_horizon(2.0)
        assert longer.horizon == 2.0
        assert longer.steps == 128
        assert longer.name == zero_problem.name

    def test_shifted_potentials(self, cosine_problem):
        """Test every potential is shifted"""
        shifted = cosine_problem.shifted_potentials(0.5)
        for before, after in zip(cosine_problem.hamiltonians, shifted.hamiltonians):
            assert np.allclose(after.potential, before.potential + 0.5)

    def test_permuted(self, asymmetric_problem):
        """Test relabelling moves the potentials with the states"""
        swapped = asymmetric_problem.permuted([1, 0])
        assert np.array_equal(swapped.hamiltonians[0].potential, asymmetric_problem.hamiltonians[1].potential)
        assert swapped.name.endswith("[2,1]")

    def test_describe(self, zero_problem):
        """Test the description lists the discretization"""
        description = zero_problem.describe()
        assert description["points"] == 32
        assert description["states"] == 2
        assert description["coupling"] == [[1.0, -1.0], [-1.0, 1.0]]


class TestConstantsLedger:
    """Test the constants ledger"""

    def test_zero_potential_ledger(self, zero_problem):
        """Test ledger entries for V = 0, g = (0, 1)"""
        ledger = zero_problem.ledger
        assert ledger.growth == pytest.approx(1.0)
        # H_2(Dg_2) + c_21 g_1 + c_22 g_2 = 1
        assert ledger.m1 == pytest.approx(1.0)
        assert ledger.c1 == pytest.approx(1.0)

    def test_problem_constant(self, zero_problem):
        """Test K(T) = max(1, C, C_1)(1 + T)"""
        assert zero_problem.ledger.problem_constant(2.0) == pytest.approx(3.0)

    def test_to_dict(self, cosine_problem):
        """Test the ledger serializes its entries"""
        data = cosine_problem.ledger.to_dict()
        assert set(data) >= {"growth", "m1", "c1", "velocity_bound", "gradient_bound", "dissipation"}
        assert len(data["dissipation"]) == 2


class TestValidation:
    """Test the assumption checks"""

    def test_valid_problem(self, cosine_problem):
        """Test a well-posed problem is accepted"""
        report = validate(cosine_problem)
        assert report.accepted
        assert report.failures() == []

    def test_unbalanced_coupling(self):
        """Test unequal two-state rates fail the column-sum check"""
        spec = build_problem(coupling=CouplingMatrix.two_state(1.0, 2.0))
        report = validate(spec)
        assert not report.accepted
        assert not report.outcome("coupling.column_sums").passed
        assert "column 1" in report.outcome("coupling.column_sums").detail

    def test_reducible_coupling(self):
        """Test a reducible coupling names the isolated subset"""
        coupling = CouplingMatrix(np.array([[1.0, -1.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 0.0]]))
        spec = build_problem(coupling=coupling)
        outcome = validate(spec).outcome("coupling.irreducible")
        assert not outcome.passed
        assert "{3}" in outcome.detail

    def test_non_convex_hamiltonian(self):
        """Test a non-convex table fails the convexity check"""
        axis = np.linspace(-1.0, 1.0, 5)
        bad = HamiltonianSpec.tabulated(axis, np.array([1.0, 0.2, 0.5, 0.2, 1.0]), np.zeros(32))
        spec = build_problem()
        spec = type(spec)(grid=spec.grid, hamiltonians=(bad, spec.hamiltonians[1]), coupling=spec.coupling,
                          initial_data=spec.initial_data, velocity_bound=4.0)
        report = validate(spec)
        assert not report.outcome("hamiltonian[1].convexity").passed

    def test_short_velocity_reach(self):
        """Test Q_max dt below dx is rejected"""
        spec = build_problem(points=32)
        spec = type(spec)(grid=spec.grid, hamiltonians=spec.hamiltonians, coupling=spec.coupling,
                          initial_data=spec.initial_data, velocity_bound=0.5, time_step=1 / 64)
        assert not validate(spec).outcome("velocity_bound").passed

    def test_require_valid_raises(self):
        """Test require_valid raises with the report attached"""
        spec = build_problem(coupling=CouplingMatrix.two_state(1.0, 2.0))
        with pytest.raises(ValidationError) as info:
            require_valid(spec)
        assert not info.value.report.accepted
        assert "REJECTED" in str(info.value)

    def test_report_format(self, asymmetric_problem):
        """Test the text report lists each check"""
        text = validate(asymmetric_problem).format()
        assert "accepted" in text
        assert "[pass] coupling.signs" in text

    def test_cosine_field_helper(self):
        """Test the helper cosine has the requested amplitude"""
        assert np.max(cosine_field(32, amplitude=0.5)) == pytest.approx(0.5)
