"""
Unit tests for the weights module
Tests closed-form and spectral weights, the switching matrix and the gap integral
"""

import numpy as np
import pytest
from scipy import linalg

from src import weights as weights_module
from src.coupling import CouplingMatrix
from src.weights import (
    WeightsError, semigroup_defect, switching_matrix, weight_gap_integral, weights_for, weights_general,
    weights_two_state,
)


@pytest.fixture
def times():
    """Times -5 .. 0 in steps of 0.01"""
    return -np.arange(500, -1, -1) / 100.0


class TestTwoStateWeights:
    """Test the closed-form two-state weights"""

    def test_symmetric_formula(self, times):
        """Test phi_i(s) = 1/2 + exp(2s)/2 for unit rates"""
        phi = weights_two_state(1.0, 1.0, 0).eval(times)
        assert np.max(np.abs(phi[:, 0] - (0.5 + 0.5 * np.exp(2 * times)))) <= 1e-12
        assert np.max(np.abs(phi[:, 1] - (0.5 - 0.5 * np.exp(2 * times)))) <= 1e-12

    def test_start_at_zero(self):
        """Test phi(0) is the unit vector of the start state"""
        assert np.array_equal(weights_two_state(2.0, 3.0, 1).eval(0.0), [0.0, 1.0])

    def test_unequal_rates_limit(self):
        """Test the limit (c2, c1) / (c1 + c2)"""
        w = weights_two_state(1.0, 3.0, 0)
        assert np.allclose(w.stationary, [0.75, 0.25])
        assert np.allclose(w.eval(-40.0), [0.75, 0.25])

    def test_matches_matrix_exponential(self, times):
        """Test closed form against expm for unequal rates"""
        w = weights_two_state(0.5, 2.0, 1)
        reference = np.stack([linalg.expm(CouplingMatrix.two_state(0.5, 2.0).entries * s)[1] for s in times[::50]])
        assert np.max(np.abs(w.eval(times[::50]) - reference)) <= 1e-12

    def test_invalid_rates(self):
        """Test non-positive rates are rejected"""
        with pytest.raises(WeightsError):
            weights_two_state(0.0, 1.0, 0)

    def test_invalid_start(self):
        """Test out-of-range start states are rejected"""
        with pytest.raises(WeightsError):
            weights_two_state(1.0, 1.0, 2)

    def test_positive_time_rejected(self):
        """Test weights are only defined for s <= 0"""
        with pytest.raises(WeightsError):
            weights_two_state(1.0, 1.0, 0).eval(0.5)

    def test_call_alias(self):
        """Test calling the system evaluates it"""
        w = weights_two_state(1.0, 1.0, 0)
        assert np.array_equal(w(-1.0), w.eval(-1.0))


class TestGeneralWeights:
    """Test the spectral construction"""

    def test_matches_closed_form(self, times):
        """Test the general path agrees with the two-state formula"""
        coupling = CouplingMatrix.two_state(1.0, 1.0)
        for start in (0, 1):
            general = weights_general(coupling, start).eval(times)
            closed = weights_two_state(1.0, 1.0, start).eval(times)
            assert np.max(np.abs(general - closed)) <= 1e-9

    def test_cyclic_partition_of_unity(self, cyclic):
        """Test the weights sum to one"""
        s = np.linspace(-20.0, 0.0, 401)
        for start in range(3):
            phi = weights_general(cyclic, start).eval(s)
            assert np.max(np.abs(phi.sum(axis=-1) - 1.0)) <= 1e-10

    def test_cyclic_matches_expm(self, cyclic):
        """Test spectral weights against the matrix exponential"""
        w = weights_general(cyclic, 2)
        for s in (-0.3, -1.0, -4.0):
            assert np.allclose(w.eval(s), linalg.expm(cyclic.entries * s)[2], atol=1e-10)

    def test_cyclic_equidistribution(self, cyclic):
        """Test phi(-10) is within the tail bound of 1/m"""
        w = weights_general(cyclic, 0)
        assert w.method == "spectral"
        gap = np.abs(w.eval(-10.0) - 1.0 / 3.0)
        assert np.all(gap <= w.tail_bound(-10.0) + 1e-12)

    def test_unbalanced_rejected(self):
        """Test the general path needs a balanced coupling"""
        with pytest.raises(WeightsError):
            weights_general(CouplingMatrix.two_state(1.0, 2.0), 0)

    def test_reducible_rejected(self):
        """Test reducible couplings are rejected"""
        coupling = CouplingMatrix(np.array([[1.0, -1.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 0.0]]))
        with pytest.raises(WeightsError):
            weights_general(coupling, 0)

    def test_propagation_fallback(self, cyclic):
        """Test the propagation method agrees with the spectral one"""
        propagated = weights_general(cyclic, 1, cond_limit=0.0)
        assert propagated.method == "ode"
        s = np.array([-2.0, -0.5, -0.0005, 0.0])
        assert np.allclose(propagated.eval(s), weights_general(cyclic, 1).eval(s), atol=1e-9)

    def test_weights_for_dispatch(self, cyclic, two_state):
        """Test the dispatcher picks the closed form for two states"""
        assert weights_for(two_state, 0).closed_form
        assert weights_for(cyclic, 0).method == "spectral"


class TestWeightBounds:
    """Test the weights stay a probability vector"""

    @pytest.fixture
    def long_times(self):
        """Times -50 .. 0 in steps of 0.01"""
        return -np.arange(5000, -1, -1) / 100.0

    @pytest.mark.parametrize("start", [0, 1])
    def test_two_state_nonnegative(self, long_times, start):
        """Test phi_k(s) >= -1e-12 for unequal rates"""
        phi = weights_two_state(2.0, 1.0, start).eval(long_times)
        assert np.min(phi) >= -1e-12
        assert np.max(np.abs(phi.sum(axis=-1) - 1.0)) <= 1e-12

    @pytest.mark.parametrize("start", [0, 1, 2])
    def test_cyclic_nonnegative(self, cyclic, long_times, start):
        """Test phi_k(s) >= -1e-12 on the spectral path with three states"""
        w = weights_general(cyclic, start)
        assert w.method == "spectral"
        assert np.min(w.eval(long_times)) >= -1e-12


class TestSwitchingMatrix:
    """Test the matrix of weights for every start state"""

    def test_rows_are_weights(self, cyclic):
        """Test row i holds phi^(i)"""
        matrix = switching_matrix(cyclic, -0.7)
        for start in range(3):
            assert np.allclose(matrix[start], weights_general(cyclic, start).eval(-0.7), atol=1e-12)

    def test_semigroup(self, two_state):
        """Test exp(C(s + h)) = exp(Ch) exp(Cs) to 1e-12"""
        for s in np.linspace(-3.0, 0.0, 7):
            for h in np.linspace(-3.0, 0.0, 7):
                combined = switching_matrix(two_state, s + h)
                assert np.max(np.abs(combined - switching_matrix(two_state, h) @ switching_matrix(two_state, s))) \
                    <= 1e-12

    def test_identity_at_zero(self, cyclic):
        """Test exp(0) is the identity"""
        assert np.allclose(switching_matrix(cyclic, 0.0), np.eye(3))

    def test_positive_time_rejected(self, two_state):
        """Test s > 0 is rejected"""
        with pytest.raises(WeightsError):
            switching_matrix(two_state, 0.1)


class TestSemigroupDefect:
    """Test the semigroup identity evaluated through the weight systems"""

    def test_two_state_closed_form(self):
        """Test the closed form satisfies Phi(s + h) = Phi(h) Phi(s) to 1e-12"""
        coupling = CouplingMatrix.two_state(2.0, 1.0)
        assert semigroup_defect(coupling, np.linspace(-5.0, 0.0, 21)) <= 1e-12

    def test_cyclic_spectral(self, cyclic):
        """Test the spectral weights of three states satisfy the identity to 1e-9"""
        assert semigroup_defect(cyclic, np.linspace(-5.0, 0.0, 21)) <= 1e-9

    def test_uses_weight_systems(self, cyclic, mocker):
        """Test every start state is evaluated through weights_for"""
        spy = mocker.spy(weights_module, "weights_for")
        semigroup_defect(cyclic, np.linspace(-1.0, 0.0, 5))
        assert sorted(call.args[1] for call in spy.call_args_list) == [0, 1, 2]


class TestGapIntegral:
    """Test the integral of |phi_i - phi_j|"""

    def test_two_state_value(self):
        """Test the unit-rate integral equals 1/2"""
        gap = weight_gap_integral(weights_two_state(1.0, 1.0, 0), 0, 1)
        assert gap.value == pytest.approx(0.5, abs=1e-8)
        assert gap.tail_bound <= 1.01e-10

    def test_same_index(self, two_state):
        """Test the integral vanishes for i = j"""
        assert weight_gap_integral(weights_for(two_state, 0), 0, 0).value == 0.0

    def test_cyclic_finite_and_stable(self, cyclic):
        """Test finite integrals that are stable under quadrature refinement"""
        w = weights_general(cyclic, 0)
        fine = weight_gap_integral(w, 0, 1)
        coarse = weight_gap_integral(w, 0, 1, quadrature_tolerance=1e-6)
        assert np.isfinite(fine.value)
        assert abs(fine.value - coarse.value) <= 1e-6

    def test_diverges_for_different_limits(self):
        """Test different stationary weights give an infinite integral"""
        gap = weight_gap_integral(weights_two_state(1.0, 3.0, 0), 0, 1)
        assert gap.value == np.inf
