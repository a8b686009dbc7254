"""
Unit tests for the solver module
Tests scheme parameters, the dynamic programming operator, both schemes and their cross-checks
"""

import numpy as np
import pytest

from src.solver import (
    DPPOperator, SchemeError, SchemeParams, ValueField, crosscheck, crosscheck_bound, direct_minimization,
    dpp_window_check, lf_substeps, path_cost, self_convergence, solve, solve_lf, step_dpp,
)
from src.weights import switching_matrix
from tests.fixtures.test_helpers import assert_close, build_problem


class TestSchemeParams:
    """Test parameter validation and defaults"""

    def test_for_problem(self, cosine_problem):
        """Test parameters come from the problem and its ledger"""
        params = SchemeParams.for_problem(cosine_problem)
        assert params.time_step == cosine_problem.time_step
        assert params.velocity_bound == cosine_problem.velocity_bound
        assert params.dissipation == cosine_problem.ledger.dissipation

    def test_overrides(self, cosine_problem):
        """Test keyword overrides"""
        params = SchemeParams.for_problem(cosine_problem, velocity_samples=9, refine_rounds=0)
        assert params.velocity_samples == 9
        assert params.velocity_spacing == pytest.approx(2 * params.velocity_bound / 8)

    def test_invalid_time_step(self):
        """Test non-positive time steps are rejected"""
        with pytest.raises(SchemeError):
            SchemeParams(time_step=0.0, velocity_bound=1.0)

    def test_even_samples(self):
        """Test velocity samples must be odd"""
        with pytest.raises(SchemeError):
            SchemeParams(time_step=0.1, velocity_bound=1.0, velocity_samples=8)


class TestValueField:
    """Test recorded value fields"""

    def test_lookup(self, grid):
        """Test times are matched on the lattice"""
        vf = ValueField(grid=grid, time_step=0.25)
        vf.record(0.0, np.zeros((2, 32)))
        vf.record(0.25, np.ones((2, 32)))
        assert vf.m == 2
        assert np.array_equal(vf.at(0.25), np.ones((2, 32)))
        assert vf.final_time == 0.25
        assert vf.as_array().shape == (2, 2, 32)

    def test_off_lattice(self, grid):
        """Test times that were not recorded raise SchemeError"""
        vf = ValueField(grid=grid, time_step=0.25)
        vf.record(0.0, np.zeros((2, 32)))
        with pytest.raises(SchemeError):
            vf.at(0.1)


class TestDynamicProgramming:
    """Test the semi-Lagrangian scheme"""

    def test_constant_data_closed_form(self, zero_problem):
        """Test V = 0 and constant data evolve by exp(-Ct) g"""
        vf = solve(zero_problem, record_every=8)
        g = np.array([0.0, 1.0])
        for t, values in zip(vf.times, vf.values):
            exact = switching_matrix(zero_problem.coupling, -t) @ g
            assert_close(values, exact[:, None], 1e-10, label=f"t={t}")
        assert vf.final[0, 0] == pytest.approx((1 - np.exp(-1.0)) / 2, abs=1e-10)

    def test_recording(self, zero_problem):
        """Test first and last times are always recorded"""
        assert solve(zero_problem, record_every=None).times == [0.0, 0.5]
        vf = solve(zero_problem, record_every=None, record_times=[0.25])
        assert vf.times == [0.0, 0.25, 0.5]
        assert len(solve(zero_problem, record_every=8).times) == 5

    def test_off_lattice_horizon(self, zero_problem):
        """Test a horizon that is not a multiple of dt is rejected"""
        with pytest.raises(SchemeError):
            solve(zero_problem.with_horizon(0.3))

    def test_step_matches_solve(self, cosine_problem):
        """Test one step equals a one-step solve"""
        params = SchemeParams.for_problem(cosine_problem)
        one = step_dpp(np.stack(cosine_problem.initial_data), cosine_problem, params)
        vf = solve(cosine_problem.with_horizon(params.time_step), params)
        assert np.array_equal(one, vf.final)

    @pytest.mark.parametrize("scheme", [solve, solve_lf])
    def test_constant_shift(self, unequal_problem, scheme):
        """Test adding a constant to all initial data adds it to the solution, for both schemes"""
        params = SchemeParams.for_problem(unequal_problem, refine_rounds=0)
        base = scheme(unequal_problem, params, record_every=None).final
        shifted_spec = unequal_problem.with_initial_data([g + 1.0 for g in unequal_problem.initial_data])
        shifted = scheme(shifted_spec, params, record_every=None).final
        assert_close(shifted, base + 1.0, 1e-12)

    @pytest.mark.parametrize("scheme", [solve, solve_lf])
    def test_state_relabeling(self, unequal_problem, scheme):
        """Test swapping the labels of H, g and C swaps the solution fields"""
        params = SchemeParams.for_problem(unequal_problem)
        base = scheme(unequal_problem, params, record_every=None).final
        swapped_spec = unequal_problem.permuted([1, 0])
        swapped = scheme(swapped_spec, SchemeParams.for_problem(swapped_spec), record_every=None).final
        assert_close(swapped, base[::-1], 1e-12)

    def test_monotone(self, cosine_problem):
        """Test ordered initial data give ordered solutions"""
        params = SchemeParams.for_problem(cosine_problem, refine_rounds=0)
        spec = cosine_problem.with_horizon(0.125)
        lower = solve(spec, params, record_every=None).final
        bump = np.zeros(32)
        bump[10] = 0.5
        higher = solve(spec.with_initial_data([bump, bump]), params, record_every=None).final
        assert np.all(higher >= lower - 1e-12)

    def test_minimize_at_rest(self, zero_problem):
        """Test the optimal velocity is zero for flat data"""
        params = SchemeParams.for_problem(zero_problem)
        operator = DPPOperator(zero_problem, params)
        fields = np.stack(zero_problem.initial_data)
        velocity, value = operator.minimize(np.array([[0.3]]), fields, np.array([[1.0, 0.0]]))
        assert velocity.shape == (1, 1)
        assert velocity[0, 0] == 0.0
        assert value[0] == pytest.approx(operator.terminal[0] @ np.array([0.0, 1.0]))

    def test_potential_lowers_value(self, cosine_problem):
        """Test u_t = -V at a maximum of V for flat initial data"""
        params = SchemeParams.for_problem(cosine_problem)
        vf = solve(cosine_problem.with_horizon(params.time_step), params)
        # resting at the maximum of V is optimal
        assert vf.final[0, 0] == pytest.approx(-params.time_step, abs=1e-3)


class TestLaxFriedrichs:
    """Test the finite-difference oracle"""

    def test_constant_data(self, zero_problem):
        """Test explicit Euler on the coupling alone is first-order accurate"""
        vf = solve_lf(zero_problem, record_every=None)
        exact = switching_matrix(zero_problem.coupling, -0.5) @ np.array([0.0, 1.0])
        assert_close(vf.final, exact[:, None], 0.01)

    def test_cfl_violation(self, cosine_problem):
        """Test a finite-difference step beyond the CFL bound is rejected"""
        params = SchemeParams.for_problem(cosine_problem, lf_time_step=cosine_problem.time_step)
        with pytest.raises(SchemeError) as info:
            lf_substeps(cosine_problem, params)
        assert "CFL" in str(info.value)

    def test_default_substeps_stable(self, cosine_problem):
        """Test the default number of substeps satisfies the CFL condition"""
        params = SchemeParams.for_problem(cosine_problem)
        substeps = lf_substeps(cosine_problem, params)
        theta = max(params.dissipation)
        rate = theta / cosine_problem.grid.spacing + cosine_problem.coupling.max_rate
        assert params.time_step / substeps * rate <= 0.5 + 1e-12

    def test_crosscheck(self, asymmetric_problem):
        """Test the two schemes agree within the crosscheck bound"""
        report = crosscheck(asymmetric_problem, record_every=8)
        assert report.passed
        assert report.rows[0] == (0.0, 0.0)
        assert report.bound == pytest.approx(crosscheck_bound(asymmetric_problem,
                                                              SchemeParams.for_problem(asymmetric_problem)))
        assert set(report.to_dict()) == {"sup_difference", "bound", "passed"}

    def test_global_dissipation_constant_data(self, zero_problem):
        """Test both dissipation variants agree exactly on spatially constant data"""
        local = solve_lf(zero_problem, record_every=None).final
        params = SchemeParams.for_problem(zero_problem, lf_local_dissipation=False)
        assert np.array_equal(solve_lf(zero_problem, params, record_every=None).final, local)

    def test_global_dissipation_close_to_local(self, unequal_problem):
        """Test the constant-dissipation scheme stays within the crosscheck bound of the local one"""
        params = SchemeParams.for_problem(unequal_problem)
        local = solve_lf(unequal_problem, params, record_every=None).final
        constant = solve_lf(unequal_problem, SchemeParams.for_problem(unequal_problem, lf_local_dissipation=False),
                            record_every=None).final
        difference = float(np.max(np.abs(constant - local)))
        assert 0.0 < difference <= crosscheck_bound(unequal_problem, params)


class TestWindowChecks:
    """Test the window re-minimization and the direct oracle"""

    def test_single_step_exact(self, cosine_problem):
        """Test a window of one step reproduces the scheme exactly"""
        params = SchemeParams.for_problem(cosine_problem)
        t = 4 * params.time_step
        vf = solve(cosine_problem.with_horizon(t), params)
        report = dpp_window_check(vf, cosine_problem, params, params.time_step, t, n_probe=8)
        assert report.max_discrepancy == 0.0
        assert report.passed

    def test_window_must_fit(self, cosine_problem):
        """Test windows longer than t are rejected"""
        params = SchemeParams.for_problem(cosine_problem)
        vf = solve(cosine_problem.with_horizon(2 * params.time_step), params)
        with pytest.raises(SchemeError):
            dpp_window_check(vf, cosine_problem, params, 4 * params.time_step, 2 * params.time_step)

    def test_path_cost_at_rest(self, zero_problem):
        """Test the cost of the resting curve is the weighted initial data"""
        fields = np.stack(zero_problem.initial_data)
        cost = path_cost(zero_problem, [0.0], 0, np.zeros((1, 1)), [0.5], fields)
        assert float(cost) == pytest.approx((1 - np.exp(-1.0)) / 2, abs=1e-12)

    def test_direct_minimization(self, zero_problem):
        """Test brute force finds the resting curve for flat data"""
        fields = np.stack(zero_problem.initial_data)
        value = direct_minimization(zero_problem, [0.0], 0, 0.5, fields)
        assert value == pytest.approx((1 - np.exp(-1.0)) / 2, abs=1e-9)


class TestSelfConvergence:
    """Test the refinement study"""

    def test_exact_problem(self):
        """Test resolutions agree when the scheme is exact"""
        study = self_convergence(lambda n: build_problem(points=n, initial=[0.0, 1.0], horizon=0.25), 8, levels=2)
        assert study.points == [8, 16]
        assert len(study.differences) == 1
        assert study.differences[0] < 1e-10

    def test_ratio(self):
        """Test the ratio of successive differences"""
        from src.solver import ConvergenceStudy
        assert ConvergenceStudy([8, 16, 32], [0.2, 0.1]).ratio == pytest.approx(2.0)
        assert np.isnan(ConvergenceStudy([8, 16], [0.2]).ratio)


class TestSchemeError:
    """Test the failure report attached to scheme errors"""

    def test_detailed_report(self, cosine_problem):
        """Test captured fields and parameters produce a report"""
        params = SchemeParams.for_problem(cosine_problem)
        fields = np.zeros((2, 32))
        fields[1, 4] = np.nan
        error = SchemeError("Scheme produced non-finite values", time=0.5, step=32, fields=fields, params=params)
        text = str(error)
        assert "SCHEME FAILURE" in text
        assert "Numerical Blow-up" in text
        assert "first at index (4,)" in text

    def test_plain_message(self):
        """Test errors without context keep their message"""
        assert str(SchemeError("plain")) == "plain"
