"""
Unit tests for the battery module
Tests check results, aggregation and running selected checks on a small suite
"""

import json

import pytest

from src.battery import (
    CHECKS, FAIL, INFO, PASS, BatteryOutcome, CheckResult, _verdict, aggregate_monte_carlo, run_battery,
)
from src.config import SuiteConfig
from src.weights import WeightsError
from tests.fixtures.test_helpers import TINY_PROBLEM, write_problem

@pytest.fixture
def tiny_suite(tmp_path):
    """Suite holding one small potential-free problem"""
    path = write_problem(tmp_path, "tiny", TINY_PROBLEM)
    return SuiteConfig(name="tiny-suite", problems=[path], t_long=2.0, mc_samples=1000)


class TestCheckResult:
    """Test result records"""

    def test_passed(self):
        """Test only FAIL counts as a failure"""
        assert CheckResult("a", "p", PASS).passed
        assert CheckResult("a", "p", INFO).passed
        assert not CheckResult("a", "p", FAIL).passed

    def test_verdict(self):
        """Test non-strict failures are reported as INFO"""
        assert _verdict(True) == PASS
        assert _verdict(False) == FAIL
        assert _verdict(False, strict=False) == INFO

    def test_registry(self):
        """Test checks are registered once with unique names"""
        names = [name for name, _ in CHECKS]
        assert len(names) == len(set(names))
        assert "ergodic.constant" in names
        assert "solver.crosscheck" in names


class TestAggregation:
    """Test the suite-wide Monte Carlo share"""

    def test_no_cases(self):
        """Test nothing is aggregated without Monte Carlo results"""
        assert aggregate_monte_carlo([CheckResult("ergodic.constant", "p", PASS)]) is None

    def test_share(self):
        """Test the share must reach 95 percent"""
        results = [
            CheckResult("weights.monte_carlo", "a", INFO, data={"within": 10, "total": 10}),
            CheckResult("weights.monte_carlo", "b", INFO, data={"within": 8, "total": 10}),
        ]
        aggregate = aggregate_monte_carlo(results)
        assert aggregate.status == FAIL
        assert aggregate.data["needed"] == 19
        results[1].data["within"] = 9
        assert aggregate_monte_carlo(results).status == PASS


class TestOutcome:
    """Test battery outcomes"""

    def test_exit_status(self):
        """Test the exit status is 0 iff nothing failed"""
        assert BatteryOutcome("s", [CheckResult("a", "p", PASS)]).exit_status == 0
        outcome = BatteryOutcome("s", [CheckResult("a", "p", PASS), CheckResult("b", "p", FAIL)])
        assert outcome.exit_status == 1
        assert [r.check for r in outcome.failures] == ["b"]
        assert outcome.matrix()["passed"] is False


class TestRunBattery:
    """Test running the battery"""

    def test_empty_suite(self, tmp_path):
        """Test an empty suite passes and writes its matrix"""
        outcome = run_battery(SuiteConfig(name="empty"), out_dir=tmp_path)
        assert outcome.exit_status == 0
        assert json.loads((tmp_path / "battery.json").read_text())["passed"] is True
        assert (tmp_path / "battery.txt").exists()

    def test_weight_checks(self, tiny_suite, tmp_path):
        """Test selected weight checks pass on a two-state problem"""
        outcome = run_battery(tiny_suite, out_dir=tmp_path, checks=["weights.closed_form", "weights.mixing"])
        assert [r.check for r in outcome.results] == ["weights.closed_form", "weights.mixing"]
        assert all(r.status == PASS for r in outcome.results)
        assert outcome.exit_status == 0

    def test_shift_covariance(self, tiny_suite, tmp_path):
        """Test the shift check compares both constants and the ergodic functions"""
        outcome = run_battery(tiny_suite, out_dir=tmp_path, checks=["ergodic.shift_covariance"])
        result = outcome.results[0]
        assert result.status == PASS
        assert result.data["shift"] == 0.5
        assert result.data["slope_error"] <= result.data["tolerance"]
        assert result.data["relative_value_error"] <= result.data["tolerance"]
        assert result.data["values_error"] <= 1e-8

    def test_package_error_becomes_failure(self, tiny_suite, mocker):
        """Test a package error inside a check is reported as FAIL"""
        mocker.patch("src.battery.weights_two_state", side_effect=WeightsError("rates must be positive"))
        outcome = run_battery(tiny_suite, checks=["weights.closed_form"])
        result = outcome.results[0]
        assert result.status == FAIL
        assert result.detail == "WeightsError: rates must be positive"
        assert outcome.exit_status == 1

    def test_invalid_problem(self, tmp_path):
        """Test a problem failing validation is reported instead of run"""
        path = write_problem(tmp_path, "coarse", TINY_PROBLEM.replace("time_step = 1/32", "time_step = 1/1024"))
        outcome = run_battery(SuiteConfig(name="bad", problems=[path]), checks=["weights.mixing"])
        assert [r.check for r in outcome.results] == ["problem.validate"]
        assert "velocity_bound" in outcome.results[0].detail
