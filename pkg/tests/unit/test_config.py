"""
Unit tests for the configuration module
Tests the key-value parser, presets, problem files and suite files
"""

import numpy as np
import pytest

from src.config import (
    BUNDLED_PROBLEMS, ConfigError, coupling_preset, field_preset, load_problem, load_suite, parse_call,
    parse_key_values, parse_number, parse_problem, parse_suite,
)
from src.torus import TorusGrid
from tests.fixtures.test_helpers import write_problem


class TestParsing:
    """Test the low-level parsers"""

    def test_key_values_with_comments(self):
        """Test comments and blank lines are skipped"""
        entries = parse_key_values("# header\n\npoints = 64  # trailing\nname = demo\n")
        assert entries == {"points": ("64", 3), "name": ("demo", 4)}

    def test_duplicate_key(self):
        """Test duplicate keys are rejected with the line number"""
        with pytest.raises(ConfigError) as info:
            parse_key_values("points = 8\npoints = 16\n", source="demo.cfg")
        assert info.value.line_number == 2
        assert "demo.cfg:2:" in str(info.value)

    def test_malformed_line(self):
        """Test lines without '=' are rejected"""
        with pytest.raises(ConfigError):
            parse_key_values("just words\n")

    def test_numbers(self):
        """Test plain numbers and fractions"""
        assert parse_number("0.25") == 0.25
        assert parse_number("1/256") == pytest.approx(1 / 256)
        with pytest.raises(ValueError):
            parse_number("1/0")

    def test_call_with_array(self):
        """Test call arguments mixing arrays and numbers"""
        name, args = parse_call("tabulated([1, 0, 1], 2)")
        assert name == "tabulated"
        assert args == [[1, 0, 1], 2.0]

    def test_bare_call(self):
        """Test a preset without arguments"""
        assert parse_call("zero") == ("zero", [])


class TestPresets:
    """Test field and coupling presets"""

    def test_field_presets(self):
        """Test zero, constant and cosine fields"""
        grid = TorusGrid(1, 4)
        assert np.array_equal(field_preset("zero", grid), np.zeros(4))
        assert np.array_equal(field_preset("constant(2.5)", grid), np.full(4, 2.5))
        assert np.allclose(field_preset("cosine(1, 1, 0)", grid), [1.0, 0.0, -1.0, 0.0], atol=1e-12)

    def test_inline_field(self):
        """Test inline arrays must match the grid"""
        grid = TorusGrid(1, 4)
        assert np.array_equal(field_preset("[1, 2, 3, 4]", grid), [1.0, 2.0, 3.0, 4.0])
        with pytest.raises(ValueError):
            field_preset("[1, 2]", grid)

    def test_unknown_field(self):
        """Test unknown presets are rejected"""
        with pytest.raises(ValueError):
            field_preset("gaussian(1)", TorusGrid(1, 4))

    def test_coupling_presets(self):
        """Test two_state and inline matrices"""
        assert coupling_preset("two_state(1, 2)").entries[1, 0] == -2.0
        assert coupling_preset("[[1, -1], [-1, 1]]").m == 2


class TestProblemFiles:
    """Test problem files"""

    def test_parse_problem(self):
        """Test a complete problem file"""
        spec = parse_problem(
            "name = demo\npoints = 16\npotential.1 = cosine(1, 1, 0)\ninitial.2 = constant(1)\n"
            "horizon = 1\ntime_step = 1/32\nexpected_c = 1\n"
        )
        assert spec.name == "demo"
        assert spec.grid.points_per_axis == 16
        assert spec.hamiltonians[0].potential[0] == pytest.approx(1.0)
        assert not np.any(spec.hamiltonians[1].potential)
        assert np.all(spec.initial_data[1] == 1.0)
        assert spec.time_step == pytest.approx(1 / 32)
        assert spec.expected_c == 1.0

    def test_defaults(self):
        """Test defaults of an empty file"""
        spec = parse_problem("", name="empty")
        assert spec.name == "empty"
        assert spec.grid.points_per_axis == 128
        assert spec.time_step == pytest.approx(1 / 256)
        assert spec.m == 2

    def test_overrides(self):
        """Test keyword overrides win over the file"""
        spec = parse_problem("points = 16\nhorizon = 3\n", points=8, time_step=0.125, horizon=1.0)
        assert spec.grid.points_per_axis == 8
        assert spec.time_step == 0.125
        assert spec.horizon == 1.0

    def test_unknown_key(self):
        """Test unknown keys report their line"""
        with pytest.raises(ConfigError) as info:
            parse_problem("points = 16\nspeed = 3\n")
        assert info.value.line_number == 2

    def test_per_state_only_where_allowed(self):
        """Test suffixes are only allowed on per-state keys"""
        with pytest.raises(ConfigError):
            parse_problem("points.1 = 16\n")

    def test_state_count_mismatch(self):
        """Test the coupling must have the declared number of states"""
        with pytest.raises(ConfigError):
            parse_problem("states = 3\ncoupling = two_state(1, 1)\n")

    def test_bad_grid(self):
        """Test grid errors become configuration errors"""
        with pytest.raises(ConfigError):
            parse_problem("points = 2\n")

    def test_non_integer_points(self):
        """Test points must be an integer"""
        with pytest.raises(ConfigError):
            parse_problem("points = 16.5\n")

    def test_load_problem(self, tmp_path):
        """Test the file stem names the problem"""
        path = write_problem(tmp_path, "stem", "points = 8\n")
        assert load_problem(path).name == "stem"

    def test_missing_file(self, tmp_path):
        """Test unreadable files raise ConfigError"""
        with pytest.raises(ConfigError):
            load_problem(tmp_path / "absent.cfg")

    def test_bundled_problems_parse(self, problems_dir):
        """Test every bundled problem loads"""
        assert BUNDLED_PROBLEMS == problems_dir.resolve()
        names = sorted(path.stem for path in problems_dir.glob("*.cfg"))
        assert names == ["asymmetric-cosine", "symmetric-cosine", "three-state-cyclic", "zero-potential"]
        for path in problems_dir.glob("*.cfg"):
            spec = load_problem(path, points=16)
            assert spec.grid.points_per_axis == 16


class TestSuiteFiles:
    """Test suite files"""

    def test_parse_suite(self, tmp_path):
        """Test names resolve next to the suite first"""
        write_problem(tmp_path, "local", "points = 8\n")
        suite = parse_suite("problems = local, zero-potential\nt_long = 10\nseed = 7\n",
                            search_dirs=[tmp_path])
        assert [path.stem for path in suite.problems] == ["local", "zero-potential"]
        assert suite.t_long == 10.0
        assert suite.seed == 7

    def test_unknown_problem(self, tmp_path):
        """Test missing presets raise ConfigError"""
        with pytest.raises(ConfigError):
            parse_suite("problems = nowhere\n", search_dirs=[tmp_path])

    def test_unknown_suite_key(self):
        """Test unknown suite keys are rejected"""
        with pytest.raises(ConfigError):
            parse_suite("colour = red\n")

    def test_empty_suite(self):
        """Test an empty suite has no problems"""
        assert parse_suite("").problems == []

    def test_default_suite(self, problems_dir):
        """Test the bundled default suite lists four problems"""
        suite = load_suite(problems_dir / "default.suite")
        assert suite.name == "default"
        assert len(suite.problems) == 4
        assert suite.mc_samples == 100000

    def test_suite_load_applies_grid(self, tmp_path):
        """Test suite grid overrides reach the problems"""
        path = write_problem(tmp_path, "local", "points = 8\n")
        suite = parse_suite("problems = local\npoints = 16\ntime_step = 1/32\n", search_dirs=[tmp_path])
        spec = suite.load(path)
        assert spec.grid.points_per_axis == 16
        assert spec.time_step == pytest.approx(1 / 32)
