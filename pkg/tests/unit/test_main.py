"""
Unit tests for the command-line entry point
Tests argument parsing, exit codes and the files each subcommand writes
"""

import json

import pytest

from main import build_parser, main
from tests.fixtures.test_helpers import TINY_PROBLEM, write_problem


@pytest.fixture
def tiny_config(tmp_path):
    """Small potential-free problem file"""
    return write_problem(tmp_path, "tiny", TINY_PROBLEM)


class TestParser:
    """Test argument parsing"""

    def test_defaults(self):
        """Test defaults of the curve subcommand"""
        args = build_parser().parse_args(["curve", "--config", "a.cfg"])
        assert args.t_long == 20.0
        assert args.delta0 == 0.1
        assert args.state is None

    def test_repeatable(self):
        """Test repeatable options collect values"""
        args = build_parser().parse_args(["curve", "--config", "a.cfg", "--tau", "1", "--tau", "2",
                                          "--state", "2", "--point", "0.5"])
        assert args.tau == [1.0, 2.0]
        assert args.state == [2]
        assert args.point == ["0.5"]

    def test_missing_command(self):
        """Test a missing subcommand is a usage error"""
        assert main([]) == 2

    def test_version(self, capsys):
        """Test --version exits cleanly"""
        assert main(["--version"]) == 0
        assert "1.0.0" in capsys.readouterr().out


class TestExitCodes:
    """Test error exit codes"""

    def test_missing_config(self, tmp_path):
        """Test an unreadable configuration exits with 2"""
        assert main(["weights", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "o")]) == 2

    def test_invalid_problem(self, tmp_path):
        """Test a problem failing validation exits with 1"""
        path = write_problem(tmp_path, "coarse", TINY_PROBLEM.replace("time_step = 1/32", "time_step = 1/1024"))
        assert main(["solve", "--config", str(path), "--out", str(tmp_path / "o")]) == 1


class TestSubcommands:
    """Test subcommand outputs"""

    def test_weights(self, tiny_config, tmp_path):
        """Test the weights table and report are written"""
        out = tmp_path / "weights"
        status = main(["weights", "--config", str(tiny_config), "--out", str(out),
                       "--s-min", "-1", "--s-step", "0.25"])
        assert status == 0
        lines = (out / "weights.csv").read_text().strip().split("\n")
        assert lines[0] == "s,phi1_1,phi1_2,phi2_1,phi2_2"
        assert len(lines) == 6
        assert [float(v) for v in lines[-1].split(",")[:3]] == [0.0, 1.0, 0.0]
        report = json.loads((out / "weights.json").read_text())
        assert set(report["gap_integrals"]) == {"1-2", "2-1"}
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["subcommand"] == "weights"
        assert manifest["exit_status"] == 0
        assert "weights.csv" in manifest["outputs"]

    def test_solve(self, tiny_config, tmp_path):
        """Test snapshots, times and the report are written"""
        out = tmp_path / "solve"
        status = main(["solve", "--config", str(tiny_config), "--out", str(out), "--horizon", "0.25",
                       "--record-every", "4"])
        assert status == 0
        assert (out / "u_00000.csv").exists()
        assert (out / "u_00002.csv").exists()
        header = (out / "u_00000.csv").read_text().split("\n")[0]
        assert header == "index_1,x_1,u_1,u_2"
        report = json.loads((out / "solve.json").read_text())
        assert report["lipschitz"]["passed"] is True

    def test_crosscheck(self, tiny_config, tmp_path):
        """Test the crosscheck passes on the flat problem"""
        out = tmp_path / "cross"
        assert main(["crosscheck", "--config", str(tiny_config), "--out", str(out), "--horizon", "0.25"]) == 0
        assert json.loads((out / "crosscheck.json").read_text())["passed"] is True

    def test_crosscheck_global_dissipation(self, tiny_config, tmp_path):
        """Test the constant-dissipation variant is selectable and recorded"""
        out = tmp_path / "cross_global"
        assert main(["crosscheck", "--config", str(tiny_config), "--out", str(out), "--horizon", "0.25",
                     "--global-dissipation"]) == 0
        report = json.loads((out / "crosscheck.json").read_text())
        assert report["local_dissipation"] is False
        assert report["passed"] is True

    def test_battery(self, tiny_config, tmp_path):
        """Test a suite with one selected check"""
        suite = tmp_path / "tiny.suite"
        suite.write_text("problems = tiny\nt_long = 2\n")
        out = tmp_path / "battery"
        assert main(["battery", "--suite", str(suite), "--out", str(out), "--check", "weights.mixing"]) == 0
        assert json.loads((out / "battery.json").read_text())["passed"] is True
