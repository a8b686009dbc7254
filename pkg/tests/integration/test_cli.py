"""
Integration tests for the command-line interface
Runs the long-time subcommands on coarse bundled problems
"""

import json

import pytest

from main import main

pytestmark = [pytest.mark.integration, pytest.mark.slow]

COARSE = ["--points", "32", "--time-step", "0.015625", "--t-long", "2"]


class TestLongRunCommands:
    """Test ergodic and curve subcommands"""

    def test_ergodic(self, problems_dir, tmp_path):
        """Test the ergodic report on the potential-free problem"""
        out = tmp_path / "ergodic"
        status = main(["ergodic", "--config", str(problems_dir / "zero-potential.cfg"), "--out", str(out)] + COARSE)
        assert status == 0
        report = json.loads((out / "ergodic.json").read_text())
        assert report["c"] == pytest.approx(0.0, abs=0.05)
        assert report["expected_c"] == 0
        assert (out / "ergodic.csv").exists()
        assert (out / "slope.csv").exists()

    def test_curve(self, problems_dir, tmp_path):
        """Test curves and their audits are written for both start states"""
        out = tmp_path / "curve"
        status = main(["curve", "--config", str(problems_dir / "zero-potential.cfg"), "--out", str(out),
                       "--point", "0.5", "--tau", "0.125"] + COARSE)
        assert status == 0
        report = json.loads((out / "curve.json").read_text())
        assert [c["start"] for c in report["curves"]] == [1, 2]
        assert all(len(c["stability"]) == 1 for c in report["curves"])
        assert (out / "curve_001.csv").exists()
        assert (out / "curve_002.csv").exists()

    def test_curve_bad_state(self, problems_dir, tmp_path):
        """Test an out-of-range state is a configuration error"""
        status = main(["curve", "--config", str(problems_dir / "zero-potential.cfg"), "--out", str(tmp_path),
                       "--state", "3"] + COARSE)
        assert status == 2
