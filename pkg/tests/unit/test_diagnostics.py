"""
Unit tests for the diagnostics module
Tests failure classification and the text reports
"""

import numpy as np

from src.diagnostics import FieldDebugger, format_breakdown, format_failure_report
from src.solver import SchemeError, SchemeParams


class TestClassification:
    """Test failure categories"""

    def test_categories(self):
        """Test messages map to their categories"""
        debugger = FieldDebugger()
        assert debugger.classify_failure(SchemeError("CFL condition violated"))["category"] == "Stability Condition"
        assert debugger.classify_failure(SchemeError("Scheme produced non-finite values"))["category"] \
            == "Numerical Blow-up"
        assert debugger.classify_failure(SchemeError("Horizon 0.3 is not on the time lattice"))["category"] \
            == "Time Lattice Mismatch"
        assert debugger.classify_failure(SchemeError("other"))["category"] == "Scheme Error"
        assert debugger.classify_failure(FloatingPointError("overflow"))["category"] == "Floating Point Error"
        assert debugger.classify_failure(ValueError("x"))["category"] == "Unknown"

    def test_hints(self):
        """Test stability failures come with hints"""
        classification = FieldDebugger().classify_failure(SchemeError("CFL condition violated"))
        assert classification["hints"]
        assert classification["type"] == "SchemeError"


class TestDumps:
    """Test field and parameter dumps"""

    def test_fields(self):
        """Test finite and non-finite states are summarized"""
        fields = np.zeros((2, 4))
        fields[1, 2] = np.inf
        text = FieldDebugger(fields).dump_fields()
        assert "u_1: min" in text
        assert "u_2: 1 non-finite nodes, first at index (2,)" in text

    def test_missing(self):
        """Test missing context is reported as such"""
        debugger = FieldDebugger()
        assert debugger.dump_fields() == "Fields: (none captured)"
        assert debugger.dump_params() == "Scheme parameters: (none captured)"
        assert "time: -" in debugger.dump_position()

    def test_params(self):
        """Test parameters are listed by name"""
        text = FieldDebugger(params=SchemeParams(time_step=0.5, velocity_bound=2.0)).dump_params()
        assert "time_step: 0.5" in text
        assert "velocity_bound: 2.0" in text


class TestReports:
    """Test report formatting"""

    def test_failure_report(self):
        """Test the banner, position and message"""
        report = format_failure_report(ValueError("bad"), time=0.25, step=8)
        assert " SCHEME FAILURE " in report
        assert "Message: bad" in report
        assert "time: 0.25" in report
        assert "step: 8" in report

    def test_breakdown(self):
        """Test names are aligned and floats printed in full"""
        text = format_breakdown("stability", {"left": 0.5, "A": 3})
        lines = text.split("\n")
        assert "stability" in lines[1]
        assert lines[2] == f"  left : {0.5: .9e}"
        assert lines[3] == "  A    : 3"
