"""
Coupled Hamilton-Jacobi Solver Package
"""

__version__ = '1.0.0'

from .torus import TorusGrid, GridError
from .hamiltonians import HamiltonianSpec, LagrangianSpec, LegendreError, legendre_transform
from .coupling import CouplingMatrix, CouplingError
from .problem import ProblemSpec, ValidationError, ValidationReport, validate, require_valid
from .config import ConfigError, SuiteConfig, load_problem, load_suite
from .weights import WeightSystem, WeightsError, weights_general, weights_two_state, weight_gap_integral
from .chain import ChainError, mc_expectation, sample_chain
from .solver import SchemeError, SchemeParams, ValueField, DPPOperator, solve, solve_lf, step_dpp
from .ergodic import ErgodicSolution, ergodic_constant_slope, ergodic_functions, convergence_audit
from .curves import Curve, extract_curve, along_curve_identities, stability_audit, lipschitz_audit
from .manifest import RunManifest
from .battery import run_battery
from .visualizer import ReportVisualizer

__all__ = [
    'TorusGrid',
    'GridError',
    'HamiltonianSpec',
    'LagrangianSpec',
    'LegendreError',
    'legendre_transform',
    'CouplingMatrix',
    'CouplingError',
    'ProblemSpec',
    'ValidationError',
    'ValidationReport',
    'validate',
    'require_valid',
    'ConfigError',
    'SuiteConfig',
    'load_problem',
    'load_suite',
    'WeightSystem',
    'WeightsError',
    'weights_general',
    'weights_two_state',
    'weight_gap_integral',
    'ChainError',
    'mc_expectation',
    'sample_chain',
    'SchemeError',
    'SchemeParams',
    'ValueField',
    'DPPOperator',
    'solve',
    'solve_lf',
    'step_dpp',
    'ErgodicSolution',
    'ergodic_constant_slope',
    'ergodic_functions',
    'convergence_audit',
    'Curve',
    'extract_curve',
    'along_curve_identities',
    'stability_audit',
    'lipschitz_audit',
    'RunManifest',
    'run_battery',
    'ReportVisualizer',
]
