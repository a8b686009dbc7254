"""
Battery module for the coupled Hamilton-Jacobi solver
Acceptance checks over a suite of named problems and the pass / fail matrix they produce
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .chain import ChainError, mc_comparison
from .config import SuiteConfig, load_problem
from .curves import (along_curve_identities, extend_curve, extract_curve, extract_curves,
                     kink_mask, lipschitz_audit, stability_audit)
from .ergodic import (convergence_audit, ergodic_constant_slope, ergodic_functions, shift_covariance,
                      tolerance_c, tolerance_conv, tolerance_e)
from .hamiltonians import LegendreError
from .manifest import PhaseTimer, write_json
from .problem import ProblemSpec, validate
from .solver import (DPPOperator, SchemeError, SchemeParams, crosscheck, dpp_window_check, self_convergence,
                     solve)
from .visualizer import ReportVisualizer, render_text
from .weights import (WeightsError, semigroup_defect, switching_matrix, weight_gap_integral, weights_for,
                      weights_general, weights_two_state)

logger = logging.getLogger(__name__)

PASS = "PASS"
FAIL = "FAIL"
INFO = "INFO"
SKIP = "SKIP"


@dataclass
class CheckResult:
    """
    Outcome of one acceptance check on one problem

    Attributes:
        check: Check name, e.g. 'ergodic.constant'
        problem: Problem name ('suite' for suite-wide aggregates)
        status: PASS, FAIL, INFO (audit reported, not asserted) or SKIP (not applicable)
        detail: One-line human-readable summary
        data: Numbers behind the verdict
    """

    check: str
    problem: str
    status: str
    detail: str = ""
    data: Dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status != FAIL

    def to_dict(self) -> dict:
        return {"check": self.check, "problem": self.problem, "status": self.status,
                "detail": self.detail, "data": self.data}


CHECKS: List[Tuple[str, Callable]] = []


def battery_check(name: str):
    """Register a check run once per problem, in registration order"""
    def register(func):
        CHECKS.append((name, func))
        return func
    return register


def _verdict(ok: bool, strict: bool = True) -> str:
    if ok:
        return PASS
    return FAIL if strict else INFO


def _snap(time: float, time_step: float) -> float:
    return max(1, int(round(time / time_step))) * time_step


class ProblemRun:
    """
    One problem of a suite with the expensive results its checks share

    The long run, the ergodic solution, the evolution to the crosscheck horizon
    and the extracted curves are computed once, on first use.
    """

    CROSSCHECK_HORIZON = 5.0
    MC_TIMES = (0.25, 0.5, 1.0, 2.0, 4.0)
    STABILITY_TAUS = (1.0, 2.0)
    STABILITY_HORIZONS = (15.0, 20.0)
    STABILITY_DELTA = 0.2
    SHIFT = 0.5
    REFINEMENT_WINDOW = 2.0
    CONCATENATION_WINDOW = 1.0

    def __init__(self, path: Path, suite: SuiteConfig, tol_scale: float = 1.0, threads: int = 1,
                 seed: int = 0, index: int = 0):
        """
        Initialize run

        Args:
            path: Problem configuration file
            suite: Suite the problem belongs to
            tol_scale: Multiplier of every tolerance
            threads: Worker threads for Monte Carlo sampling
            seed: Root seed of the suite
            index: Position of the problem in the suite
        """
        self.path = Path(path)
        self.suite = suite
        self.tol_scale = tol_scale
        self.threads = threads
        self.seed = seed
        self.index = index
        self.spec: ProblemSpec = suite.load(self.path)
        self.params = SchemeParams.for_problem(self.spec)
        self.operator = DPPOperator(self.spec, self.params)
        self.seeds: Dict[str, int] = {}

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def t_long(self) -> float:
        return _snap(self.suite.t_long, self.params.time_step)

    def tolerance(self, key: str, default: float) -> float:
        """Suite override times tol_scale, else the computed default"""
        override = getattr(self.suite, key)
        return default if override is None else override * self.tol_scale

    def case_seed(self, label: str, case: int) -> int:
        value = int(np.random.SeedSequence([self.seed, self.index, case]).generate_state(1)[0])
        self.seeds[f"{self.name}:{label}:{case}"] = value
        return value

    def solve_ergodic(self, spec: ProblemSpec, operator: Optional[DPPOperator] = None):
        """Slope run and relative value iteration of spec with the run's scheme parameters"""
        operator = operator or DPPOperator(spec, self.params)
        record_every = 1 if spec.grid.dim == 1 else 16
        slope = ergodic_constant_slope(spec, self.params, self.t_long, record_every=record_every,
                                       tol_scale=self.tol_scale, operator=operator)
        return ergodic_functions(spec, self.params, self.t_long, slope=slope,
                                 tol_scale=self.tol_scale, operator=operator)

    @cached_property
    def ergodic(self):
        return self.solve_ergodic(self.spec, self.operator)

    @cached_property
    def evolution(self):
        horizon = _snap(min(self.CROSSCHECK_HORIZON, self.t_long), self.params.time_step)
        return solve(self.spec.with_horizon(horizon), self.params, record_every=4, operator=self.operator)

    @cached_property
    def curve_points(self) -> np.ndarray:
        grid = self.spec.grid
        n = grid.points_per_axis
        return np.stack([grid.node_point((k,) * grid.dim) for k in (0, n // 4, n // 2)])

    @cached_property
    def stability_pairs(self) -> List[Tuple[float, float]]:
        dt = self.params.time_step
        horizons = [_snap(T, dt) for T in self.STABILITY_HORIZONS if T <= self.t_long + 1e-9] or [self.t_long]
        pairs = []
        for T in horizons:
            for tau in self.STABILITY_TAUS:
                tau = _snap(tau, dt)
                if tau < T and tau / (T - tau) <= self.STABILITY_DELTA:
                    pairs.append((tau, T))
        return pairs

    @cached_property
    def curves(self):
        window = max(T for _, T in self.stability_pairs) if self.stability_pairs else self.t_long
        points = np.repeat(self.curve_points, self.spec.m, axis=0)
        states = list(range(self.spec.m)) * len(self.curve_points)
        return extract_curves(self.ergodic, points, states, window, self.spec, self.params, self.operator)


def _two_state_rates(spec: ProblemSpec) -> Optional[Tuple[float, float]]:
    entries = spec.coupling.entries
    if spec.m == 2 and entries[0, 0] > 0.0 and entries[1, 1] > 0.0:
        return float(entries[0, 0]), float(entries[1, 1])
    return None


def _expm_rows(entries: np.ndarray, start: int, times: np.ndarray) -> np.ndarray:
    return np.stack([linalg.expm(entries * s)[start] for s in times])


@battery_check("weights.closed_form")
def check_weight_closed_form(run: ProblemRun) -> CheckResult:
    spec = run.spec
    s = -np.arange(500, -1, -1) / 100.0
    rates = _two_state_rates(spec)
    worst_formula, worst_general = 0.0, 0.0
    for i in range(spec.m):
        reference = _expm_rows(spec.coupling.entries, i, s)
        if rates is not None:
            closed = weights_two_state(rates[0], rates[1], i).eval(s)
            if rates == (1.0, 1.0):
                formula = np.empty_like(closed)
                formula[:, i] = 0.5 + 0.5 * np.exp(2.0 * s)
                formula[:, 1 - i] = 0.5 - 0.5 * np.exp(2.0 * s)
                worst_formula = max(worst_formula, float(np.max(np.abs(closed - formula))))
            reference = closed
        if spec.coupling.is_balanced():
            general = weights_general(spec.coupling, i).eval(s)
            worst_general = max(worst_general, float(np.max(np.abs(general - reference))))
        else:
            worst_general = max(worst_general, float(np.max(np.abs(
                _expm_rows(spec.coupling.entries, i, s) - reference))))
    ok = worst_formula <= 1e-12 and worst_general <= 1e-9
    return CheckResult("weights.closed_form", run.name, _verdict(ok),
                       f"formula {worst_formula:.2e}, general vs reference {worst_general:.2e}",
                       {"formula_error": worst_formula, "general_error": worst_general})


@battery_check("weights.monte_carlo")
def check_monte_carlo(run: ProblemRun) -> CheckResult:
    spec = run.spec
    fields = [np.full(spec.grid.shape, float(k + 1)) for k in range(spec.m)]
    x = spec.grid.node_point(spec.grid.origin)
    cases = []
    for i in range(spec.m):
        for t in run.MC_TIMES:
            seed = run.case_seed("mc", len(cases))
            comparison = mc_comparison(spec.coupling, i, t, fields, x, run.suite.mc_samples, seed, run.threads)
            cases.append({"start": i + 1, "t": t, "seed": seed, **comparison.to_dict(),
                          "within": comparison.within(3.0)})
    within = sum(case["within"] for case in cases)
    return CheckResult("weights.monte_carlo", run.name, INFO, f"{within}/{len(cases)} within 3 standard errors",
                       {"within": within, "total": len(cases), "cases": cases})


@battery_check("weights.mixing")
def check_mixing(run: ProblemRun) -> CheckResult:
    worst = semigroup_defect(run.spec.coupling, np.linspace(-5.0, 0.0, 100))
    tolerance = 1e-12 if _two_state_rates(run.spec) else 1e-9
    return CheckResult("weights.mixing", run.name, _verdict(worst <= tolerance),
                       f"max semigroup defect {worst:.2e} (tolerance {tolerance:.0e})",
                       {"max_defect": worst, "tolerance": tolerance})


@battery_check("weights.partition")
def check_partition(run: ProblemRun) -> CheckResult:
    spec = run.spec
    s = np.linspace(-20.0, 0.0, 2001)
    partition, excess = 0.0, -np.inf
    for i in range(spec.m):
        system = weights_for(spec.coupling, i)
        partition = max(partition, float(np.max(np.abs(system.eval(s).sum(axis=-1) - 1.0))))
        if system.coefficients is not None:
            gap = np.abs(system.eval(-10.0) - system.stationary) - system.tail_bound(-10.0)
            excess = max(excess, float(np.max(gap)))
    ok = partition <= 1e-10 and excess <= 1e-12
    return CheckResult("weights.partition", run.name, _verdict(ok),
                       f"sum defect {partition:.2e}, tail excess {excess:.2e}",
                       {"partition_defect": partition, "tail_excess": excess})


@battery_check("weights.gap_integral")
def check_gap_integral(run: ProblemRun) -> CheckResult:
    spec = run.spec
    values, drift, exact = {}, 0.0, None
    for i in range(spec.m):
        system = weights_for(spec.coupling, i)
        for j in range(spec.m):
            if j == i:
                continue
            fine = weight_gap_integral(system, i, j)
            coarse = weight_gap_integral(system, i, j, quadrature_tolerance=1e-6)
            values[f"{i + 1}-{j + 1}"] = fine.value
            drift = max(drift, abs(fine.value - coarse.value))
    if _two_state_rates(spec) == (1.0, 1.0):
        exact = abs(values["1-2"] - 0.5)
    finite = all(math.isfinite(value) for value in values.values())
    ok = finite and drift <= 1e-6 and (exact is None or exact <= 1e-8)
    detail = f"finite {finite}, refinement drift {drift:.2e}"
    if exact is not None:
        detail += f", |I - 1/2| {exact:.2e}"
    return CheckResult("weights.gap_integral", run.name, _verdict(ok, strict=spec.coupling.is_balanced()), detail,
                       {"values": values, "drift": drift, "two_state_error": exact})


@battery_check("solver.crosscheck")
def check_crosscheck(run: ProblemRun) -> CheckResult:
    horizon = _snap(min(run.CROSSCHECK_HORIZON, run.t_long), run.params.time_step)
    report = crosscheck(run.spec.with_horizon(horizon), run.params, run.tol_scale)
    return CheckResult("solver.crosscheck", run.name, _verdict(report.passed),
                       f"sup difference {report.sup_difference:.3e} <= {report.bound:.3e} at T={horizon:g}",
                       {"horizon": horizon, **report.to_dict()})


@battery_check("solver.self_convergence")
def check_self_convergence(run: ProblemRun) -> CheckResult:
    base = max(16, run.spec.grid.points_per_axis // 4)

    def build(points: int) -> ProblemSpec:
        return load_problem(run.path, points=points, time_step=1.0 / (2 * points), horizon=1.0)

    study = self_convergence(build, base, levels=3)
    if study.differences[0] < 1e-10:
        return CheckResult("solver.self_convergence", run.name, SKIP, "exact at every resolution",
                           study.to_dict())
    ok = 1.5 <= study.ratio <= 3.0
    return CheckResult("solver.self_convergence", run.name, _verdict(ok),
                       f"ratio {study.ratio:.3f} over N={study.points}", study.to_dict())


@battery_check("solver.closed_form_evolution")
def check_closed_form_evolution(run: ProblemRun) -> CheckResult:
    spec = run.spec
    flat = all(not np.any(h.potential) for h in spec.hamiltonians)
    constant = all(np.ptp(g) == 0.0 for g in spec.initial_data)
    rest = all(abs(float(h.kinetic(np.zeros(spec.grid.dim)))) == 0.0 and not np.any(h.kinetic_minimizer())
               for h in spec.hamiltonians)
    if not (flat and constant and rest):
        return CheckResult("solver.closed_form_evolution", run.name, SKIP, "needs V = 0 and constant data")
    g = np.array([float(field.flat[0]) for field in spec.initial_data])
    alpha = float(np.ptp(g))
    worst = 0.0
    for t, values in zip(run.evolution.times, run.evolution.values):
        exact = switching_matrix(spec.coupling, -t) @ g
        error = np.max(np.abs(values.reshape(spec.m, -1) - exact[:, None]))
        worst = max(worst, float(error))
    tolerance = 2.0 * run.params.time_step * alpha * run.tol_scale + 1e-12
    return CheckResult("solver.closed_form_evolution", run.name, _verdict(worst <= tolerance),
                       f"max error {worst:.2e} <= {tolerance:.2e}", {"max_error": worst, "tolerance": tolerance})


@battery_check("solver.dpp_window")
def check_dpp_window(run: ProblemRun) -> CheckResult:
    dt = run.params.time_step
    t = 8 * dt
    vf = solve(run.spec.with_horizon(t), run.params, record_every=1, operator=run.operator)
    seed = run.case_seed("dpp", 0)
    single = dpp_window_check(vf, run.spec, run.params, dt, t, seed=seed)
    double = dpp_window_check(vf, run.spec, run.params, 2 * dt, t, seed=seed, direct=True)
    ok = single.max_discrepancy <= 1e-12 and double.passed
    return CheckResult("solver.dpp_window", run.name, _verdict(ok),
                       f"one step {single.max_discrepancy:.1e}, two steps {double.max_discrepancy:.2e} "
                       f"<= {double.bound:.2e}, direct ok {double.direct_ok}",
                       {"single": single.to_dict(), "double": double.to_dict()})


@battery_check("solver.lipschitz")
def check_lipschitz(run: ProblemRun) -> CheckResult:
    report = lipschitz_audit(run.evolution, run.spec, tol_scale=run.tol_scale)
    return CheckResult("solver.lipschitz", run.name, _verdict(report.passed),
                       f"time quotient {report.time_quotient:.4g} vs C1 {report.c1:.4g}", report.to_dict())


@battery_check("solver.subsolution")
def check_subsolution(run: ProblemRun) -> CheckResult:
    es = run.ergodic
    horizon = _snap(min(2.0, run.t_long), run.params.time_step)
    spec = run.spec.with_initial_data(list(es.values)).with_horizon(horizon)
    vf = solve(spec, run.params, record_every=8, operator=DPPOperator(spec, run.params))
    slack = tolerance_e(run.spec, run.params, run.tol_scale)
    worst = max(float(np.max(es.values - es.c * t - values)) for t, values in zip(vf.times, vf.values))
    return CheckResult("solver.subsolution", run.name, _verdict(worst <= slack),
                       f"max (v - ct - u) {worst:.2e} <= {slack:.2e}", {"excess": worst, "slack": slack})


@battery_check("ergodic.constant")
def check_ergodic_constant(run: ProblemRun) -> CheckResult:
    es = run.ergodic
    tol = run.tolerance("tol_c", tolerance_c(run.spec, run.params, run.tol_scale))
    agree = abs(es.c_slope - es.c_relative_value) <= tol
    expected = run.spec.expected_c
    matches = True
    if expected is not None:
        matches = abs(es.c_slope - expected) <= tol and abs(es.c_relative_value - expected) <= tol
    detail = f"c slope {es.c_slope:.6f}, relative value {es.c_relative_value:.6f}"
    if expected is not None:
        detail += f", expected {expected:g}"
    return CheckResult("ergodic.constant", run.name, _verdict(agree and matches), detail,
                       {**es.summary(), "tolerance": tol, "expected_c": expected})


@battery_check("ergodic.residual")
def check_ergodic_residual(run: ProblemRun) -> CheckResult:
    es = run.ergodic
    tol = run.tolerance("tol_e", es.tol_e)
    return CheckResult("ergodic.residual", run.name, _verdict(es.max_residual <= tol),
                       f"upwind {es.max_residual:.3e} <= {tol:.3e} (Lax-Friedrichs {es.max_lf_residual:.3e})",
                       {"max_residual": es.max_residual, "max_lf_residual": es.max_lf_residual, "tolerance": tol})


@battery_check("ergodic.shift_covariance")
def check_shift_covariance(run: ProblemRun) -> CheckResult:
    shifted = run.solve_ergodic(run.spec.shifted_potentials(run.SHIFT))
    tol = run.tolerance("tol_c", tolerance_c(run.spec, run.params, run.tol_scale)) / 10.0
    report = shift_covariance(run.ergodic, shifted, run.SHIFT, tol)
    return CheckResult("ergodic.shift_covariance", run.name, _verdict(report.passed),
                       f"c(V+{run.SHIFT:g}) - c(V) - {run.SHIFT:g}: slope {report.slope_error:.2e}, "
                       f"relative value {report.relative_value_error:.2e} <= {tol:.2e}; "
                       f"max |dv| {report.values_error:.2e}",
                       {**report.to_dict(), "c_slope_shifted": shifted.c_slope,
                        "c_relative_value_shifted": shifted.c_relative_value})


@battery_check("ergodic.convergence")
def check_convergence(run: ProblemRun) -> CheckResult:
    audit = convergence_audit(run.spec, run.params, run.ergodic, run.t_long, tol_conv=run.suite.tol_conv,
                              tol_scale=run.tol_scale, operator=run.operator)
    return CheckResult("ergodic.convergence", run.name, _verdict(audit.passed),
                       f"d(T_long) {audit.final:.3e} <= {audit.tolerance:.3e}, monotone {audit.monotone}",
                       audit.to_dict())


def _smooth_endpoints(run: ProblemRun, curves) -> List[bool]:
    grid = run.spec.grid
    masks = [kink_mask(run.spec, values) for values in run.ergodic.values]
    smooth = []
    for curve in curves:
        index = tuple(int(round(c * grid.points_per_axis)) % grid.points_per_axis for c in curve.points[0])
        smooth.append(not any(mask[index] for mask in masks))
    return smooth


@battery_check("curves.defect")
def check_curve_defect(run: ProblemRun) -> CheckResult:
    tol = tolerance_conv(run.spec, run.params, run.tol_scale)
    audited = [curve for curve, smooth in zip(run.curves, _smooth_endpoints(run, run.curves))
               if smooth and not curve.untrusted]
    if not audited:
        return CheckResult("curves.defect", run.name, SKIP, "no smooth trusted endpoints")
    worst = max(abs(curve.window_defect) for curve in audited)
    strict = run.spec.is_symmetric
    return CheckResult("curves.defect", run.name, _verdict(worst <= tol, strict),
                       f"max |window defect| {worst:.3e} <= {tol:.3e} over {len(audited)} curves",
                       {"max_defect": worst, "tolerance": tol, "curves": len(audited), "strict": strict})


@battery_check("curves.refinement")
def check_curve_refinement(run: ProblemRun) -> CheckResult:
    if not run.spec.is_symmetric:
        return CheckResult("curves.refinement", run.name, SKIP, "states differ; single-curve audit not asserted")
    grid = run.spec.grid
    fine_spec = load_problem(run.path, points=2 * grid.points_per_axis, time_step=run.params.time_step / 2.0)
    fine_params = SchemeParams.for_problem(fine_spec)
    fine_es = ergodic_functions(fine_spec, fine_params, run.t_long, tol_scale=run.tol_scale)
    window = _snap(run.REFINEMENT_WINDOW, run.params.time_step)
    x = grid.node_point((grid.points_per_axis // 4,) * grid.dim)
    coarse = extract_curve(run.ergodic, x, 0, window, run.spec, run.params, run.operator)
    fine = extract_curve(fine_es, x, 0, window, fine_spec, fine_params)
    defects = (abs(coarse.window_defect), abs(fine.window_defect))
    data = {"coarse": defects[0], "fine": defects[1], "window": window}
    if min(defects) <= 1e-6:
        return CheckResult("curves.refinement", run.name, INFO,
                           f"defects {defects[0]:.1e}, {defects[1]:.1e} at the noise floor", data)
    ratio = defects[0] / defects[1]
    data["ratio"] = ratio
    return CheckResult("curves.refinement", run.name, _verdict(1.4 <= ratio <= 3.0),
                       f"defect ratio {ratio:.3f} under 2x refinement", data)


@battery_check("curves.concatenation")
def check_concatenation(run: ProblemRun) -> CheckResult:
    grid = run.spec.grid
    window = _snap(run.CONCATENATION_WINDOW, run.params.time_step)
    x = grid.node_point((grid.points_per_axis // 4,) * grid.dim)
    whole = extract_curve(run.ergodic, x, 0, 2 * window, run.spec, run.params, run.operator)
    half = extract_curve(run.ergodic, x, 0, window, run.spec, run.params, run.operator)
    joined = extend_curve(half, run.ergodic, window, run.spec, run.params, run.operator)
    same = bool(np.array_equal(whole.points, joined.points) and np.array_equal(whole.velocities, joined.velocities))
    return CheckResult("curves.concatenation", run.name, _verdict(same),
                       "node-for-node identical" if same else "concatenated curve differs",
                       {"identical": same, "window": window})


@battery_check("curves.identities")
def check_identities(run: ProblemRun) -> CheckResult:
    reports = [along_curve_identities(curve, run.ergodic, run.spec, run.params, tol_scale=run.tol_scale)
               for curve in run.curves]
    fenchel = min(report.fenchel_min for report in reports)
    trusted = [report for report, curve in zip(reports, run.curves) if not curve.untrusted]
    identity = max((report.identity_defect for report in trusted), default=0.0)
    stationarity = max((report.stationarity_defect for report in trusted), default=0.0)
    low = sum(report.low_confidence for report in reports)
    defects_ok = all(report.defects_ok or report.low_confidence for report in trusted)
    status = FAIL if fenchel < -1e-12 else _verdict(defects_ok, run.spec.is_symmetric)
    return CheckResult("curves.identities", run.name, status,
                       f"Fenchel min {fenchel:.2e}, identity {identity:.3e}, stationarity {stationarity:.3e}, "
                       f"low-confidence {low}/{len(reports)}",
                       {"fenchel_min": fenchel, "identity_defect": identity, "stationarity_defect": stationarity,
                        "low_confidence": low, "reports": [report.to_dict() for report in reports]})


@battery_check("curves.stability")
def check_stability(run: ProblemRun) -> CheckResult:
    if not run.stability_pairs:
        return CheckResult("curves.stability", run.name, SKIP, "no admissible (tau, T) pair for T_long")
    vf = run.ergodic.slope_run
    reports = []
    for curve in run.curves:
        for tau, T in run.stability_pairs:
            reports.append(stability_audit(curve, vf, run.ergodic, tau, T, run.spec, params=run.params,
                                           delta0=run.STABILITY_DELTA, tol_scale=run.tol_scale))
    coupling_ok = all(report.coupling_ok for report in reports)
    inequality_ok = all(report.inequality_ok for report in reports)
    margin = min(report.margin for report in reports)
    widenings = max(report.widenings for report in reports)
    status = FAIL if not coupling_ok else _verdict(inequality_ok, run.spec.is_symmetric)
    return CheckResult("curves.stability", run.name, status,
                       f"min margin {margin:.3e}, widenings {widenings}, coupling bound ok {coupling_ok}",
                       {"pairs": [list(pair) for pair in run.stability_pairs], "min_margin": margin,
                        "reports": [report.to_dict() for report in reports]})


def aggregate_monte_carlo(results: Sequence[CheckResult], required: float = 0.95) -> Optional[CheckResult]:
    """Suite-wide share of Monte Carlo cases within three standard errors"""
    cases = [result for result in results if result.check == "weights.monte_carlo" and "total" in result.data]
    if not cases:
        return None
    within = sum(result.data["within"] for result in cases)
    total = sum(result.data["total"] for result in cases)
    needed = math.ceil(required * total)
    return CheckResult("weights.monte_carlo", "suite", _verdict(within >= needed),
                       f"{within}/{total} within 3 standard errors (need {needed})",
                       {"within": within, "total": total, "needed": needed})


@dataclass
class BatteryOutcome:
    """Results of a battery run and its exit status (0 iff every check passed)"""
    suite: str
    results: List[CheckResult]
    seeds: Dict[str, int] = field(default_factory=dict)

    @property
    def failures(self) -> List[CheckResult]:
        return [result for result in self.results if not result.passed]

    @property
    def exit_status(self) -> int:
        return 0 if not self.failures else 1

    def matrix(self) -> dict:
        return {
            "suite": self.suite,
            "passed": not self.failures,
            "results": [result.to_dict() for result in self.results],
        }


PACKAGE_ERRORS = (SchemeError, WeightsError, ChainError, LegendreError)


def _short(error: Exception) -> str:
    return str(error.args[0]) if error.args else repr(error)


def run_battery(suite: SuiteConfig, out_dir=None, threads: int = 1, tol_scale: Optional[float] = None,
                seed: Optional[int] = None, checks: Optional[Sequence[str]] = None,
                timer: Optional[PhaseTimer] = None) -> BatteryOutcome:
    """
    Run every registered check on every problem of a suite

    Args:
        suite: Suite configuration
        out_dir: Where battery.json and battery.txt go (optional)
        threads: Worker threads for Monte Carlo sampling
        tol_scale: Multiplier of every tolerance (default: the suite's)
        seed: Root seed (default: the suite's)
        checks: Names of the checks to run (default: all)
        timer: Phase timer to record per-check timings in

    Returns:
        BatteryOutcome
    """
    tol_scale = suite.tol_scale if tol_scale is None else tol_scale
    seed = suite.seed if seed is None else seed
    timer = timer or PhaseTimer()
    selected = [(name, check) for name, check in CHECKS if checks is None or name in checks]
    results: List[CheckResult] = []
    seeds: Dict[str, int] = {}

    for index, path in enumerate(suite.problems):
        run = ProblemRun(path, suite, tol_scale, threads, seed, index)
        report = validate(run.spec)
        if not report.accepted:
            results.append(CheckResult("problem.validate", run.name, FAIL,
                                       "; ".join(f"{o.name}: {o.detail}" for o in report.failures()),
                                       report.to_dict()))
            continue
        logger.info(f"Battery: problem '{run.name}' ({len(selected)} checks)")
        for name, check in selected:
            with timer.phase(f"{run.name}:{name}"):
                try:
                    result = check(run)
                except PACKAGE_ERRORS as e:
                    result = CheckResult(name, run.name, FAIL, f"{type(e).__name__}: {_short(e)}")
            logger.debug(f"{run.name} {name}: {result.status} {result.detail}")
            if result.status == FAIL:
                logger.warning(f"Check {name} failed on '{run.name}': {result.detail}")
            results.append(result)
        seeds.update(run.seeds)

    aggregate = aggregate_monte_carlo(results)
    if aggregate is not None:
        results.append(aggregate)
    outcome = BatteryOutcome(suite=suite.name, results=results, seeds=seeds)
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_json(out_dir / "battery.json", outcome.matrix())
        text = render_text(ReportVisualizer().matrix_table(results))
        (out_dir / "battery.txt").write_text(text, encoding="utf-8")
    logger.info(f"Battery '{suite.name}': {len(results) - len(outcome.failures)}/{len(results)} checks passed")
    return outcome
