#!/usr/bin/env python3
"""
Main entry point for the coupled Hamilton-Jacobi solver
"""

import sys
import os
import argparse
import logging
from pathlib import Path

import numpy as np

# Add repository root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src import __version__
from src.battery import PACKAGE_ERRORS, run_battery
from src.chain import mc_comparison
from src.config import ConfigError, load_problem, load_suite
from src.coupling import CouplingError
from src.curves import along_curve_identities, extract_curves, lipschitz_audit, stability_audit
from src.ergodic import convergence_audit, ergodic_constant_slope, ergodic_functions
from src.manifest import RunContext, RunManifest, config_hash
from src.problem import ValidationError, require_valid
from src.solver import DPPOperator, SchemeParams, crosscheck, solve
from src.visualizer import ReportVisualizer
from src.weights import switching_matrix, weight_gap_integral, weights_for

logger = logging.getLogger("coupled-hj")

SUBCOMMANDS = ("weights", "solve", "crosscheck", "ergodic", "converge", "curve", "battery")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--out', type=Path, default=None, help='Output directory (default: runs/<subcommand>)')
    common.add_argument('--seed', type=int, default=None, help='Root random seed')
    common.add_argument('--threads', type=int, default=1, help='Worker threads for sampling (default: 1)')
    common.add_argument('--tol-scale', type=float, default=None, help='Multiply every tolerance by FACTOR')
    common.add_argument('-d', '--debug', action='store_true', help='Enable debug output')

    problem = argparse.ArgumentParser(add_help=False)
    problem.add_argument('--config', type=Path, required=True, help='Problem configuration file')
    problem.add_argument('--points', type=int, default=None, help='Override grid points per axis')
    problem.add_argument('--time-step', type=float, default=None, help='Override the time step')
    problem.add_argument('--horizon', type=float, default=None, help='Override the horizon T')

    long_run = argparse.ArgumentParser(add_help=False)
    long_run.add_argument('--t-long', type=float, default=20.0, help='Length of the long-time run (default: 20)')

    parser = argparse.ArgumentParser(description='Coupled Hamilton-Jacobi solver')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', required=True)

    weights = commands.add_parser('weights', parents=[common, problem], help='Switching weights of the coupling')
    weights.add_argument('--s-min', type=float, default=-10.0, help='Earliest time of the table (default: -10)')
    weights.add_argument('--s-step', type=float, default=0.01, help='Spacing of the table (default: 0.01)')
    weights.add_argument('--mc-samples', type=int, default=0, help='Monte Carlo samples per comparison (0: skip)')

    solve_cmd = commands.add_parser('solve', parents=[common, problem], help='Value functions up to the horizon')
    solve_cmd.add_argument('--record-every', type=int, default=None,
                           help='Write every n-th step (default: about ten snapshots)')

    cross = commands.add_parser('crosscheck', parents=[common, problem],
                                help='Semi-Lagrangian against Lax-Friedrichs')
    cross.add_argument('--record-every', type=int, default=8, help='Table every n-th step (default: 8)')
    cross.add_argument('--global-dissipation', action='store_true',
                       help='Constant Lax-Friedrichs dissipation instead of the local one')

    commands.add_parser('ergodic', parents=[common, problem, long_run], help='Ergodic constant and functions')
    commands.add_parser('converge', parents=[common, problem, long_run], help='Large-time convergence audit')

    curve = commands.add_parser('curve', parents=[common, problem, long_run], help='Extremal curves and audits')
    curve.add_argument('--state', type=int, action='append', default=None,
                       help='Start state, 1-based (repeatable; default: all)')
    curve.add_argument('--point', type=str, action='append', default=None,
                       help='End point as comma-separated coordinates (repeatable; default: origin)')
    curve.add_argument('--window', type=float, default=None, help='Curve window T (default: T_long)')
    curve.add_argument('--tau', type=float, action='append', default=None,
                       help='Short time of the stability audit (repeatable; default: 1)')
    curve.add_argument('--delta0', type=float, default=0.1, help='Largest tau / (T - tau) (default: 0.1)')

    battery = commands.add_parser('battery', parents=[common], help='Run the acceptance battery of a suite')
    battery.add_argument('--suite', type=Path, required=True, help='Suite file')
    battery.add_argument('--check', action='append', default=None, help='Run only this check (repeatable)')
    return parser


def configure_logging(debug: bool):
    if debug:
        logging.basicConfig(
            level=logging.DEBUG,
            format='[%(name)s] %(message)s'
        )
    else:
        logging.basicConfig(
            level=logging.INFO,
            format='%(message)s'
        )


def _load(args):
    spec = load_problem(args.config, points=args.points, time_step=args.time_step, horizon=args.horizon)
    require_valid(spec)
    return spec


def _node_rows(spec, columns):
    """Rows of 1-based node indices, coordinates and the given per-node columns"""
    grid = spec.grid
    indices = np.stack(np.unravel_index(np.arange(grid.size), grid.shape), axis=-1) + 1
    data = [np.asarray(column).reshape(grid.size) for column in columns]
    return np.column_stack([indices, grid.node_points()] + data)


def _node_header(spec, names):
    dim = spec.grid.dim
    return [f"index_{d + 1}" for d in range(dim)] + [f"x_{d + 1}" for d in range(dim)] + list(names)


def _tol_scale(args) -> float:
    return 1.0 if args.tol_scale is None else args.tol_scale


def run_weights(args, ctx: RunContext, ui: ReportVisualizer) -> int:
    spec = _load(args)
    coupling = spec.coupling
    count = int(round(-args.s_min / args.s_step))
    s = -args.s_step * np.arange(count, -1, -1)
    with ctx.phase("weights"):
        systems = [weights_for(coupling, i) for i in range(spec.m)]
        columns = [s] + [system.eval(s)[:, k] for system in systems for k in range(spec.m)]
        header = ["s"] + [f"phi{i + 1}_{k + 1}" for i in range(spec.m) for k in range(spec.m)]
        ctx.csv("weights.csv", header, np.column_stack(columns))
        gaps = {}
        for i, system in enumerate(systems):
            for j in range(spec.m):
                if j != i:
                    gaps[f"{i + 1}-{j + 1}"] = weight_gap_integral(system, i, j).to_dict()
    report = {"systems": [system.to_dict() for system in systems], "gap_integrals": gaps}
    if args.mc_samples > 0:
        seed = 0 if args.seed is None else args.seed
        ctx.manifest.seeds["monte_carlo"] = seed
        fields = [np.full(spec.grid.shape, float(k + 1)) for k in range(spec.m)]
        x = spec.grid.node_point(spec.grid.origin)
        with ctx.phase("monte_carlo"):
            report["monte_carlo"] = [
                {"start": i + 1, "t": t,
                 **mc_comparison(coupling, i, t, fields, x, args.mc_samples, seed + n, args.threads).to_dict()}
                for n, (i, t) in enumerate((i, t) for i in range(spec.m) for t in (0.5, 1.0, 2.0))
            ]
    ctx.json("weights.json", report)
    ui.print_summary(f"Weights of '{spec.name}'", {
        "states": spec.m,
        "method": systems[0].method,
        "decay rate": systems[0].decay_rate,
        **{f"gap integral {key}": value["value"] for key, value in gaps.items()},
    })
    return 0


def run_solve(args, ctx: RunContext, ui: ReportVisualizer) -> int:
    spec = _load(args)
    params = SchemeParams.for_problem(spec)
    record_every = args.record_every or max(1, spec.steps // 10)
    with ctx.phase("solve"):
        vf = solve(spec, params, record_every=record_every)
    names = [f"u_{k + 1}" for k in range(spec.m)]
    times = []
    for n, (t, values) in enumerate(zip(vf.times, vf.values)):
        name = f"u_{n:05d}.csv"
        ctx.csv(name, _node_header(spec, names), _node_rows(spec, values))
        times.append([n, t])
    ctx.csv("times.csv", ["snapshot", "t"], times)
    audit = lipschitz_audit(vf, spec, tol_scale=_tol_scale(args))
    ctx.json("solve.json", {"problem": spec.describe(), "boundary_fraction": vf.boundary_fraction,
                            "lipschitz": audit.to_dict(), "ledger": spec.ledger.to_dict()})
    ui.print_summary(f"Solved '{spec.name}'", {
        "horizon": spec.horizon,
        "steps": spec.steps,
        "snapshots": len(vf.times),
        "time quotient": audit.time_quotient,
        "C_1": audit.c1,
        "boundary fraction": vf.boundary_fraction,
    })
    return 0


def run_crosscheck(args, ctx: RunContext, ui: ReportVisualizer) -> int:
    spec = _load(args)
    params = SchemeParams.for_problem(spec, lf_local_dissipation=not args.global_dissipation)
    with ctx.phase("crosscheck"):
        report = crosscheck(spec, params, _tol_scale(args), record_every=args.record_every)
    ctx.csv("crosscheck.csv", ["t", "sup_difference"], report.rows)
    ctx.json("crosscheck.json", {"problem": spec.name, "horizon": spec.horizon,
                                 "local_dissipation": params.lf_local_dissipation, **report.to_dict()})
    ui.print_summary(f"Crosscheck of '{spec.name}'", report.to_dict())
    return 0 if report.passed else 1


def _ergodic(args, spec, params, ctx, operator, record_every=16):
    with ctx.phase("slope"):
        slope = ergodic_constant_slope(spec, params, args.t_long, record_every=record_every,
                                       tol_scale=_tol_scale(args), operator=operator)
    with ctx.phase("relative_value"):
        return ergodic_functions(spec, params, args.t_long, slope=slope, tol_scale=_tol_scale(args),
                                 operator=operator)


def run_ergodic(args, ctx: RunContext, ui: ReportVisualizer) -> int:
    spec = _load(args)
    params = SchemeParams.for_problem(spec)
    operator = DPPOperator(spec, params)
    es = _ergodic(args, spec, params, ctx, operator)
    names = [f"v_{k + 1}" for k in range(spec.m)] + [f"residual_{k + 1}" for k in range(spec.m)]
    ctx.csv("ergodic.csv", _node_header(spec, names), _node_rows(spec, list(es.values) + list(es.residuals)))
    means = [values[0].mean() for values in es.slope_run.values]
    ctx.csv("slope.csv", ["t", "mean_u_1"], np.column_stack([es.slope_run.times, means]))
    summary = es.summary()
    ctx.json("ergodic.json", {"problem": spec.name, **summary, "expected_c": spec.expected_c})
    ui.print_summary(f"Ergodic solution of '{spec.name}'", summary)
    return 0 if es.residual_ok and es.estimators_agree else 1


def run_converge(args, ctx: RunContext, ui: ReportVisualizer) -> int:
    spec = _load(args)
    params = SchemeParams.for_problem(spec)
    operator = DPPOperator(spec, params)
    es = _ergodic(args, spec, params, ctx, operator)
    with ctx.phase("convergence"):
        audit = convergence_audit(spec, params, es, args.t_long, tol_scale=_tol_scale(args), operator=operator)
    ctx.csv("converge.csv", ["t", "distance"], audit.rows)
    ctx.json("converge.json", {"problem": spec.name, **audit.to_dict()})
    ui.print_table(f"Convergence of '{spec.name}' (c = {audit.c:.6f})", ["t", "d(t)"], audit.rows)
    ui.print_summary("Verdict", {"monotone": audit.monotone, "final": audit.final,
                                 "tolerance": audit.tolerance, "passed": audit.passed})
    return 0 if audit.passed else 1


def _parse_point(text: str, dim: int) -> np.ndarray:
    try:
        values = [float(part) for part in text.split(",")]
    except ValueError:
        raise ConfigError(f"Bad point '{text}': expected comma-separated numbers")
    if len(values) != dim:
        raise ConfigError(f"Point '{text}' has {len(values)} coordinates, expected {dim}")
    return np.array(values)


def run_curve(args, ctx: RunContext, ui: ReportVisualizer) -> int:
    spec = _load(args)
    params = SchemeParams.for_problem(spec)
    operator = DPPOperator(spec, params)
    record_every = 1 if spec.grid.dim == 1 else 16
    es = _ergodic(args, spec, params, ctx, operator, record_every=record_every)
    states = [s - 1 for s in args.state] if args.state else list(range(spec.m))
    for state in states:
        if not 0 <= state < spec.m:
            raise ConfigError(f"State {state + 1} out of range 1..{spec.m}")
    points = [_parse_point(text, spec.grid.dim) for text in args.point] if args.point \
        else [spec.grid.node_point(spec.grid.origin)]
    window = args.window or args.t_long
    pairs = [(p, s) for p in points for s in states]
    with ctx.phase("extract"):
        curves = extract_curves(es, np.array([p for p, _ in pairs]), [s for _, s in pairs], window,
                                spec, params, operator)
    reports = []
    taus = args.tau or [1.0]
    with ctx.phase("audits"):
        for n, curve in enumerate(curves):
            ctx.csv(f"curve_{n + 1:03d}.csv", curve.header(), curve.rows())
            identities = along_curve_identities(curve, es, spec, params, tol_scale=_tol_scale(args))
            stability = []
            for tau in taus:
                if tau / (window - tau) <= args.delta0:
                    stability.append(stability_audit(curve, es.slope_run, es, tau, window, spec, params=params,
                                                     delta0=args.delta0, tol_scale=_tol_scale(args)).to_dict())
                else:
                    logger.warning(f"Skipping tau={tau}: tau / (T - tau) exceeds {args.delta0}")
            reports.append({
                "curve": n + 1, "start": curve.start + 1, "point": curve.points[0],
                "window_defect": curve.window_defect, "untrusted": curve.untrusted,
                "identities": identities.to_dict(), "stability": stability,
            })
    ctx.json("curve.json", {"problem": spec.name, "c": es.c, "window": window, "curves": reports})
    ui.print_table(f"Curves of '{spec.name}'", ["curve", "start", "defect", "Fenchel min", "untrusted"],
                   [(r["curve"], r["start"], r["window_defect"], r["identities"]["fenchel_min"], r["untrusted"])
                    for r in reports])
    failed = any(not r["identities"]["passed"] or not all(s["passed"] for s in r["stability"]) for r in reports)
    return 1 if failed else 0


def run_battery_command(args, ctx: RunContext, ui: ReportVisualizer) -> int:
    suite = load_suite(args.suite)
    outcome = run_battery(suite, out_dir=ctx.out_dir, threads=args.threads, tol_scale=args.tol_scale,
                          seed=args.seed, checks=args.check, timer=ctx.timer)
    ctx.manifest.outputs.extend(["battery.json", "battery.txt"])
    ctx.manifest.seeds.update(outcome.seeds)
    ui.print_matrix(outcome.results)
    if outcome.failures:
        ui.print_error(f"{len(outcome.failures)} check(s) failed")
    else:
        ui.print_info("All checks passed")
    return outcome.exit_status


HANDLERS = {
    "weights": run_weights,
    "solve": run_solve,
    "crosscheck": run_crosscheck,
    "ergodic": run_ergodic,
    "converge": run_converge,
    "curve": run_curve,
    "battery": run_battery_command,
}


def _config_texts(args):
    texts = []
    for name in ("config", "suite"):
        path = getattr(args, name, None)
        if path is not None and Path(path).is_file():
            texts.append(Path(path).read_text())
    return texts


def _parameters(args) -> dict:
    return {key: (str(value) if isinstance(value, Path) else value)
            for key, value in vars(args).items() if key != "debug"}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    # Configure logging based on debug flag
    configure_logging(args.debug)

    ui = ReportVisualizer()
    out_dir = args.out or Path("runs") / args.command
    manifest = RunManifest(subcommand=args.command, config_hash=config_hash(*_config_texts(args)),
                           parameters=_parameters(args), version=__version__)
    if args.seed is not None:
        manifest.seeds["root"] = args.seed

    try:
        with RunContext(out_dir, manifest) as ctx:
            status = HANDLERS[args.command](args, ctx, ui)
            manifest.exit_status = status
    except ConfigError as e:
        ui.print_error(str(e))
        return 2
    except ValidationError as e:
        ui.print_error(str(e))
        return 1
    except PACKAGE_ERRORS + (CouplingError,) as e:
        ui.print_error(str(e))
        return 1
    except KeyboardInterrupt:
        ui.print_warning("Interrupted by user")
        return 130

    logger.debug(f"Wrote {len(manifest.outputs)} files to {out_dir}")
    return status


if __name__ == '__main__':
    sys.exit(main())
