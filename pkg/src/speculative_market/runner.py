from __future__ import annotations
import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm.contrib.logging import logging_redirect_tqdm

from .config import AppConfig, SolverSettings, ensure_dirs, load_settings
from .equilibrium import clearing_residual, portfolios
from .errors import (
    CFLError,
    ClampBudgetExceeded,
    ConfigError,
    EnumerationCapError,
    GridMismatchError,
    MarketValidationError,
    NumericalAbort,
)
from .grid import GridSpec
from .hjb_solver import MODES, optimal_assignment, solve_hjb
from .logs import configure_logging
from .market_model import load_market, require_valid, validate
from .mc_control import SimConfig, belief_expectation, control_value
from .models import MarketSpec
from .static_market import expectations, static_limits, static_price
from .storage import FLOAT_FORMAT, RunSummary, spec_hash, write_field_csv, write_json, write_summary, write_sweep_csv
from .verify import BREAKS, CRITERIA, run_verify


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_VALIDATION = 2
EXIT_CFL = 3
EXIT_NUMERIC = 4

SWEEP_PARAMETERS = ("s-scale", "alpha_plus", "alpha_minus", "common-scale", "alpha-scale")


def _parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", dest="out_dir", type=str, default=None, help="Artifact directory. Defaults to output.dir in solver.yaml")
    common.add_argument("--solver-config", dest="solver_config", type=str, default=None, help="Path to solver.yaml. Defaults to config/solver.yaml")
    common.add_argument("--log-level", dest="log_level", type=str, default=None, help="DEBUG, INFO, WARNING, ...")

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--config", dest="config", type=str, required=True, help="Market JSON document")
    grid.add_argument("--grid-nx", dest="grid_nx", type=int, default=None)
    grid.add_argument("--grid-nt", dest="grid_nt", type=int, default=None, help="Defaults to the CFL bound with the configured safety factor")
    grid.add_argument("--domain-width-multiplier", dest="width_multiplier", type=float, default=None)
    grid.add_argument("--kernel", dest="kernel", choices=("root", "enumerate"), default=None)

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--paths", dest="paths", type=int, default=None)
    sim.add_argument("--dt", dest="dt", type=float, default=None)
    sim.add_argument("--seed", dest="seed", type=int, default=None)
    sim.add_argument("--antithetic", dest="antithetic", action="store_true")
    sim.add_argument("--workers", dest="workers", type=int, default=None)

    parser = argparse.ArgumentParser(description="Equilibrium prices of a speculative market with costly positions")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", parents=[common, grid], help="Solve the price PDE and write field.csv")
    solve.add_argument("--mode", dest="mode", choices=MODES, default="full")
    solve.add_argument("--static", dest="static", action="store_true", help="Also compute the buy-and-hold price")

    sweep = sub.add_parser("sweep", parents=[common, grid], help="Comparative statics over one parameter")
    sweep.add_argument("--mode", dest="mode", choices=MODES, default="full")
    sweep.add_argument("--parameter", dest="parameter", choices=SWEEP_PARAMETERS, required=True)
    sweep.add_argument("--values", dest="values", type=str, required=True, help="Comma-separated list, e.g. 0.5,1,2")

    verify = sub.add_parser("verify", parents=[common], help="Run the acceptance suite")
    verify.add_argument("--quick", dest="quick", action="store_true", help="Coarser grids and fewer paths")
    verify.add_argument("--only", dest="only", action="append", choices=[name for name, _ in CRITERIA], default=None)
    verify.add_argument("--break", dest="break_name", choices=sorted(BREAKS), default=None, help="Perturb a solver constant")

    simulate = sub.add_parser("simulate", parents=[common, grid, sim], help="Monte Carlo control value or belief expectations")
    simulate.add_argument("--what", dest="what", choices=("control", "belief"), default="control")
    simulate.add_argument("--agent", dest="agent", type=int, default=None, help="Belief index; all agents when omitted")

    sub.add_parser("validate", parents=[common, grid], help="Check a market config against its invariants")
    return parser.parse_args(argv)


def _grid(spec: MarketSpec, args: argparse.Namespace, settings: SolverSettings) -> GridSpec:
    return GridSpec.for_spec(
        spec,
        nx=args.grid_nx or settings.nx,
        safety=settings.cfl_safety,
        width_multiplier=args.width_multiplier or settings.width_multiplier,
        nt=args.grid_nt,
    )


def _load_checked(args: argparse.Namespace, settings: SolverSettings):
    spec = load_market(args.config)
    grid = _grid(spec, args, settings)
    require_valid(spec, grid, settings.sigma_min)
    grid.check(spec)
    return spec, grid


def _static_for_mode(e: np.ndarray, spec: MarketSpec, mode: str) -> float:
    if mode == "limit-long":
        return static_limits(e, spec)[0]
    if mode in ("limit-short", "zero-vol"):
        return static_limits(e, spec)[1]
    return static_price(e, spec).p_sta


def cmd_validate(args: argparse.Namespace, settings: SolverSettings) -> int:
    spec = load_market(args.config)
    report = validate(spec, _grid(spec, args, settings), settings.sigma_min)
    print(f"[validate] {args.config}: {report}")
    return EXIT_OK if report.ok else EXIT_VALIDATION


def cmd_solve(args: argparse.Namespace, settings: SolverSettings) -> int:
    spec, grid = _load_checked(args, settings)
    summary = RunSummary(command="solve", spec_hash=spec_hash(spec), extra={"mode": args.mode, "nx": grid.nx, "nt": grid.nt})

    started = time.perf_counter()
    field = solve_hjb(spec, grid, args.mode, kernel=settings.kernel, cap=settings.enumeration_cap)
    summary.timings["solve"] = time.perf_counter() - started
    pf = portfolios(field, spec)
    summary.p_dyn = field.p_dyn(spec.x0)
    summary.residual = clearing_residual(pf, spec)
    if np.any(pf.ties):
        summary.warnings.append(f"{int(pf.ties.sum())} nodes with tied most-optimistic agents; positions split pro rata")

    if args.static:
        started = time.perf_counter()
        e = expectations(spec, grid)
        summary.p_sta = _static_for_mode(e, spec, args.mode)
        summary.gap = summary.p_sta - summary.p_dyn
        summary.timings["static"] = time.perf_counter() - started

    write_field_csv(field, pf, spec.n, os.path.join(settings.out_dir, "field.csv"))
    write_summary(summary, settings.out_dir)
    print(f"p_dyn={summary.p_dyn:.10g} residual={summary.residual:.2e} -> {settings.out_dir}")
    return EXIT_OK


def _sweep_variant(spec: MarketSpec, parameter: str, value: float) -> MarketSpec:
    costs = spec.costs
    if parameter == "s-scale":
        return spec.with_supply_scale(value)
    if parameter == "alpha_plus":
        return spec.with_costs(replace(costs, alpha_plus=value))
    if parameter == "alpha_minus":
        return spec.with_costs(replace(costs, alpha_minus=value))
    if parameter == "common-scale":
        return spec.with_costs(costs.scaled(value, value)).with_supply_scale(value)
    return spec.with_costs(costs.scaled(value, value))


def cmd_sweep(args: argparse.Namespace, settings: SolverSettings) -> int:
    values = [float(v) for v in args.values.split(",") if v.strip()]
    if not values or not all(np.isfinite(values)) or any(v <= 0.0 for v in values):
        raise MarketValidationError(f"sweep values must be finite and positive, got {args.values!r}")
    base, grid = _load_checked(args, settings)
    static_ok = base.is_constant_supply and not base.costs.has_linear_terms
    e = expectations(base, grid) if static_ok else None

    rows: List[Dict[str, object]] = []
    for value in values:
        spec = _sweep_variant(base, args.parameter, value)
        require_valid(spec, grid, settings.sigma_min)
        p_dyn = solve_hjb(spec, grid, args.mode, kernel=settings.kernel, cap=settings.enumeration_cap).p_dyn(spec.x0)
        p_sta = _static_for_mode(e, spec, args.mode) if e is not None else float("nan")
        rows.append({"param": args.parameter, "value": value, "p_dyn": p_dyn, "p_sta": p_sta, "gap": p_sta - p_dyn})
        logger.info("%s=%g p_dyn=%.10g p_sta=%.10g", args.parameter, value, p_dyn, p_sta)

    write_sweep_csv(rows, os.path.join(settings.out_dir, "sweep.csv"))
    summary = RunSummary(command="sweep", spec_hash=spec_hash(base), extra={"parameter": args.parameter, "values": values})
    if not static_ok:
        summary.warnings.append("static prices need constant supply and quadratic costs; p_sta left empty")
    write_summary(summary, settings.out_dir)
    print(f"{len(rows)} sweep points -> {os.path.join(settings.out_dir, 'sweep.csv')}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, settings: SolverSettings) -> int:
    report = run_verify(settings, quick=args.quick, only=args.only, break_name=args.break_name)
    write_json(report, os.path.join(settings.out_dir, "verify.json"))
    if report["passed"]:
        print(f"all {len(report['criteria'])} criteria passed")
        return EXIT_OK
    print(f"failed criteria: {', '.join(report['failed'])}")
    return EXIT_VERIFY_FAILED


def cmd_simulate(args: argparse.Namespace, settings: SolverSettings) -> int:
    spec, grid = _load_checked(args, settings)
    cfg = SimConfig.from_settings(
        settings,
        n_paths=args.paths,
        dt=args.dt,
        seed=args.seed,
        antithetic=args.antithetic or None,
        workers=args.workers,
    )
    domain = (grid.x_lo, grid.x_hi)
    summary = RunSummary(command="simulate", spec_hash=spec_hash(spec), extra={"what": args.what, "seed": cfg.seed})
    rows = []
    if args.what == "control":
        field = solve_hjb(spec, grid, "full", kernel=settings.kernel, cap=settings.enumeration_cap)
        summary.p_dyn = field.p_dyn(spec.x0)
        est = control_value(spec, optimal_assignment(field, spec), cfg, domain)
        rows.append({"target": "control", "mean": est.mean, "std_error": est.std_error, "n_paths": est.n_paths, "clamped": est.clamped})
    else:
        agents = range(spec.n) if args.agent is None else [args.agent]
        for i in agents:
            est = belief_expectation(spec, i, cfg, domain)
            rows.append({"target": f"belief_{i}", "mean": est.mean, "std_error": est.std_error, "n_paths": est.n_paths, "clamped": est.clamped})
    pd.DataFrame(rows).to_csv(os.path.join(settings.out_dir, "simulate.csv"), index=False, float_format=FLOAT_FORMAT)
    write_summary(summary, settings.out_dir)
    for row in rows:
        print(f"{row['target']}: {row['mean']:.6g} +/- {row['std_error']:.2g}")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace, SolverSettings], int]] = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parse_args(argv)
    cfg = AppConfig()
    if args.solver_config:
        cfg.solver_config_path = os.path.abspath(args.solver_config)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    configure_logging(args.log_level or cfg.log_level)

    try:
        if args.solver_config and not os.path.isfile(cfg.solver_config_path):
            raise ConfigError(f"{args.solver_config}: solver config not found")
        settings = load_settings(cfg)
        if getattr(args, "kernel", None):
            settings = replace(settings, kernel=args.kernel)
        ensure_dirs(settings.out_dir)
        with logging_redirect_tqdm():
            return COMMANDS[args.command](args, settings)
    except ConfigError as e:
        print(f"[config] {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except CFLError as e:
        print(f"[cfl] {e}", file=sys.stderr)
        return EXIT_CFL
    except (MarketValidationError, GridMismatchError, EnumerationCapError) as e:
        print(f"[validate] {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalAbort, ClampBudgetExceeded) as e:
        print(f"[numeric] {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
