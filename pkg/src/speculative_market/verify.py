"""Acceptance suite: closed-form regressions plus property checks.

Each criterion returns pass/fail and a deterministic detail string, so two
runs with the same settings produce identical reports.
"""
from __future__ import annotations
import contextlib
import logging
import time
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple
from unittest import mock

import numpy as np

from . import clearing, hjb_solver
from .config import SolverSettings
from .equilibrium import clearing_residual, portfolios
from .grid import GridSpec, PriceField
from .instances import delay_market, nocost_market, supplied_market, symmetric_market
from .logs import progress
from .mc_control import (
    SimConfig,
    control_value,
    portfolio_strategy,
    scale_strategy,
    shift_strategy,
    strategy_payoff,
)
from .models import BeliefSpec, CoefficientField, CostArrays, CostStructure, MarketSpec, PayoffSpec
from .oracles import delay_static_price, example_delay, example_nocost, example_symmetric
from .static_market import (
    expectations,
    limit_long_static_portfolios,
    limit_short_static_portfolios,
    static_limits,
    static_price,
)


logger = logging.getLogger(__name__)

# name -> (module, attribute, perturbed value)
BREAKS = {
    "diffusion": (hjb_solver, "DIFFUSION_HALF", 0.55),
}


@dataclass(frozen=True)
class CriterionResult:
    name: str
    passed: bool
    detail: str


class VerifyContext:
    def __init__(self, settings: SolverSettings, quick: bool = False):
        self.settings = settings
        self.quick = quick
        self.residuals: List[Tuple[str, float]] = []
        self._fields: Dict[Tuple[str, str], PriceField] = {}

    @property
    def nx(self) -> int:
        return 401 if self.quick else self.settings.nx

    @property
    def mc_paths(self) -> int:
        return 20_000 if self.quick else self.settings.paths

    def grid_for(self, spec: MarketSpec) -> GridSpec:
        return GridSpec.for_spec(spec, nx=self.nx, safety=self.settings.cfl_safety, width_multiplier=self.settings.width_multiplier)

    def sim(self, n_paths: Optional[int] = None, steps: Optional[int] = None, T: float = 1.0) -> SimConfig:
        return SimConfig(
            n_paths=n_paths or self.mc_paths,
            dt=None if steps is None else T / steps,
            seed=self.settings.seed,
            block_size=self.settings.block_size,
            workers=self.settings.workers,
        )

    def solve(self, spec: MarketSpec, grid: GridSpec, mode: str = "full", label: Optional[str] = None) -> PriceField:
        """Solve, then record the clearing residual of the resulting portfolios."""
        key = (label, mode) if label else None
        if key and key in self._fields:
            return self._fields[key]
        if mode == "zero-vol":
            field = hjb_solver.solve_zero_vol(spec, grid)
        else:
            field = hjb_solver.solve_hjb(spec, grid, mode, kernel=self.settings.kernel, cap=self.settings.enumeration_cap)
        self.residuals.append((f"{label or 'field'}[{mode}]", clearing_residual(portfolios(field, spec), spec)))
        if key:
            self._fields[key] = field
        return field


def _nonincreasing(values: Sequence[float], slack: float) -> bool:
    return all(b <= a + slack for a, b in zip(values, values[1:]))


def _fmt(values: Sequence[float]) -> str:
    return "[" + ", ".join(f"{v:.6g}" for v in values) + "]"


def symmetric_closed_form(ctx: VerifyContext) -> Tuple[bool, str]:
    spec = symmetric_market()
    started = time.perf_counter()
    field = ctx.solve(spec, ctx.grid_for(spec), label="symmetric")
    elapsed = time.perf_counter() - started
    expected = example_symmetric(0.0, 1.0, 0.0, 1.0, 1.0, 1.0).p_dyn
    got = field.p_dyn(spec.x0)
    rel = abs(got - expected) / abs(expected)
    return rel <= 2e-3 and elapsed < 30.0, f"p_dyn={got:.6g} expected={expected:.6g} rel={rel:.2e}"


def delay_zero_vol(ctx: VerifyContext) -> Tuple[bool, str]:
    spec = delay_market()
    grid = ctx.grid_for(spec)
    started = time.perf_counter()
    field = ctx.solve(spec, grid, "zero-vol", label="delay")
    ok, parts = True, []
    for x in (0.0, 1.8, 3.0):
        oracle = example_delay(x, 8.0, 1.0)
        p_dyn = float(field.at(0.0, x))
        _, p_sta = static_limits(expectations(spec.with_x0(x), grid), spec.with_x0(x))
        gap = p_sta - p_dyn
        ok &= abs(p_dyn - oracle.p_dyn) <= 5e-2 and abs(gap - oracle.gap) <= 5e-2
        parts.append(f"x={x:g}: p_dyn={p_dyn:.4f}/{oracle.p_dyn:.4f} gap={gap:.4f}/{oracle.gap:.4f}")
    ok &= time.perf_counter() - started < 60.0
    return ok, "; ".join(parts)


def small_volatility(ctx: VerifyContext) -> Tuple[bool, str]:
    sigmas = (0.5, 0.25, 0.1)
    oracle_gap = example_delay(0.0, 8.0, 1.0).gap
    shifts_ok = all(
        abs(delay_static_price(0.0, 8.0, 1.0, s) - delay_static_price(0.0, 8.0, 1.0) - s * s) <= 1e-8 for s in sigmas
    )
    grid = ctx.grid_for(delay_market(sigma=sigmas[0]))
    p_dyn, gaps = [], []
    for s in sigmas:
        spec = delay_market(sigma=s)
        p = ctx.solve(spec, grid, "limit-short", label=f"delay-sigma-{s:g}").p_dyn(0.0)
        p_dyn.append(p)
        gaps.append(delay_static_price(0.0, 8.0, 1.0, s) - p)
    ok = shifts_ok and all(abs(g - oracle_gap) <= 5e-2 for g in gaps) and _nonincreasing(p_dyn, 1e-3)
    return ok, f"p_dyn={_fmt(p_dyn)} gaps={_fmt(gaps)} oracle_gap={oracle_gap:g} static_shift_ok={shifts_ok}"


def _random_costs(rng: np.random.Generator, n: int, allow_linear: bool) -> CostArrays:
    kind = rng.integers(0, 3 if allow_linear else 2)
    if kind == 1:
        ap = rng.uniform(0.5, 2.0, n)
        am = ap * rng.uniform(0.1, 1.0, n)
    else:
        ap = np.full(n, rng.uniform(0.5, 2.0))
        am = np.full(n, ap[0] * rng.uniform(0.1, 1.0))
    beta = np.full(n, rng.uniform(0.0, 1.0)) if kind == 2 else np.zeros(n)
    return CostArrays(am, ap, beta, beta.copy())


def clearing_duality(ctx: VerifyContext) -> Tuple[bool, str]:
    rng = np.random.default_rng(ctx.settings.seed)
    started = time.perf_counter()
    worst_theta = worst_demand = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 11))
        costs = _random_costs(rng, n, allow_linear=n <= 6)
        ell = rng.normal(0.0, 1.0, (1, n))
        supply = np.array([rng.uniform(0.0, 3.0)])
        theta_root = clearing.clear_root_batch(ell, supply, costs)[0]
        theta_enum = -clearing.hamiltonian_enumerate_batch(ell, supply, costs)[0][0]
        worst_theta = max(worst_theta, abs(theta_root - theta_enum))
        gap = np.abs(clearing.demand(ell[0] + theta_root, costs) - clearing.demand(ell[0] + theta_enum, costs))
        worst_demand = max(worst_demand, float(gap.max()))
    elapsed = time.perf_counter() - started
    ok = worst_theta <= 1e-10 and worst_demand <= 1e-10 and elapsed < 5.0
    return ok, f"max |dtheta|={worst_theta:.2e} max |ddemand|={worst_demand:.2e}"


def _constant_market(n: int, costs: CostStructure, supply: float, T: float) -> MarketSpec:
    return MarketSpec(
        agents=(BeliefSpec.constant(0.0, 1.0),) * n,
        costs=costs,
        supply=CoefficientField.constant(supply),
        payoff=PayoffSpec.quadratic(),
        T=T,
        x0=0.0,
    )


def static_duality(ctx: VerifyContext) -> Tuple[bool, str]:
    rng = np.random.default_rng(ctx.settings.seed + 1)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        arrays = _random_costs(rng, n, allow_linear=False)
        costs = CostStructure("heterogeneous", tuple(arrays.alpha_minus), tuple(arrays.alpha_plus))
        spec = _constant_market(n, costs, float(rng.uniform(0.0, 2.0)), float(rng.uniform(0.5, 2.0)))
        e = rng.normal(0.0, 2.0, n)
        worst = max(worst, abs(static_price(e, spec, "root").p_sta - static_price(e, spec, "enumerate").p_sta))
    return worst <= 1e-10, f"max |dp_sta|={worst:.2e}"


def homogeneity(ctx: VerifyContext) -> Tuple[bool, str]:
    base = supplied_market()
    grid = ctx.grid_for(base)
    e = expectations(base, grid)
    p_dyn, p_sta = [], []
    for lam in (0.25, 1.0, 4.0):
        spec = base.with_costs(base.costs.scaled(lam, lam)).with_supply_scale(lam)
        p_dyn.append(ctx.solve(spec, grid, label=f"homogeneity-{lam:g}").p_dyn(spec.x0))
        p_sta.append(static_price(e, spec).p_sta)
    solver_ok = np.ptp(p_dyn) <= 1e-6 and np.ptp(p_sta) <= 1e-6

    rng = np.random.default_rng(ctx.settings.seed + 2)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 8))
        costs = _random_costs(rng, n, allow_linear=False)
        ell = rng.normal(0.0, 1.0, (1, n))
        supply = np.array([rng.uniform(0.0, 3.0)])
        theta = clearing.clear_root_batch(ell, supply, costs)[0]
        for lam in (0.25, 4.0):
            scaled = CostArrays(lam * costs.alpha_minus, lam * costs.alpha_plus, costs.beta_minus, costs.beta_plus)
            worst = max(worst, abs(clearing.clear_root_batch(ell, lam * supply, scaled)[0] - theta))
    ok = solver_ok and worst <= 1e-12
    return ok, f"p_dyn={_fmt(p_dyn)} p_sta={_fmt(p_sta)} kernel max |dtheta|={worst:.2e}"


def comparative_statics(ctx: VerifyContext) -> Tuple[bool, str]:
    base = supplied_market()
    grid = ctx.grid_for(base)

    def sweep(specs: Sequence[MarketSpec], tag: str) -> List[float]:
        return [ctx.solve(s, grid, label=f"{tag}-{i}").p_dyn(s.x0) for i, s in enumerate(specs)]

    by_supply = sweep([base.with_supply_scale(f) for f in (0.5, 1.0, 2.0)], "supply")
    by_alpha_plus = sweep([base.with_costs(CostStructure.uniform(0.5, a)) for a in (1.0, 2.0, 4.0)], "alpha-plus")
    by_alpha_minus = sweep([base.with_costs(CostStructure.uniform(a, 1.0)) for a in (0.25, 0.5, 1.0)], "alpha-minus")
    # costs-of-carry rise as the common factor on alpha falls
    by_cost = sweep([base.with_costs(base.costs.scaled(f, f)) for f in (2.0, 1.0, 0.5)], "cost-scale")
    ok = (
        _nonincreasing(by_supply, 1e-8)
        and _nonincreasing(by_alpha_plus[::-1], 1e-8)
        and _nonincreasing(by_alpha_minus, 1e-8)
        and _nonincreasing(by_cost, 1e-8)
        and by_cost[-1] < by_cost[0]
    )
    return ok, (
        f"supply={_fmt(by_supply)} alpha_plus={_fmt(by_alpha_plus)} "
        f"alpha_minus={_fmt(by_alpha_minus)} cost_scale={_fmt(by_cost)}"
    )


def limit_consistency(ctx: VerifyContext) -> Tuple[bool, str]:
    base = supplied_market()
    grid = ctx.grid_for(base)
    long_limit = ctx.solve(base, grid, "limit-long", label="supplied").p_dyn(base.x0)
    by_alpha_plus = [
        ctx.solve(base.with_costs(CostStructure.uniform(0.5, a)), grid, label=f"limit-alpha-plus-{a:g}").p_dyn(base.x0)
        for a in (1.0, 10.0, 100.0, 1000.0)
    ]
    ok = _nonincreasing(by_alpha_plus[::-1], 1e-8) and abs(by_alpha_plus[-1] - long_limit) <= 1e-2

    short_limit = ctx.solve(base, grid, "limit-short", label="supplied").p_dyn(base.x0)
    by_alpha_minus = [
        ctx.solve(base.with_costs(CostStructure.uniform(a, 1.0)), grid, label=f"limit-alpha-minus-{a:g}").p_dyn(base.x0)
        for a in (1.0, 0.1, 0.01)
    ]
    ok &= _nonincreasing(by_alpha_minus[::-1], 1e-8) and by_alpha_minus[-1] <= short_limit + 1e-8

    unsupplied = base.with_supply_scale(0.0)
    v_long = ctx.solve(unsupplied, grid, "limit-long", label="unsupplied").values
    v_short = ctx.solve(unsupplied, grid, "limit-short", label="unsupplied").values
    coincide = float(np.max(np.abs(v_long - v_short)))
    ok &= coincide <= 1e-10

    # the dynamic free-long price dominates the static one
    dominance = []
    for label, spec in (("supplied", base), ("symmetric", symmetric_market())):
        g = ctx.grid_for(spec)
        p_inf, _ = static_limits(expectations(spec, g), spec)
        dominance.append(ctx.solve(spec, g, "limit-long", label=label).p_dyn(spec.x0) - p_inf)
    ok &= min(dominance) >= -1e-6

    # single holder in the no-short-selling static market
    holder = supplied_market(supply=0.5)
    e = expectations(holder, grid)
    q = limit_short_static_portfolios(e, holder)
    single = int(np.sum(q > 0.0)) == 1 and abs(q.max() - 0.5) <= 1e-10
    _, p_zero = static_limits(e, holder)
    holder_gap = ctx.solve(holder, grid, "limit-short", label="holder").p_dyn(holder.x0) - p_zero
    ok &= single and holder_gap >= -1e-6
    return ok, (
        f"alpha_plus={_fmt(by_alpha_plus)} long_limit={long_limit:.6g} alpha_minus={_fmt(by_alpha_minus)} "
        f"short_limit={short_limit:.6g} |long-short| at s=0={coincide:.1e} dominance={_fmt(dominance)} "
        f"single_holder={single} holder_gap={holder_gap:.6g}"
    )


def control_representation(ctx: VerifyContext) -> Tuple[bool, str]:
    spec = symmetric_market()
    grid = ctx.grid_for(spec)
    field = ctx.solve(spec, grid, label="symmetric")
    started = time.perf_counter()
    est = control_value(spec, hjb_solver.optimal_assignment(field, spec), ctx.sim(), (grid.x_lo, grid.x_hi))
    elapsed = time.perf_counter() - started
    target = field.p_dyn(spec.x0)
    ok = abs(est.mean - target) <= 3.0 * est.std_error + 2e-3 and elapsed < 60.0
    return ok, f"mc={est.mean:.6g} se={est.std_error:.2e} pde={target:.6g}"


def planner_optimality(ctx: VerifyContext) -> Tuple[bool, str]:
    spec = supplied_market()
    grid = ctx.grid_for(spec)
    field = ctx.solve(spec, grid, label="supplied")
    cfg = ctx.sim(n_paths=20_000, steps=200)
    domain = (grid.x_lo, grid.x_hi)
    best = control_value(spec, hjb_solver.optimal_assignment(field, spec), cfg, domain)
    worst_excess = -np.inf
    for r in range(20):
        fixed = control_value(spec, hjb_solver.random_assignment(grid, spec.n, ctx.settings.seed + 100 + r), cfg, domain)
        worst_excess = max(worst_excess, (fixed.mean - best.mean) / best.combined_se(fixed))
    return worst_excess <= 3.0, f"optimal={best.mean:.6g} worst excess={worst_excess:.3g} combined SE"


def strategy_optimality(ctx: VerifyContext) -> Tuple[bool, str]:
    spec = symmetric_market()
    grid = ctx.grid_for(spec)
    field = ctx.solve(spec, grid, label="symmetric")
    equilibrium = portfolio_strategy(portfolios(field, spec))
    cfg = ctx.sim(n_paths=20_000, steps=200)
    ok, parts = True, []
    for agent in range(spec.n):
        best = strategy_payoff(spec, field, equilibrium, agent, cfg)
        for tag, alt in (
            ("shift", shift_strategy(equilibrium, agent, 0.1)),
            ("scale", scale_strategy(equilibrium, agent, 2.0)),
        ):
            other = strategy_payoff(spec, field, alt, agent, cfg)
            ok &= best.mean >= other.mean - 3.0 * best.combined_se(other)
            parts.append(f"agent {agent} {tag}: {best.mean:.5f} vs {other.mean:.5f}")
    return ok, "; ".join(parts)


def market_clearing(ctx: VerifyContext) -> Tuple[bool, str]:
    if not ctx.residuals:
        symmetric_closed_form(ctx)
    name, worst = max(ctx.residuals, key=lambda item: item[1])
    return worst <= 1e-8, f"{len(ctx.residuals)} fields, max residual {worst:.2e} ({name})"


def linear_costs(ctx: VerifyContext) -> Tuple[bool, str]:
    base = symmetric_market()
    grid = ctx.grid_for(base)
    wide = base.with_costs(CostStructure.linear(1.0, 1.0, 50.0, 50.0))
    flat = float(np.max(np.abs(portfolios(ctx.solve(wide, grid, label="wide-dead-zone"), wide).phi)))
    quadratic = ctx.solve(base, grid, label="symmetric").p_dyn(base.x0)
    distances = []
    for beta in (1e-2, 1e-3, 1e-4):
        spec = base.with_costs(CostStructure.linear(1.0, 1.0, beta, beta))
        distances.append(abs(ctx.solve(spec, grid, label=f"beta-{beta:g}").p_dyn(spec.x0) - quadratic))
    ok = flat <= 1e-12 and distances[-1] <= 1e-3 and _nonincreasing(distances, 1e-12)
    return ok, f"max |phi| with wide dead zone={flat:.1e} distance to quadratic={_fmt(distances)}"


def heterogeneous_costs(ctx: VerifyContext) -> Tuple[bool, str]:
    base = symmetric_market()
    grid = ctx.grid_for(base)
    cheap = base.with_agents(base.agents + (base.agents[0],)).with_costs(
        CostStructure("heterogeneous", (1.0, 1.0, 1.0), (1.0, 1.0, 2.0))
    )
    phi = portfolios(ctx.solve(cheap, grid, label="duplicated"), cheap).phi
    longs = phi[0] > 0.0
    ordered = bool(np.all(phi[2][longs] >= phi[0][longs] - 1e-12))

    rng = np.random.default_rng(ctx.settings.seed + 3)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 8))
        am, ap = rng.uniform(0.1, 1.0), rng.uniform(1.0, 2.0)
        uniform = CostStructure.uniform(am, ap).per_agent(n)
        hetero = CostStructure("heterogeneous", (am,) * n, (ap,) * n).per_agent(n)
        ell = rng.normal(0.0, 1.0, (1, n))
        s = np.array([rng.uniform(0.0, 2.0)])
        worst = max(worst, abs(clearing.clear_root_batch(ell, s, uniform)[0] - clearing.clear_root_batch(ell, s, hetero)[0]))
    return ordered and worst <= 1e-12, f"cheap agent holds more={ordered} uniform vs heterogeneous max |dtheta|={worst:.1e}"


def nocost_example(ctx: VerifyContext) -> Tuple[bool, str]:
    spec = nocost_market()
    grid = ctx.grid_for(spec)
    oracle = example_nocost(0.0, 1.0)
    p = ctx.solve(spec, grid, "limit-long", label="nocost").p_dyn(spec.x0)
    e = expectations(spec, grid)
    p_inf, _ = static_limits(e, spec)
    q = limit_long_static_portfolios(e, spec)
    ok = abs(p - oracle.p_dyn) <= 5e-2 and abs(p_inf - oracle.p_sta) <= 5e-2 and abs(q[1] - oracle.q[1]) <= 5e-2
    return ok, f"p_dyn={p:.4f} p_sta={p_inf:.4f} q_1={q[1]:.4f} expected {oracle.p_dyn:g}, {oracle.p_sta:g}, {oracle.q[1]:g}"


CRITERIA: List[Tuple[str, Callable[[VerifyContext], Tuple[bool, str]]]] = [
    ("symmetric-closed-form", symmetric_closed_form),
    ("delay-zero-vol", delay_zero_vol),
    ("small-volatility", small_volatility),
    ("clearing-duality", clearing_duality),
    ("static-duality", static_duality),
    ("homogeneity", homogeneity),
    ("comparative-statics", comparative_statics),
    ("limit-consistency", limit_consistency),
    ("control-representation", control_representation),
    ("planner-optimality", planner_optimality),
    ("strategy-optimality", strategy_optimality),
    ("linear-costs", linear_costs),
    ("heterogeneous-costs", heterogeneous_costs),
    ("nocost-example", nocost_example),
    ("market-clearing", market_clearing),
]


@contextlib.contextmanager
def perturbed(name: Optional[str]) -> Iterator[None]:
    if name is None:
        yield
        return
    if name not in BREAKS:
        raise ValueError(f"unknown perturbation {name!r}; known: {sorted(BREAKS)}")
    module, attribute, value = BREAKS[name]
    logger.warning("perturbing %s.%s -> %r", module.__name__, attribute, value)
    with mock.patch.object(module, attribute, value):
        yield


def run_verify(
    settings: SolverSettings,
    quick: bool = False,
    only: Optional[Sequence[str]] = None,
    break_name: Optional[str] = None,
) -> Dict[str, object]:
    known = [name for name, _ in CRITERIA]
    unknown = sorted(set(only or ()) - set(known))
    if unknown:
        raise ValueError(f"unknown criteria {unknown}; known: {known}")
    ctx = VerifyContext(settings, quick=quick)
    results: List[CriterionResult] = []
    with perturbed(break_name):
        for name, check in progress(CRITERIA, logger, desc="verify"):
            if only and name not in only:
                continue
            started = time.perf_counter()
            try:
                passed, detail = check(ctx)
            except Exception as e:  # a crashing criterion is a failing criterion
                passed, detail = False, f"{type(e).__name__}: {e}"
            logger.info("%-24s %s (%.1fs) %s", name, "PASS" if passed else "FAIL", time.perf_counter() - started, detail)
            results.append(CriterionResult(name, bool(passed), detail))
    failed = [r.name for r in results if not r.passed]
    return {"passed": not failed, "failed": failed, "criteria": [asdict(r) for r in results]}
