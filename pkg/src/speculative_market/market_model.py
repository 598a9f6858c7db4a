from __future__ import annotations
import json
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Tuple

import numpy as np

from .errors import MarketValidationError
from .models import CoefficientField, MarketSpec

if TYPE_CHECKING:
    from .grid import GridSpec


logger = logging.getLogger(__name__)

SIGMA_MIN = 1e-6
TIME_SAMPLES = 65


@dataclass(frozen=True)
class Violation:
    invariant: str
    message: str
    t: Optional[float] = None
    x: Optional[float] = None

    def __str__(self) -> str:
        where = "" if self.t is None else f" at (t={self.t:.6g}, x={self.x:.6g})"
        return f"{self.invariant}: {self.message}{where}"


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, invariant: str, message: str, t: Optional[float] = None, x: Optional[float] = None) -> None:
        self.violations.append(Violation(invariant, message, t, x))

    def __str__(self) -> str:
        if self.ok:
            return "pass"
        return "fail\n" + "\n".join(f"  - {v}" for v in self.violations)


def _field_times(coefficient: CoefficientField) -> Tuple[float, ...]:
    return coefficient.ts if coefficient.kind == "table" else ()


def sample_times(spec: MarketSpec) -> np.ndarray:
    """Times at which coefficients are checked: a uniform sample plus every table node inside [0, T]."""
    extra: List[float] = list(_field_times(spec.supply))
    for agent in spec.agents:
        extra.extend(_field_times(agent.drift))
        extra.extend(_field_times(agent.volatility))
    ts = np.concatenate([np.linspace(0.0, spec.T, TIME_SAMPLES), np.asarray(extra, dtype=float)])
    return np.unique(ts[(ts >= 0.0) & (ts <= spec.T)])


def coefficient_bounds(spec: MarketSpec, xs: np.ndarray) -> Tuple[float, float]:
    """(max sigma^2, max |b|) over the sampled times and the given states."""
    tt, xx = np.meshgrid(sample_times(spec), np.asarray(xs, dtype=float), indexing="ij")
    sigma = spec.volatilities(tt, xx)
    drift = spec.drifts(tt, xx)
    return float(np.max(sigma * sigma)), float(np.max(np.abs(drift)))


def default_half_width(spec: MarketSpec, width_multiplier: float = 1.0) -> float:
    ts = sample_times(spec)
    max_b = float(np.max(np.abs(spec.drifts(ts, spec.x0))))
    max_sigma = float(np.max(np.abs(spec.volatilities(ts, spec.x0))))
    half = 5.0 * max_b * spec.T + 8.0 * max_sigma * np.sqrt(spec.T)
    if half <= 0.0:
        # no motion at all: any neighbourhood of x0 is exact
        half = 1.0
    return width_multiplier * half


def default_domain(spec: MarketSpec, width_multiplier: float = 1.0) -> Tuple[float, float]:
    half = default_half_width(spec, width_multiplier)
    return spec.x0 - half, spec.x0 + half


def _first_bad(mask: np.ndarray, tt: np.ndarray, xx: np.ndarray) -> Tuple[float, float]:
    k, j = np.argwhere(mask)[0]
    return float(tt[k, j]), float(xx[k, j])


def _check_costs(spec: MarketSpec, report: ValidationReport) -> None:
    try:
        costs = spec.cost_arrays()
    except ValueError as e:
        report.add("cost-shape", str(e))
        return
    if np.any(~np.isfinite(costs.alpha_minus)) or np.any(~np.isfinite(costs.alpha_plus)):
        report.add("cost-positivity", "alpha must be finite")
    if np.any(costs.alpha_minus <= 0.0) or np.any(costs.alpha_plus <= 0.0):
        report.add("cost-positivity", "every alpha must be strictly positive")
    if np.any(costs.alpha_minus > costs.alpha_plus):
        bad = int(np.argmax(costs.alpha_minus > costs.alpha_plus))
        report.add("cost-ordering", f"alpha_minus > alpha_plus for agent {bad} (shorting must be at least as costly)")
    if np.any(costs.beta_minus < 0.0) or np.any(costs.beta_plus < 0.0):
        report.add("cost-linear", "beta terms must be nonnegative")


def validate(spec: MarketSpec, grid: "GridSpec", sigma_min: float = SIGMA_MIN) -> ValidationReport:
    report = ValidationReport()
    if spec.n < 1:
        report.add("agents", "at least one agent is required")
        return report
    if not spec.T > 0.0:
        report.add("horizon", f"T must be positive, got {spec.T}")
        return report
    if not grid.x_lo < spec.x0 < grid.x_hi:
        report.add("domain", f"x0={spec.x0} outside ({grid.x_lo}, {grid.x_hi})")
    _check_costs(spec, report)

    tt, xx = np.meshgrid(sample_times(spec), grid.xs, indexing="ij")
    supply = spec.supply.evaluate(tt, xx)
    if not np.all(np.isfinite(supply)):
        report.add("finite-coefficients", "supply is not finite", *_first_bad(~np.isfinite(supply), tt, xx))
    elif np.any(supply < 0.0):
        report.add("supply-nonnegative", "negative supply", *_first_bad(supply < 0.0, tt, xx))

    floor = 0.0 if spec.degenerate else sigma_min
    for i, agent in enumerate(spec.agents):
        drift = agent.drift.evaluate(tt, xx)
        sigma = agent.volatility.evaluate(tt, xx)
        if not np.all(np.isfinite(drift)):
            report.add("finite-coefficients", f"drift of agent {i} is not finite", *_first_bad(~np.isfinite(drift), tt, xx))
        if not np.all(np.isfinite(sigma)):
            report.add("finite-coefficients", f"volatility of agent {i} is not finite", *_first_bad(~np.isfinite(sigma), tt, xx))
        elif np.any(sigma < floor):
            report.add(
                "parabolicity",
                f"volatility of agent {i} below sigma_min={floor:g} (flag the market degenerate for zero volatility)",
                *_first_bad(sigma < floor, tt, xx),
            )

    payoff = spec.payoff.evaluate(grid.xs)
    if not np.all(np.isfinite(payoff)):
        j = int(np.argmax(~np.isfinite(payoff)))
        report.add("finite-payoff", "payoff is not finite", spec.T, float(grid.xs[j]))
    return report


def require_valid(spec: MarketSpec, grid: "GridSpec", sigma_min: float = SIGMA_MIN) -> None:
    report = validate(spec, grid, sigma_min)
    if not report.ok:
        raise MarketValidationError(f"market failed validation: {report}", report=report)


def market_to_dict(spec: MarketSpec) -> Dict[str, Any]:
    return spec.to_dict()


def market_from_dict(raw: Dict[str, Any]) -> MarketSpec:
    try:
        return MarketSpec.from_dict(raw)
    except (KeyError, TypeError, ValueError) as e:
        raise MarketValidationError(f"malformed market config: {e}") from e


def load_market(path: str) -> MarketSpec:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise MarketValidationError(f"{path}: not valid JSON ({e})") from e
    except OSError as e:
        raise MarketValidationError(f"{path}: cannot read market config ({e.strerror or e})") from e
    spec = market_from_dict(raw)
    logger.debug("loaded market with %d agents from %s", spec.n, path)
    return spec


def dump_market(spec: MarketSpec, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(market_to_dict(spec), f, indent=2)
        f.write("\n")
