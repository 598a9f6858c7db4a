"""Monte Carlo estimates of control values, planner values and strategy payoffs.

Path p draws its normals from its own Philox stream, keyed by the seed and p
with the counter starting at zero. Blocks only group paths for vectorisation,
so an estimate depends on the seed alone, not on block size or worker count.
"""
from __future__ import annotations
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import ClampBudgetExceeded, MarketValidationError
from .equilibrium import PortfolioField
from .grid import PriceField
from .hjb_solver import Assignment
from .logs import progress
from .market_model import default_domain
from .models import MarketSpec


logger = logging.getLogger(__name__)

DEFAULT_STEPS = 1000
CLAMP_BUDGET = 1e-3

# (t, x array) -> positions, shape (len(x), n)
Strategy = Callable[[float, np.ndarray], np.ndarray]
# (n_steps, size) standard normals -> (per-path values, escaped paths)
BlockFn = Callable[[np.ndarray], Tuple[np.ndarray, int]]


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 100_000
    dt: Optional[float] = None
    seed: int = 42
    antithetic: bool = False
    block_size: int = 4096
    workers: int = 1
    clamp_margin: float = 0.0
    clamp_budget: float = CLAMP_BUDGET

    def __post_init__(self) -> None:
        if self.n_paths < 2:
            raise ValueError("n_paths must be >= 2")
        if self.block_size < 2:
            raise ValueError("block_size must be >= 2")
        if self.antithetic and (self.n_paths % 2 or self.block_size % 2):
            raise ValueError("antithetic pairing needs an even n_paths and block_size")

    def steps(self, T: float) -> Tuple[int, float]:
        if self.dt is None:
            return DEFAULT_STEPS, T / DEFAULT_STEPS
        n_steps = int(round(T / self.dt))
        if n_steps < 1 or abs(n_steps * self.dt - T) > 1e-9 * T:
            raise ValueError(f"dt={self.dt} does not divide T={T}")
        return n_steps, T / n_steps

    @classmethod
    def from_settings(cls, settings, **overrides) -> "SimConfig":
        base = dict(
            n_paths=settings.paths,
            dt=settings.sim_dt,
            seed=settings.seed,
            antithetic=settings.antithetic,
            block_size=settings.block_size,
            workers=settings.workers,
        )
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    std_error: float
    n_paths: int
    clamped: int = 0

    def combined_se(self, other: "ValueEstimate") -> float:
        return math.hypot(self.std_error, other.std_error)

    def __str__(self) -> str:
        return f"{self.mean:.6g} +/- {self.std_error:.2g} (n={self.n_paths})"


def reflect(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Fold x back into [lo, hi] by reflection at the edges."""
    width = hi - lo
    y = np.mod(x - lo, 2.0 * width)
    return lo + np.where(y > width, 2.0 * width - y, y)


def stream_key(seed: int) -> int:
    return int(np.random.SeedSequence(seed).generate_state(1, np.uint64)[0])


def path_stream(key: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([key, index], dtype=np.uint64)))


def path_normals(key: int, start: int, size: int, n_steps: int, antithetic: bool = False) -> np.ndarray:
    """Normals of shape (n_steps, size) for paths start, ..., start + size - 1.

    With antithetic pairing paths 2q and 2q + 1 share stream q with opposite signs.
    """
    if not antithetic:
        draws = np.stack([path_stream(key, p).standard_normal(n_steps) for p in range(start, start + size)])
        return np.ascontiguousarray(draws.T)
    pairs = np.stack([path_stream(key, q).standard_normal(n_steps) for q in range(start // 2, (start + size) // 2)])
    draws = np.empty((size, n_steps))
    draws[0::2] = pairs
    draws[1::2] = -pairs
    return np.ascontiguousarray(draws.T)


def _block_sizes(cfg: SimConfig) -> List[int]:
    full, rest = divmod(cfg.n_paths, cfg.block_size)
    return [cfg.block_size] * full + ([rest] if rest else [])


def _shifted_mean_se(samples: np.ndarray) -> Tuple[float, float]:
    shift = samples[0]
    centred = samples - shift
    return float(shift + centred.mean()), float(centred.std(ddof=1) / math.sqrt(samples.size))


def run_blocks(cfg: SimConfig, n_steps: int, block_fn: BlockFn, desc: str = "paths") -> ValueEstimate:
    sizes = _block_sizes(cfg)
    starts = [b * cfg.block_size for b in range(len(sizes))]
    key = stream_key(cfg.seed)

    def run(b: int) -> Tuple[np.ndarray, int]:
        return block_fn(path_normals(key, starts[b], sizes[b], n_steps, cfg.antithetic))

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(progress(pool.map(run, range(len(sizes))), logger, desc=desc, total=len(sizes)))
    else:
        results = [run(b) for b in progress(range(len(sizes)), logger, desc=desc, total=len(sizes))]

    values = np.concatenate([r[0] for r in results])
    clamped = int(sum(r[1] for r in results))
    if clamped > cfg.clamp_budget * cfg.n_paths:
        raise ClampBudgetExceeded(clamped, cfg.n_paths, cfg.clamp_budget)
    if clamped:
        logger.warning("%d of %d paths left the domain; coefficients were read at reflected states", clamped, cfg.n_paths)

    mean, se = _shifted_mean_se(values)
    if cfg.antithetic:
        _, se = _shifted_mean_se(0.5 * (values[0::2] + values[1::2]))
    return ValueEstimate(mean=mean, std_error=se, n_paths=int(values.size), clamped=clamped)


def _outside(x: np.ndarray, lo: float, hi: float, margin: float) -> np.ndarray:
    return (x < lo - margin) | (x > hi + margin)


def control_value(
    spec: MarketSpec,
    assignment: Assignment,
    cfg: SimConfig,
    domain: Optional[Tuple[float, float]] = None,
) -> ValueEstimate:
    """E[f(X_T) - int kappa_I dt] along dX = mu_I dt + Sigma_I dW with I from the assignment."""
    costs = spec.cost_arrays()
    if not costs.is_quadratic:
        raise MarketValidationError("control values are defined for quadratic costs only")
    n_steps, dt = cfg.steps(spec.T)
    lo, hi = domain or default_domain(spec)

    def block(noise: np.ndarray) -> Tuple[np.ndarray, int]:
        size = noise.shape[1]
        x = np.full(size, spec.x0)
        running = np.zeros(size)
        escaped = np.zeros(size, dtype=bool)
        for m in range(n_steps):
            t = m * dt
            escaped |= _outside(x, lo, hi, cfg.clamp_margin)
            xl = reflect(x, lo, hi)
            shorts = np.asarray(assignment(t, xl), dtype=bool)
            weights = np.where(shorts, costs.alpha_minus, costs.alpha_plus)
            denom = weights.sum(axis=1)
            b = spec.drifts(t, xl).T
            sigma = spec.volatilities(t, xl).T
            mu = (weights * b).sum(axis=1) / denom
            var = (weights * sigma * sigma).sum(axis=1) / denom
            running += spec.supply.evaluate(t, xl) / denom * dt
            x = x + mu * dt + np.sqrt(var * dt) * noise[m]
        escaped |= _outside(x, lo, hi, cfg.clamp_margin)
        return spec.payoff.evaluate(x) - running, int(escaped.sum())

    estimate = run_blocks(cfg, n_steps, block, desc="control")
    logger.info("control value %s", estimate)
    return estimate


planner_value = control_value


def belief_expectation(
    spec: MarketSpec,
    agent: int,
    cfg: SimConfig,
    domain: Optional[Tuple[float, float]] = None,
) -> ValueEstimate:
    """E_i[f(X_T)] under agent i's own dynamics."""
    belief = spec.agents[agent]
    n_steps, dt = cfg.steps(spec.T)
    lo, hi = domain or default_domain(spec)

    def block(noise: np.ndarray) -> Tuple[np.ndarray, int]:
        size = noise.shape[1]
        x = np.full(size, spec.x0)
        escaped = np.zeros(size, dtype=bool)
        for m in range(n_steps):
            t = m * dt
            escaped |= _outside(x, lo, hi, cfg.clamp_margin)
            xl = reflect(x, lo, hi)
            drift = belief.drift.evaluate(t, xl)
            sigma = belief.volatility.evaluate(t, xl)
            x = x + drift * dt + sigma * math.sqrt(dt) * noise[m]
        escaped |= _outside(x, lo, hi, cfg.clamp_margin)
        return spec.payoff.evaluate(x), int(escaped.sum())

    return run_blocks(cfg, n_steps, block, desc=f"belief[{agent}]")


def strategy_payoff(
    spec: MarketSpec,
    price_field: PriceField,
    strategy: Strategy,
    belief_index: int,
    cfg: SimConfig,
) -> ValueEstimate:
    """E_i[int Phi dP - int c_i(Phi) dt] with P read off the price field and P(T) = f(X_T)."""
    belief = spec.agents[belief_index]
    costs = spec.cost_arrays()
    n_steps, dt = cfg.steps(spec.T)
    grid = price_field.grid
    lo, hi = grid.x_lo, grid.x_hi

    def block(noise: np.ndarray) -> Tuple[np.ndarray, int]:
        size = noise.shape[1]
        x = np.full(size, spec.x0)
        price = price_field.at(0.0, x)
        pnl = np.zeros(size)
        escaped = np.zeros(size, dtype=bool)
        for m in range(n_steps):
            t = m * dt
            escaped |= _outside(x, lo, hi, cfg.clamp_margin)
            xl = reflect(x, lo, hi)
            position = np.asarray(strategy(t, xl), dtype=float)[:, belief_index]
            drift = belief.drift.evaluate(t, xl)
            sigma = belief.volatility.evaluate(t, xl)
            x = x + drift * dt + sigma * math.sqrt(dt) * noise[m]
            if m == n_steps - 1:
                next_price = spec.payoff.evaluate(x)
            else:
                next_price = price_field.at((m + 1) * dt, x)
            pnl += position * (next_price - price) - costs.cost(position, belief_index) * dt
            price = next_price
        escaped |= _outside(x, lo, hi, cfg.clamp_margin)
        return pnl, int(escaped.sum())

    return run_blocks(cfg, n_steps, block, desc=f"strategy[{belief_index}]")


def portfolio_strategy(pf: PortfolioField) -> Strategy:
    """Equilibrium positions, linear in x within the time step containing t."""
    grid = pf.grid
    xs = grid.xs

    def strategy(t: float, x: np.ndarray) -> np.ndarray:
        k = int(np.clip(np.floor(t / grid.dt + 1e-9), 0, grid.nt - 1))
        return np.stack([np.interp(x, xs, pf.phi[i, k]) for i in range(pf.n)], axis=-1)

    return strategy


def shift_strategy(base: Strategy, agent: int, delta: float) -> Strategy:
    def strategy(t: float, x: np.ndarray) -> np.ndarray:
        out = np.array(base(t, x), dtype=float)
        out[:, agent] += delta
        return out

    return strategy


def scale_strategy(base: Strategy, agent: int, factor: float) -> Strategy:
    def strategy(t: float, x: np.ndarray) -> np.ndarray:
        out = np.array(base(t, x), dtype=float)
        out[:, agent] *= factor
        return out

    return strategy


def zero_strategy(n: int) -> Strategy:
    def strategy(t: float, x: np.ndarray) -> np.ndarray:
        return np.zeros((np.size(x), n))

    return strategy
