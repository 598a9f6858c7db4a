"""Explicit backward solver for the equilibrium price PDE and its variants.

Each step computes the per-agent spatial rates ell_i from the later time level,
asks the clearing kernel (or a limit Hamiltonian) for H at every node and sets
v(t_k) = v(t_{k+1}) + dt * H. The spatial operator is

    ell_i = b_i * D0 v + max(sigma_i^2 / 2, |b_i| dx / 2) * D2 v

which is the central scheme where diffusion dominates and exactly first-order
upwind otherwise. At x_lo and x_hi the operator falls back to one-sided first
differences without the curvature term. Under the CFL bound every variant is
monotone inside the domain.
"""
from __future__ import annotations
import logging
from typing import Callable, Optional

import numpy as np

from .clearing import (
    DEFAULT_ENUMERATION_CAP,
    clear_root_batch,
    demand,
    hamiltonian_enumerate_batch,
    limit_long_hamiltonian,
    limit_short_hamiltonian,
)
from .errors import MarketValidationError, NumericalAbort
from .grid import GridSpec, PriceField
from .logs import progress
from .models import MarketSpec


logger = logging.getLogger(__name__)

MODES = ("full", "limit-long", "limit-short", "zero-vol")
KERNELS = ("root", "enumerate")
DIFFUSION_HALF = 0.5

# (t, x array) -> bool mask (len(x), n) of agents assigned to the short group
Assignment = Callable[[float, np.ndarray], np.ndarray]
StepHamiltonian = Callable[[int, float, np.ndarray, np.ndarray], np.ndarray]


def spatial_differences(values_row: np.ndarray, dx: float) -> tuple:
    """Central first and second differences inside the domain.

    The edge nodes get inward one-sided first differences and no second
    difference, so a linear profile is carried through x_lo and x_hi exactly.
    """
    d1 = np.empty_like(values_row)
    d2 = np.zeros_like(values_row)
    d1[1:-1] = (values_row[2:] - values_row[:-2]) / (2.0 * dx)
    d1[0] = (values_row[1] - values_row[0]) / dx
    d1[-1] = (values_row[-1] - values_row[-2]) / dx
    d2[1:-1] = (values_row[2:] - 2.0 * values_row[1:-1] + values_row[:-2]) / (dx * dx)
    return d1, d2


def local_valuations(values_row: np.ndarray, t: float, spec: MarketSpec, grid: GridSpec) -> np.ndarray:
    """ell_i at every node of one time level, shape (nx, n)."""
    xs = grid.xs
    d1, d2 = spatial_differences(values_row, grid.dx)
    b = spec.drifts(t, xs)
    sigma = spec.volatilities(t, xs)
    diffusion = np.maximum(DIFFUSION_HALF * sigma * sigma, 0.5 * np.abs(b) * grid.dx)
    return (b * d1 + diffusion * d2).T


def _march(spec: MarketSpec, grid: GridSpec, hamiltonian: StepHamiltonian, mode: str) -> PriceField:
    grid.check(spec)
    xs, ts, dt = grid.xs, grid.ts, grid.dt
    values = np.empty((grid.nt + 1, grid.nx))
    theta = np.empty((grid.nt, grid.nx))
    values[grid.nt] = spec.payoff.evaluate(xs)

    for k in progress(range(grid.nt - 1, -1, -1), logger, desc=f"solve[{mode}]", total=grid.nt):
        t_next = ts[k + 1]
        ell = local_valuations(values[k + 1], t_next, spec, grid)
        supply = spec.supply.evaluate(t_next, xs)
        H = hamiltonian(k, t_next, ell, supply)
        theta[k] = -H
        values[k] = values[k + 1] + dt * H
        bad = ~np.isfinite(values[k])
        if np.any(bad):
            j = int(np.argmax(bad))
            raise NumericalAbort("non-finite value", k=k, j=j, t=float(ts[k]), x=float(xs[j]))

    field = PriceField(values=values, theta=theta, grid=grid, mode=mode)
    logger.info("%s solve: nx=%d nt=%d v(0,x0)=%.10g", mode, grid.nx, grid.nt, field.p_dyn(spec.x0))
    return field


def solve_hjb(
    spec: MarketSpec,
    grid: GridSpec,
    mode: str = "full",
    kernel: str = "root",
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> PriceField:
    if mode == "zero-vol":
        return solve_zero_vol(spec, grid)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")
    costs = spec.cost_arrays()

    if mode == "limit-long":
        # supply and costs drop out of the limit equation
        return _march(spec, grid, lambda k, t, ell, s: limit_long_hamiltonian(ell), mode)
    if mode == "limit-short":
        return _march(spec, grid, lambda k, t, ell, s: limit_short_hamiltonian(ell, s, costs, cap), mode)
    if kernel == "enumerate":
        return _march(spec, grid, lambda k, t, ell, s: hamiltonian_enumerate_batch(ell, s, costs, cap)[0], mode)
    return _march(spec, grid, lambda k, t, ell, s: -clear_root_batch(ell, s, costs), mode)


def solve_zero_vol(spec: MarketSpec, grid: GridSpec) -> PriceField:
    """First-order HJ equation of the no-short-selling limit without volatility."""
    if not spec.degenerate:
        raise MarketValidationError("zero-volatility solves need a market flagged degenerate")
    if not spec.is_constant_supply:
        raise MarketValidationError("zero-volatility solves need constant supply")
    if grid.scheme != "degenerate-upwind":
        raise MarketValidationError("zero-volatility solves need a degenerate-upwind grid")
    costs = spec.cost_arrays()
    return _march(spec, grid, lambda k, t, ell, s: limit_short_hamiltonian(ell, s, costs), "zero-vol")


def solve_linear(spec: MarketSpec, grid: GridSpec, assignment: Assignment) -> PriceField:
    """Linear PDE with the planner's short group fixed node by node."""
    costs = spec.cost_arrays()
    if not costs.is_quadratic:
        raise MarketValidationError("planner assignments are defined for quadratic costs only")
    xs, ts = grid.xs, grid.ts

    def hamiltonian(k: int, t: float, ell: np.ndarray, supply: np.ndarray) -> np.ndarray:
        shorts = np.asarray(assignment(float(ts[k]), xs), dtype=bool)
        if shorts.shape != ell.shape:
            raise MarketValidationError(f"assignment returned shape {shorts.shape}, expected {ell.shape}")
        weights = np.where(shorts, costs.alpha_minus, costs.alpha_plus)
        return ((weights * ell).sum(axis=1) - supply) / weights.sum(axis=1)

    return _march(spec, grid, hamiltonian, "linear")


class GridAssignment:
    """Assignment read off a table of short masks, one per time step and grid node.

    Off-grid states use the nearest node; times use the step containing t.
    """

    def __init__(self, masks: np.ndarray, grid: GridSpec):
        if masks.shape[:2] != (grid.nt, grid.nx):
            raise ValueError("mask table does not match the grid")
        self.masks = masks
        self.grid = grid

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        g = self.grid
        k = int(np.clip(np.floor(t / g.dt + 1e-9), 0, g.nt - 1))
        j = np.clip(np.rint((np.asarray(x, dtype=float) - g.x_lo) / g.dx), 0, g.nx - 1).astype(int)
        return self.masks[k, j]


def constant_assignment(shorts, n: int) -> Assignment:
    mask = np.zeros(n, dtype=bool)
    mask[list(shorts)] = True

    def assignment(t: float, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(mask, (np.size(x), n)).copy()

    return assignment


def optimal_assignment(field: PriceField, spec: MarketSpec) -> GridAssignment:
    """I* = {i : L_i < 0} at every node of a solved field."""
    grid = field.grid
    costs = spec.cost_arrays()
    masks = np.empty((grid.nt, grid.nx, spec.n), dtype=bool)
    for k in range(grid.nt):
        ell = local_valuations(field.values[k + 1], grid.ts[k + 1], spec, grid)
        masks[k] = demand(ell + field.theta[k][:, None], costs) < 0.0
    return GridAssignment(masks, grid)


def random_assignment(grid: GridSpec, n: int, seed: int, bins: int = 8) -> GridAssignment:
    """Piecewise-constant random short groups on a coarse (time, state) partition."""
    rng = np.random.default_rng(seed)
    coarse = rng.random((bins, bins, n)) < 0.5
    k_bin = np.minimum(np.arange(grid.nt) * bins // grid.nt, bins - 1)
    j_bin = np.minimum(np.arange(grid.nx) * bins // grid.nx, bins - 1)
    return GridAssignment(coarse[k_bin][:, j_bin], grid)
