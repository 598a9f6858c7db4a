"""Buy-and-hold equilibrium: agents trade once at t = 0 and hold to T.

Agent i values the asset at e_i = E_i[f(X_T)]. With constant supply s the
static market is the clearing problem with ell_i = e_i / T, so the dynamic
kernel is reused and p_sta = -T * theta.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .clearing import DEFAULT_ENUMERATION_CAP, clear_root_batch, demand, hamiltonian_enumerate_batch, limit_short_hamiltonian
from .equilibrium import limit_long_allocation
from .errors import MarketValidationError
from .grid import GridSpec
from .hjb_solver import solve_hjb
from .mc_control import SimConfig, belief_expectation
from .models import CoefficientField, CostStructure, MarketSpec


logger = logging.getLogger(__name__)

METHODS = ("root", "enumerate")


@dataclass(frozen=True, eq=False)
class StaticEquilibrium:
    p_sta: float
    q: np.ndarray
    e: np.ndarray
    method: str


def _require_static(spec: MarketSpec) -> None:
    if not spec.is_constant_supply:
        raise MarketValidationError("the static market is defined for constant supply only")
    if spec.costs.has_linear_terms:
        raise MarketValidationError("static equilibria with linear cost terms are not supported")


def single_agent_market(spec: MarketSpec, agent: int) -> MarketSpec:
    """Agent i alone, no supply: its value function is E_i[f(X_T) | X_t = x]."""
    return MarketSpec(
        agents=(spec.agents[agent],),
        costs=CostStructure.uniform(1.0, 1.0),
        supply=CoefficientField.constant(0.0),
        payoff=spec.payoff,
        T=spec.T,
        x0=spec.x0,
        degenerate=spec.degenerate,
    )


def expectations(
    spec: MarketSpec,
    grid: Optional[GridSpec] = None,
    method: str = "pde",
    cfg: Optional[SimConfig] = None,
) -> np.ndarray:
    _require_static(spec)
    if method == "mc":
        cfg = cfg or SimConfig()
        return np.array([belief_expectation(spec, i, cfg).mean for i in range(spec.n)])
    if method != "pde":
        raise ValueError(f"unknown expectation method {method!r}")
    grid = grid or GridSpec.for_spec(spec)
    e = np.array([solve_hjb(single_agent_market(spec, i), grid).p_dyn(spec.x0) for i in range(spec.n)])
    logger.debug("expectations at x0=%g: %s", spec.x0, e)
    return e


def static_price(
    e: np.ndarray,
    spec: MarketSpec,
    method: str = "root",
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> StaticEquilibrium:
    _require_static(spec)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    e = np.asarray(e, dtype=float)
    costs = spec.cost_arrays()
    ell = (e / spec.T)[None, :]
    supply = np.array([spec.constant_supply()])
    if method == "root":
        theta = float(clear_root_batch(ell, supply, costs)[0])
    else:
        theta = -float(hamiltonian_enumerate_batch(ell, supply, costs, cap)[0][0])
    q = demand(ell[0] + theta, costs)
    return StaticEquilibrium(p_sta=-spec.T * theta, q=q, e=e, method=method)


def static_limits(e: np.ndarray, spec: MarketSpec) -> Tuple[float, float]:
    """(p_inf, p_0): static prices as alpha_+ -> infinity and as alpha_- -> 0."""
    _require_static(spec)
    e = np.asarray(e, dtype=float)
    p_zero = spec.T * float(limit_short_hamiltonian(e / spec.T, spec.constant_supply(), spec.cost_arrays())[0])
    return float(e.max()), p_zero


def limit_long_static_portfolios(e: np.ndarray, spec: MarketSpec) -> np.ndarray:
    p_inf, _ = static_limits(e, spec)
    L = ((np.asarray(e, dtype=float) - p_inf) / spec.T)[None, :]
    q, _ = limit_long_allocation(L, np.array([spec.constant_supply()]), spec.cost_arrays())
    return q[0]


def limit_short_static_portfolios(e: np.ndarray, spec: MarketSpec) -> np.ndarray:
    _, p_zero = static_limits(e, spec)
    costs = spec.cost_arrays()
    return costs.alpha_plus * np.maximum(np.asarray(e, dtype=float) - p_zero, 0.0) / spec.T


def static_equilibrium(
    spec: MarketSpec,
    grid: Optional[GridSpec] = None,
    method: str = "root",
    expectation_method: str = "pde",
    cfg: Optional[SimConfig] = None,
) -> StaticEquilibrium:
    return static_price(expectations(spec, grid, expectation_method, cfg), spec, method)
