from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .clearing import demand
from .errors import GridMismatchError
from .grid import GridSpec, PriceField
from .hjb_solver import local_valuations
from .models import CostArrays, MarketSpec


logger = logging.getLogger(__name__)

TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class PortfolioField:
    """phi[i, k, j]: agent i's position over [t_k, t_{k+1}) at x_j, cleared at level k+1."""

    phi: np.ndarray
    grid: GridSpec
    mode: str
    ties: np.ndarray

    @property
    def n(self) -> int:
        return int(self.phi.shape[0])

    @property
    def times(self) -> np.ndarray:
        return self.grid.ts[1:]

    def agent(self, i: int) -> np.ndarray:
        return self.phi[i]


def _check_compatible(field: PriceField, spec: MarketSpec) -> None:
    g = field.grid
    if abs(g.T - spec.T) > 1e-12 * max(1.0, spec.T):
        raise GridMismatchError(f"field horizon {g.T} differs from market horizon {spec.T}")
    if not g.x_lo < spec.x0 < g.x_hi:
        raise GridMismatchError(f"x0={spec.x0} lies outside the field's domain")
    if field.values.shape != (g.nt + 1, g.nx):
        raise GridMismatchError("field values do not match its grid")


def limit_long_allocation(L: np.ndarray, supply: np.ndarray, costs: CostArrays) -> Tuple[np.ndarray, np.ndarray]:
    """Shorts trade at alpha_-; the agents with L = max share supply plus shorts in proportion to alpha_+."""
    tol = TIE_RTOL * (1.0 + np.abs(L).max(axis=1, keepdims=True))
    top = L >= L.max(axis=1, keepdims=True) - tol
    shorts = np.where(~top & (L < -costs.beta_minus), costs.alpha_minus * (L + costs.beta_minus), 0.0)
    remaining = supply - shorts.sum(axis=1)
    share = np.where(top, costs.alpha_plus, 0.0)
    share = share / share.sum(axis=1, keepdims=True)
    return shorts + share * remaining[:, None], top.sum(axis=1) > 1


def portfolios(field: PriceField, spec: MarketSpec) -> PortfolioField:
    _check_compatible(field, spec)
    grid = field.grid
    costs = spec.cost_arrays()
    xs, ts = grid.xs, grid.ts
    phi = np.empty((spec.n, grid.nt, grid.nx))
    ties = np.zeros((grid.nt, grid.nx), dtype=bool)

    for k in range(grid.nt):
        ell = local_valuations(field.values[k + 1], ts[k + 1], spec, grid)
        L = ell + field.theta[k][:, None]
        if field.mode == "limit-long":
            row, ties[k] = limit_long_allocation(L, spec.supply.evaluate(ts[k + 1], xs), costs)
        elif field.mode in ("limit-short", "zero-vol"):
            row = costs.alpha_plus * np.maximum(L - costs.beta_plus, 0.0)
        else:
            row = demand(L, costs)
        phi[:, k, :] = row.T

    pf = PortfolioField(phi=phi, grid=grid, mode=field.mode, ties=ties)
    logger.debug("portfolios (%s): clearing residual %.3e", field.mode, clearing_residual(pf, spec))
    return pf


def clearing_residual(pf: PortfolioField, spec: MarketSpec) -> float:
    tt, xx = np.meshgrid(pf.times, pf.grid.xs, indexing="ij")
    supply = spec.supply.evaluate(tt, xx)
    return float(np.max(np.abs(pf.phi.sum(axis=0) - supply)))


def sign_partition(pf: PortfolioField) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Boolean (n, nt, nx) masks of short, long and flat agents."""
    return pf.phi < 0.0, pf.phi > 0.0, pf.phi == 0.0


def p_dyn(field: PriceField, spec: MarketSpec) -> float:
    return field.p_dyn(spec.x0)
