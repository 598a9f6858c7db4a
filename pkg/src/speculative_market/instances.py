"""Market instances used by the verification suite and the shipped configs."""
from __future__ import annotations
from typing import Sequence

from .models import BeliefSpec, CoefficientField, CostStructure, MarketSpec, PayoffSpec


def two_agent_market(
    drifts: Sequence[float] = (1.0, 0.0),
    sigmas: Sequence[float] = (1.0, 1.0),
    alpha_minus: float = 1.0,
    alpha_plus: float = 1.0,
    supply: float = 0.0,
    T: float = 1.0,
    x0: float = 0.0,
) -> MarketSpec:
    return MarketSpec(
        agents=tuple(BeliefSpec.constant(b, s) for b, s in zip(drifts, sigmas)),
        costs=CostStructure.uniform(alpha_minus, alpha_plus),
        supply=CoefficientField.constant(supply),
        payoff=PayoffSpec.quadratic(),
        T=T,
        x0=x0,
        degenerate=min(sigmas) == 0.0,
    )


def symmetric_market(b1: float = 1.0, b2: float = 0.0, sigma: float = 1.0, T: float = 1.0, x0: float = 0.0) -> MarketSpec:
    return two_agent_market((b1, b2), (sigma, sigma), 1.0, 1.0, 0.0, T, x0)


def delay_market(s: float = 8.0, T: float = 1.0, x0: float = 0.0, sigma: float = 0.0) -> MarketSpec:
    # solved in the no-short-selling limit, where alpha_- drops out
    return two_agent_market((1.0, -1.0), (sigma, sigma), 1.0, 1.0, s, T, x0)


def nocost_market(T: float = 1.0) -> MarketSpec:
    # solved in the free-long limit, where alpha_+ and supply drop out
    return two_agent_market((1.0, 0.0), (0.0, 0.0), 1.0, 1.0, 0.0, T, 0.0)


def supplied_market(supply: float = 1.0) -> MarketSpec:
    """Two agents, costlier shorting, positive supply: the comparative-statics instance."""
    return two_agent_market((1.0, 0.0), (1.0, 1.0), 0.5, 1.0, supply)
