import numpy as np
import pytest

from speculative_market.grid import GridSpec
from speculative_market.instances import delay_market, supplied_market, symmetric_market
from speculative_market.models import BeliefSpec, CoefficientField, CostStructure, MarketSpec, PayoffSpec


def single_agent(drift: float = 0.0, vol: float = 1.0, payoff: PayoffSpec = PayoffSpec.quadratic(), T: float = 1.0) -> MarketSpec:
    return MarketSpec(
        agents=(BeliefSpec.constant(drift, vol),),
        costs=CostStructure.uniform(1.0, 1.0),
        supply=CoefficientField.constant(0.0),
        payoff=payoff,
        T=T,
        x0=0.0,
        degenerate=vol == 0.0,
    )


@pytest.fixture
def symmetric():
    return symmetric_market()


@pytest.fixture
def supplied():
    return supplied_market()


@pytest.fixture
def delay():
    return delay_market()


@pytest.fixture
def coarse():
    """Grid factory with a small node count; nt still follows the CFL rule."""

    def make(spec: MarketSpec, nx: int = 201) -> GridSpec:
        return GridSpec.for_spec(spec, nx=nx)

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def market_json(tmp_path):
    """Write a market to a JSON file and return its path."""
    from speculative_market.market_model import dump_market

    def write(spec: MarketSpec, name: str = "market.json") -> str:
        path = tmp_path / name
        dump_market(spec, str(path))
        return str(path)

    return write
