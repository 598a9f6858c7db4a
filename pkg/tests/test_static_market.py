import numpy as np
import pytest

from speculative_market.errors import MarketValidationError
from speculative_market.instances import nocost_market, two_agent_market
from speculative_market.mc_control import SimConfig
from speculative_market.models import CoefficientField, CostStructure, PayoffSpec
from speculative_market.static_market import (
    expectations,
    limit_long_static_portfolios,
    limit_short_static_portfolios,
    single_agent_market,
    static_equilibrium,
    static_limits,
    static_price,
)


def test_two_expectations_clear_at_their_mean():
    spec = two_agent_market()
    result = static_price(np.array([2.0, 0.0]), spec)
    assert result.p_sta == pytest.approx(1.0)
    np.testing.assert_allclose(result.q, [1.0, -1.0])


@pytest.mark.parametrize("method", ["root", "enumerate"])
def test_methods_agree(rng, method):
    spec = two_agent_market(alpha_minus=0.5, alpha_plus=2.0, supply=0.7, T=1.5)
    e = rng.normal(0.0, 2.0, 2)
    assert static_price(e, spec, method).p_sta == pytest.approx(static_price(e, spec, "root").p_sta, abs=1e-12)


def test_static_limits():
    spec = two_agent_market()
    e = np.array([2.0, 0.0])
    assert static_limits(e, spec) == pytest.approx((2.0, 2.0))
    assert static_limits(e, spec.with_supply(CoefficientField.constant(1.0)))[1] == pytest.approx(1.0)


def test_no_short_selling_delay_price():
    # both agents expect f(x0 + b T) = 1 without volatility; supply 8 is split evenly
    spec = two_agent_market((1.0, -1.0), (0.0, 0.0), supply=8.0)
    e = np.array([1.0, 1.0])
    assert static_limits(e, spec)[1] == pytest.approx(-3.0)
    np.testing.assert_allclose(limit_short_static_portfolios(e, spec), [4.0, 4.0])


def test_limit_short_single_holder():
    spec = two_agent_market(supply=1.0)
    np.testing.assert_allclose(limit_short_static_portfolios(np.array([2.0, 0.0]), spec), [1.0, 0.0])


def test_limit_long_static_portfolios():
    spec = nocost_market()
    np.testing.assert_allclose(limit_long_static_portfolios(np.array([1.0, 0.0]), spec), [1.0, -1.0])


def test_expectations_by_pde(symmetric, coarse):
    e = expectations(symmetric, coarse(symmetric))
    np.testing.assert_allclose(e, [2.0, 1.0], atol=2e-2)
    assert static_price(e, symmetric).p_sta == pytest.approx(1.5, abs=2e-2)


def test_constant_payoff_expectations(symmetric, coarse):
    spec = symmetric.with_payoff(PayoffSpec.constant(3.0))
    np.testing.assert_allclose(expectations(spec, coarse(spec, nx=101)), [3.0, 3.0], atol=1e-12)


@pytest.mark.slow
def test_expectations_by_monte_carlo(symmetric):
    cfg = SimConfig(n_paths=20_000, dt=0.05, seed=11)
    e = expectations(symmetric, method="mc", cfg=cfg)
    np.testing.assert_allclose(e, [2.0, 1.0], atol=0.1)


def test_static_equilibrium_end_to_end(symmetric, coarse):
    result = static_equilibrium(symmetric, coarse(symmetric))
    assert result.method == "root"
    assert result.q.sum() == pytest.approx(0.0, abs=1e-12)


def test_single_agent_market_drops_supply(supplied):
    alone = single_agent_market(supplied, 1)
    assert alone.n == 1
    assert alone.constant_supply() == 0.0
    assert alone.agents[0] == supplied.agents[1]


def test_static_market_preconditions(symmetric):
    with pytest.raises(MarketValidationError, match="constant supply"):
        static_price(np.zeros(2), symmetric.with_supply(CoefficientField.affine(1.0, 0.1)))
    with pytest.raises(MarketValidationError, match="linear cost"):
        static_price(np.zeros(2), symmetric.with_costs(CostStructure.linear(1.0, 1.0, 0.1, 0.1)))
    with pytest.raises(ValueError, match="unknown method"):
        static_price(np.zeros(2), symmetric, method="bisect")
