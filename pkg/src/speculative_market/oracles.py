"""Closed-form reference markets.

These formulas do not touch the solver or the clearing kernel, so they can
serve as regression targets for both.

- delay: two agents with drifts +1 and -1, no volatility, f(y) = y^2,
  alpha_- -> 0 and alpha_+ = 1, supply s > 0. Waiting to build a position
  can be worth more than buying at once, so p_dyn may fall below p_sta.
- symmetric: two agents with equal costs alpha_- = alpha_+ = 1, zero supply,
  f(y) = y^2. The price is the expectation under averaged coefficients.
- nocost: alpha_+ -> infinity, alpha_- = 1, drifts (1, 0), no volatility,
  f(y) = y^2, started at x = 0.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Callable, Optional, Tuple


@dataclass(frozen=True)
class OracleResult:
    p_dyn: float
    p_sta: float
    phi_at: Callable[[float, float, int], float]
    q: Tuple[float, ...]
    expected_path_position: Callable[[float, int], float]
    value_function: Optional[Callable[[float, float], float]] = None

    @property
    def gap(self) -> float:
        return self.p_sta - self.p_dyn


def delay_value_function(t: float, x: float, s: float, T: float) -> float:
    tau = T - t
    if abs(x) + tau / 2.0 <= s / 4.0:
        return x * x - s * tau / 2.0
    return (abs(x) + tau) ** 2 - s * tau


def delay_static_price(x: float, s: float, T: float, sigma: float = 0.0) -> float:
    """Static price with constant volatility sigma for both agents; sigma only adds sigma^2 T."""
    base = x * x + sigma * sigma * T + T * T
    if abs(x) <= s / 4.0:
        return base - s * T / 2.0
    return base + 2.0 * abs(x) * T - s * T


def example_delay(x: float, s: float, T: float) -> OracleResult:
    if s <= 0.0:
        raise ValueError(f"the delay example needs s > 0, got {s}")
    if T <= 0.0:
        raise ValueError(f"T must be positive, got {T}")
    drifts = (1.0, -1.0)

    def phi_at(t: float, y: float, i: int) -> float:
        if abs(y) + (T - t) / 2.0 <= s / 4.0:
            return s / 2.0 + 2.0 * y if i == 0 else s / 2.0 - 2.0 * y
        if y == 0.0:
            return s / 2.0
        # outside the sharing region the agent the state drifts towards holds everything
        return s if (y > 0.0) == (i == 0) else 0.0

    if abs(x) <= s / 4.0:
        q = (s / 2.0 + 2.0 * x, s / 2.0 - 2.0 * x)
    elif x > 0.0:
        q = (s, 0.0)
    else:
        q = (0.0, s)

    def expected_path_position(t: float, i: int) -> float:
        # no volatility: under agent i's belief the state is x + b_i t
        return phi_at(t, x + drifts[i] * t, i)

    return OracleResult(
        p_dyn=delay_value_function(0.0, x, s, T),
        p_sta=delay_static_price(x, s, T),
        phi_at=phi_at,
        q=q,
        expected_path_position=expected_path_position,
        value_function=lambda t, y: delay_value_function(t, y, s, T),
    )


def symmetric_value_function(t: float, x: float, b1: float, b2: float, s1sq: float, s2sq: float, T: float) -> float:
    tau = T - t
    mu = 0.5 * (b1 + b2)
    var = 0.5 * (s1sq + s2sq)
    return x * x + 2.0 * x * mu * tau + var * tau + mu * mu * tau * tau


def example_symmetric(x: float, b1: float, b2: float, s1sq: float, s2sq: float, T: float) -> OracleResult:
    if s1sq <= 0.0 or s2sq <= 0.0:
        raise ValueError("the symmetric example needs positive variances")
    b = (b1, b2)
    var = (s1sq, s2sq)
    mu = 0.5 * (b1 + b2)
    p_sta = x * x + 2.0 * x * mu * T + 0.5 * (s1sq + s2sq) * T + 0.5 * (b1 * b1 + b2 * b2) * T * T

    def phi_at(t: float, y: float, i: int) -> float:
        j = 1 - i
        return y * (b[i] - b[j]) + 0.5 * (T - t) * (b[i] ** 2 - b[j] ** 2) + 0.5 * (var[i] - var[j])

    q = tuple(x * (b[i] - b[1 - i]) + 0.5 * T * (b[i] ** 2 - b[1 - i] ** 2) + 0.5 * (var[i] - var[1 - i]) for i in (0, 1))

    def expected_path_position(t: float, i: int) -> float:
        # phi is affine in the state, so its mean is phi at the mean state
        return phi_at(t, x + b[i] * t, i)

    return OracleResult(
        p_dyn=symmetric_value_function(0.0, x, b1, b2, s1sq, s2sq, T),
        p_sta=p_sta,
        phi_at=phi_at,
        q=q,
        expected_path_position=expected_path_position,
        value_function=lambda t, y: symmetric_value_function(t, y, b1, b2, s1sq, s2sq, T),
    )


def example_nocost(x: float, T: float, s: float = 0.0) -> OracleResult:
    if x != 0.0:
        raise ValueError("the no-cost example is only stated at x = 0")
    if T <= 0.0:
        raise ValueError(f"T must be positive, got {T}")
    drifts = (1.0, 0.0)

    def phi_at(t: float, y: float, i: int) -> float:
        pessimist = -2.0 * (y + T - t)
        return pessimist if i == 1 else s - pessimist

    def expected_path_position(t: float, i: int) -> float:
        return phi_at(t, x + drifts[i] * t, i)

    return OracleResult(
        p_dyn=T * T,
        p_sta=T * T,
        phi_at=phi_at,
        q=(s + T, -T),
        expected_path_position=expected_path_position,
    )
