from __future__ import annotations
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator


FIELD_KINDS = ("constant", "affine", "table")
PAYOFF_KINDS = ("constant", "quadratic", "affine", "table")
COST_MODES = ("uniform", "linear-augmented", "heterogeneous")


def _floats(values: Sequence[Any]) -> Tuple[float, ...]:
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class CoefficientField:
    """A deterministic coefficient s(t, x), b(t, x) or sigma(t, x).

    Tables are interpolated bilinearly and clamped to their own (t, x) range.
    """

    kind: str
    value: float = 0.0
    intercept: float = 0.0
    slope: float = 0.0
    ts: Tuple[float, ...] = ()
    xs: Tuple[float, ...] = ()
    values: Tuple[Tuple[float, ...], ...] = ()
    _interp: Optional[RegularGridInterpolator] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown coefficient kind {self.kind!r}")
        if self.kind == "table":
            ts = np.asarray(self.ts, dtype=float)
            xs = np.asarray(self.xs, dtype=float)
            table = np.asarray(self.values, dtype=float)
            if ts.size < 2 or xs.size < 2 or table.shape != (ts.size, xs.size):
                raise ValueError("table fields need >= 2 times, >= 2 states and a len(ts) x len(xs) sample table")
            object.__setattr__(self, "_interp", RegularGridInterpolator((ts, xs), table, method="linear"))

    @classmethod
    def constant(cls, value: float) -> "CoefficientField":
        return cls(kind="constant", value=float(value))

    @classmethod
    def affine(cls, intercept: float, slope: float) -> "CoefficientField":
        return cls(kind="affine", intercept=float(intercept), slope=float(slope))

    @classmethod
    def table(cls, ts: Sequence[float], xs: Sequence[float], values: Sequence[Sequence[float]]) -> "CoefficientField":
        return cls(kind="table", ts=_floats(ts), xs=_floats(xs), values=tuple(_floats(row) for row in values))

    @property
    def is_constant(self) -> bool:
        if self.kind == "constant":
            return True
        if self.kind == "affine":
            return self.slope == 0.0
        return bool(np.all(np.asarray(self.values) == self.values[0][0]))

    def evaluate(self, t: Any, x: Any) -> np.ndarray:
        t_arr, x_arr = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        if self.kind == "constant":
            return np.full(x_arr.shape, self.value)
        if self.kind == "affine":
            return self.intercept + self.slope * x_arr
        tc = np.clip(t_arr, self.ts[0], self.ts[-1])
        xc = np.clip(x_arr, self.xs[0], self.xs[-1])
        assert self._interp is not None
        return self._interp(np.stack([tc.ravel(), xc.ravel()], axis=-1)).reshape(x_arr.shape)

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        if self.kind == "affine":
            return {"kind": "affine", "intercept": self.intercept, "slope": self.slope}
        return {"kind": "table", "ts": list(self.ts), "xs": list(self.xs), "values": [list(r) for r in self.values]}

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "CoefficientField":
        kind = raw.get("kind")
        if kind == "constant":
            return cls.constant(raw["value"])
        if kind == "affine":
            return cls.affine(raw.get("intercept", 0.0), raw.get("slope", 0.0))
        if kind == "table":
            return cls.table(raw["ts"], raw["xs"], raw["values"])
        raise ValueError(f"unknown coefficient kind {kind!r}")


@dataclass(frozen=True)
class PayoffSpec:
    kind: str
    value: float = 0.0
    intercept: float = 0.0
    slope: float = 0.0
    xs: Tuple[float, ...] = ()
    values: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in PAYOFF_KINDS:
            raise ValueError(f"unknown payoff kind {self.kind!r}")
        if self.kind == "table" and (len(self.xs) < 2 or len(self.xs) != len(self.values)):
            raise ValueError("table payoffs need matching xs and values with >= 2 entries")

    @classmethod
    def quadratic(cls) -> "PayoffSpec":
        return cls(kind="quadratic")

    @classmethod
    def constant(cls, value: float) -> "PayoffSpec":
        return cls(kind="constant", value=float(value))

    def evaluate(self, x: Any) -> np.ndarray:
        x_arr = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x_arr.shape, self.value)
        if self.kind == "quadratic":
            return x_arr * x_arr
        if self.kind == "affine":
            return self.intercept + self.slope * x_arr
        return np.interp(x_arr, self.xs, self.values)

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        if self.kind == "quadratic":
            return {"kind": "quadratic"}
        if self.kind == "affine":
            return {"kind": "affine", "intercept": self.intercept, "slope": self.slope}
        return {"kind": "table", "xs": list(self.xs), "values": list(self.values)}

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "PayoffSpec":
        kind = raw.get("kind")
        if kind == "constant":
            return cls.constant(raw["value"])
        if kind == "quadratic":
            return cls.quadratic()
        if kind == "affine":
            return cls(kind="affine", intercept=float(raw.get("intercept", 0.0)), slope=float(raw.get("slope", 0.0)))
        if kind == "table":
            return cls(kind="table", xs=_floats(raw["xs"]), values=_floats(raw["values"]))
        raise ValueError(f"unknown payoff kind {kind!r}")


@dataclass(frozen=True)
class BeliefSpec:
    drift: CoefficientField
    volatility: CoefficientField

    @classmethod
    def constant(cls, drift: float, volatility: float) -> "BeliefSpec":
        return cls(CoefficientField.constant(drift), CoefficientField.constant(volatility))

    def to_dict(self) -> Dict[str, Any]:
        return {"drift": self.drift.to_dict(), "vol": self.volatility.to_dict()}

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "BeliefSpec":
        return cls(CoefficientField.from_dict(raw["drift"]), CoefficientField.from_dict(raw["vol"]))


@dataclass(frozen=True, eq=False)
class CostArrays:
    """Per-agent cost coefficients, shape (n,) each."""

    alpha_minus: np.ndarray
    alpha_plus: np.ndarray
    beta_minus: np.ndarray
    beta_plus: np.ndarray

    @property
    def n(self) -> int:
        return int(self.alpha_minus.shape[0])

    @property
    def is_quadratic(self) -> bool:
        return not (np.any(self.beta_minus != 0.0) or np.any(self.beta_plus != 0.0))

    def cost(self, y: np.ndarray, agent: Optional[int] = None) -> np.ndarray:
        """Cost-of-carry per unit time, over the trailing agent axis or for one agent."""
        y = np.asarray(y, dtype=float)
        sel = slice(None) if agent is None else agent
        am, ap = self.alpha_minus[sel], self.alpha_plus[sel]
        bm, bp = self.beta_minus[sel], self.beta_plus[sel]
        long_cost = y * y / (2.0 * ap) + bp * y
        short_cost = y * y / (2.0 * am) - bm * y
        return np.where(y >= 0.0, long_cost, short_cost)


@dataclass(frozen=True)
class CostStructure:
    """Inverse cost coefficients; scalars for uniform/linear-augmented, tuples for heterogeneous."""

    mode: str
    alpha_minus: Any
    alpha_plus: Any
    beta_minus: Any = 0.0
    beta_plus: Any = 0.0

    def __post_init__(self) -> None:
        if self.mode not in COST_MODES:
            raise ValueError(f"unknown cost mode {self.mode!r}")
        if self.mode == "heterogeneous":
            for name in ("alpha_minus", "alpha_plus", "beta_minus", "beta_plus"):
                raw = getattr(self, name)
                object.__setattr__(self, name, _floats(raw) if np.ndim(raw) else float(raw))
        else:
            for name in ("alpha_minus", "alpha_plus", "beta_minus", "beta_plus"):
                object.__setattr__(self, name, float(getattr(self, name)))
            if self.mode == "uniform" and (self.beta_minus != 0.0 or self.beta_plus != 0.0):
                raise ValueError("uniform costs carry no linear terms; use mode 'linear-augmented'")

    @classmethod
    def uniform(cls, alpha_minus: float, alpha_plus: float) -> "CostStructure":
        return cls("uniform", alpha_minus, alpha_plus)

    @classmethod
    def linear(cls, alpha_minus: float, alpha_plus: float, beta_minus: float, beta_plus: float) -> "CostStructure":
        return cls("linear-augmented", alpha_minus, alpha_plus, beta_minus, beta_plus)

    @property
    def has_linear_terms(self) -> bool:
        return bool(np.any(np.asarray(self.beta_minus) != 0.0) or np.any(np.asarray(self.beta_plus) != 0.0))

    def per_agent(self, n: int) -> CostArrays:
        arrays = []
        for name in ("alpha_minus", "alpha_plus", "beta_minus", "beta_plus"):
            raw = np.asarray(getattr(self, name), dtype=float)
            if raw.ndim == 0:
                raw = np.full(n, float(raw))
            elif raw.shape != (n,):
                raise ValueError(f"{name} has {raw.shape[0]} entries for {n} agents")
            arrays.append(raw)
        return CostArrays(*arrays)

    def scaled(self, factor_minus: float = 1.0, factor_plus: float = 1.0) -> "CostStructure":
        def _scale(raw: Any, f: float) -> Any:
            return tuple(f * v for v in raw) if isinstance(raw, tuple) else f * raw

        return replace(
            self,
            alpha_minus=_scale(self.alpha_minus, factor_minus),
            alpha_plus=_scale(self.alpha_plus, factor_plus),
        )

    def to_dict(self) -> Dict[str, Any]:
        def _plain(raw: Any) -> Any:
            return list(raw) if isinstance(raw, tuple) else raw

        out: Dict[str, Any] = {
            "mode": self.mode,
            "alpha_minus": _plain(self.alpha_minus),
            "alpha_plus": _plain(self.alpha_plus),
        }
        if self.mode != "uniform":
            out["beta_minus"] = _plain(self.beta_minus)
            out["beta_plus"] = _plain(self.beta_plus)
        return out

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "CostStructure":
        return cls(
            mode=raw.get("mode", "uniform"),
            alpha_minus=raw["alpha_minus"],
            alpha_plus=raw["alpha_plus"],
            beta_minus=raw.get("beta_minus", 0.0),
            beta_plus=raw.get("beta_plus", 0.0),
        )


@dataclass(frozen=True)
class MarketSpec:
    agents: Tuple[BeliefSpec, ...]
    costs: CostStructure
    supply: CoefficientField
    payoff: PayoffSpec
    T: float
    x0: float
    degenerate: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "x0", float(self.x0))

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def is_constant_supply(self) -> bool:
        return self.supply.is_constant

    def constant_supply(self) -> float:
        return float(self.supply.evaluate(0.0, self.x0))

    def cost_arrays(self) -> CostArrays:
        return self.costs.per_agent(self.n)

    def drifts(self, t: Any, x: Any) -> np.ndarray:
        """Shape (n, *x.shape)."""
        return np.stack([a.drift.evaluate(t, x) for a in self.agents])

    def volatilities(self, t: Any, x: Any) -> np.ndarray:
        return np.stack([a.volatility.evaluate(t, x) for a in self.agents])

    def with_costs(self, costs: CostStructure) -> "MarketSpec":
        return replace(self, costs=costs)

    def with_supply(self, supply: CoefficientField) -> "MarketSpec":
        return replace(self, supply=supply)

    def with_supply_scale(self, factor: float) -> "MarketSpec":
        s = self.supply
        if s.kind == "constant":
            scaled = CoefficientField.constant(factor * s.value)
        elif s.kind == "affine":
            scaled = CoefficientField.affine(factor * s.intercept, factor * s.slope)
        else:
            scaled = CoefficientField.table(s.ts, s.xs, [[factor * v for v in row] for row in s.values])
        return replace(self, supply=scaled)

    def with_agents(self, agents: Sequence[BeliefSpec]) -> "MarketSpec":
        return replace(self, agents=tuple(agents))

    def with_payoff(self, payoff: PayoffSpec) -> "MarketSpec":
        return replace(self, payoff=payoff)

    def with_x0(self, x0: float) -> "MarketSpec":
        return replace(self, x0=float(x0))

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "agents": [a.to_dict() for a in self.agents],
            "costs": self.costs.to_dict(),
            "supply": self.supply.to_dict(),
            "payoff": self.payoff.to_dict(),
            "T": self.T,
            "x0": self.x0,
        }
        if self.degenerate:
            out["degenerate"] = True
        return out

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "MarketSpec":
        return cls(
            agents=tuple(BeliefSpec.from_dict(a) for a in raw["agents"]),
            costs=CostStructure.from_dict(raw["costs"]),
            supply=CoefficientField.from_dict(raw.get("supply", {"kind": "constant", "value": 0.0})),
            payoff=PayoffSpec.from_dict(raw.get("payoff", {"kind": "quadratic"})),
            T=float(raw["T"]),
            x0=float(raw.get("x0", 0.0)),
            degenerate=bool(raw.get("degenerate", False)),
        )
