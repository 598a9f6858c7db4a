from __future__ import annotations
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Any, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import CFLError, MarketValidationError
from .market_model import coefficient_bounds, default_domain
from .models import MarketSpec


SCHEMES = ("explicit-upwind", "degenerate-upwind")


@dataclass(frozen=True)
class GridSpec:
    """Uniform (t, x) grid on [0, T] x [x_lo, x_hi] with nt steps and nx nodes."""

    x_lo: float
    x_hi: float
    nx: int
    nt: int
    T: float
    scheme: str = "explicit-upwind"

    def __post_init__(self) -> None:
        if self.nx < 3:
            raise ValueError(f"nx must be >= 3, got {self.nx}")
        if self.nt < 1:
            raise ValueError(f"nt must be >= 1, got {self.nt}")
        if not self.x_lo < self.x_hi:
            raise ValueError(f"empty domain [{self.x_lo}, {self.x_hi}]")
        if not self.T > 0.0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / (self.nx - 1)

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.nx)

    @property
    def ts(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)

    def cfl_number(self, spec: MarketSpec) -> float:
        max_sigma_sq, max_b = coefficient_bounds(spec, self.xs)
        return self.dt * (max_sigma_sq / self.dx**2 + max_b / self.dx)

    def check(self, spec: MarketSpec) -> None:
        if not self.x_lo < spec.x0 < self.x_hi:
            raise MarketValidationError(f"x0={spec.x0} outside the grid domain ({self.x_lo}, {self.x_hi})")
        if abs(self.T - spec.T) > 1e-12 * max(1.0, spec.T):
            raise MarketValidationError(f"grid horizon {self.T} differs from market horizon {spec.T}")
        cfl = self.cfl_number(spec)
        if cfl > 1.0:
            raise CFLError(f"CFL number {cfl:.4f} > 1 (dx={self.dx:.4g}, dt={self.dt:.4g}); raise nt or coarsen nx")

    @classmethod
    def for_spec(
        cls,
        spec: MarketSpec,
        nx: int = 801,
        safety: float = 0.9,
        width_multiplier: float = 1.0,
        nt: Optional[int] = None,
    ) -> "GridSpec":
        x_lo, x_hi = default_domain(spec, width_multiplier)
        scheme = "degenerate-upwind" if spec.degenerate else "explicit-upwind"
        trial = cls(x_lo, x_hi, nx, 1, spec.T, scheme)
        if nt is None:
            max_sigma_sq, max_b = coefficient_bounds(spec, trial.xs)
            rate = max_sigma_sq / trial.dx**2 + max_b / trial.dx
            nt = max(1, math.ceil(spec.T * rate / safety))
        return replace(trial, nt=int(nt))

    def refined(self) -> "GridSpec":
        """Half dx and a quarter dt, which keeps the CFL number from growing."""
        return replace(self, nx=2 * self.nx - 1, nt=4 * self.nt)

    def compatible_with(self, other: "GridSpec") -> bool:
        return self == other


@dataclass(frozen=True, eq=False)
class PriceField:
    """v on the grid; theta[k] is the d/dt v cleared over [t_k, t_{k+1}]."""

    values: np.ndarray
    theta: np.ndarray
    grid: GridSpec
    mode: str

    def __post_init__(self) -> None:
        g = self.grid
        if self.values.shape != (g.nt + 1, g.nx) or self.theta.shape != (g.nt, g.nx):
            raise ValueError("field arrays do not match the grid shape")

    @cached_property
    def _interp(self) -> RegularGridInterpolator:
        return RegularGridInterpolator((self.grid.ts, self.grid.xs), self.values, method="linear")

    def at(self, t: Any, x: Any) -> np.ndarray:
        t_arr, x_arr = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        tc = np.clip(t_arr, 0.0, self.grid.T)
        xc = np.clip(x_arr, self.grid.x_lo, self.grid.x_hi)
        return self._interp(np.stack([tc.ravel(), xc.ravel()], axis=-1)).reshape(x_arr.shape)

    def p_dyn(self, x0: float) -> float:
        return float(self.at(0.0, x0))

    def row_index(self, t: float) -> int:
        return int(np.clip(round(t / self.grid.dt), 0, self.grid.nt))

    def row(self, t: float) -> np.ndarray:
        return self.values[self.row_index(t)]
