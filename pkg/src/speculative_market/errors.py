from __future__ import annotations
from typing import Any, Optional


class SpecMarketError(Exception):
    """Base class for every error raised by the package."""


class MarketValidationError(SpecMarketError, ValueError):
    def __init__(self, message: str, report: Optional[Any] = None):
        super().__init__(message)
        self.report = report


class ConfigError(SpecMarketError, ValueError):
    """Unreadable or malformed solver settings."""


class CFLError(SpecMarketError, ValueError):
    pass


class EnumerationCapError(SpecMarketError, ValueError):
    def __init__(self, n: int, cap: int):
        super().__init__(
            f"{n} agents exceed the enumeration cap of {cap}; use the root kernel (clear_root) instead"
        )
        self.n = n
        self.cap = cap


class GridMismatchError(SpecMarketError, ValueError):
    pass


class NumericalAbort(SpecMarketError, RuntimeError):
    def __init__(self, message: str, *, k: int = -1, j: int = -1, t: float = float("nan"), x: float = float("nan")):
        super().__init__(f"{message} at node (k={k}, j={j}, t={t:.6g}, x={x:.6g})")
        self.k = k
        self.j = j
        self.t = t
        self.x = x


class ClampBudgetExceeded(SpecMarketError, RuntimeError):
    def __init__(self, clamped: int, n_paths: int, budget: float):
        super().__init__(
            f"{clamped} of {n_paths} paths left the domain (budget {budget:.3%}); widen the grid domain"
        )
        self.clamped = clamped
        self.n_paths = n_paths
        self.budget = budget
