__all__ = [
    "MarketSpec",
    "GridSpec",
    "solve_hjb",
    "portfolios",
    "static_equilibrium",
    "control_value",
]
__version__ = "0.1.0"

from .equilibrium import portfolios
from .grid import GridSpec
from .hjb_solver import solve_hjb
from .mc_control import control_value
from .models import MarketSpec
from .static_market import static_equilibrium
