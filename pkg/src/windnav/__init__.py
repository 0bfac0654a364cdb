"""Time-optimal flight paths in a known wind field: Newton-KKT refinement, graph search and convergence bounds."""

from .errors import (
    ConfigError,
    SingularSystemError,
    SpeedBelowFloorError,
    WindExceedsAirspeedError,
    WindNavError,
)
from .functional import KKTIterate, Multiplier, travel_time
from .kkt_solver import SolveOptions, SolveReport, solve
from .scenario import Scenario, load_scenario
from .trajectory import Direction, Ellipse, Path, State, straight_line
from .windfield import WindBounds, WindField, compute_bounds

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Direction",
    "Ellipse",
    "KKTIterate",
    "Multiplier",
    "Path",
    "Scenario",
    "SingularSystemError",
    "SolveOptions",
    "SolveReport",
    "SpeedBelowFloorError",
    "State",
    "WindBounds",
    "WindExceedsAirspeedError",
    "WindField",
    "WindNavError",
    "compute_bounds",
    "load_scenario",
    "solve",
    "straight_line",
    "travel_time",
]
