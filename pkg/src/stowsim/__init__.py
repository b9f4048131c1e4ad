"""Simulator for robotic stowing into fabric pods: perception, free space,
affordances, behaviours, match planning and a workcell harness."""
from .errors import (ConfigError, DegenerateClock, InsufficientData, InsufficientPods, InvalidAffordance,
                     ModelUnavailable, OverfullBin, StowSimError)
from .config import ScenarioConfig

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DegenerateClock", "InsufficientData", "InsufficientPods", "InvalidAffordance",
    "ModelUnavailable", "OverfullBin", "StowSimError", "ScenarioConfig", "__version__",
]
