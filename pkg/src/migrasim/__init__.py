"""Timestepped parallel simulation with self-clustering entity migration."""

from .config import ScenarioConfig, load_config
from .core import CausalityError, ProtocolError, RoutingError, SimulationError
from .engine import EngineConfig, RunReport, run_sequential, run_threaded
from .runner import engine_config, run_scenario

__all__ = [
    "CausalityError",
    "EngineConfig",
    "ProtocolError",
    "RoutingError",
    "RunReport",
    "ScenarioConfig",
    "SimulationError",
    "engine_config",
    "load_config",
    "run_scenario",
    "run_sequential",
    "run_threaded",
]
