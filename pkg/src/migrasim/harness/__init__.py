"""Experiment harness: CLI, sweeps and multi-run statistics."""

from ..config import ConfigError, ScenarioConfig, load_config, parse_config, serialize_config
from .cli import CSV_COLUMNS, run_cli
from .migc import migc_isolation_run
from .stats import mean_ci
from .sweep import SweepSpec, best_mf, run_sweep

__all__ = [
    "CSV_COLUMNS",
    "ConfigError",
    "ScenarioConfig",
    "SweepSpec",
    "best_mf",
    "load_config",
    "mean_ci",
    "migc_isolation_run",
    "parse_config",
    "run_cli",
    "run_sweep",
    "serialize_config",
]
