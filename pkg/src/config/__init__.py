"""Configuration: process settings and run-level config models."""

from src.config.base_config import Settings, settings
from src.config.run_config import (
    AugmentParams,
    BenchConfig,
    NetConfig,
    PhantomSpec,
    RunConfig,
    TrainConfig,
    load_config_file,
    resolve_run_config,
    write_resolved_config,
)

__all__ = [
    "Settings",
    "settings",
    "AugmentParams",
    "BenchConfig",
    "NetConfig",
    "PhantomSpec",
    "RunConfig",
    "TrainConfig",
    "load_config_file",
    "resolve_run_config",
    "write_resolved_config",
]
