"""Simulation and exact verification tools for the expert-advice bandit lower-bound construction."""
from .core import (
    ArmId,
    ConfigError,
    ExpertId,
    GameConfig,
    RngStream,
    StrategyId,
    StreamFactory,
    derive_reduced_dims,
    load_config,
    validate_config,
)

__version__ = "0.1.0"
