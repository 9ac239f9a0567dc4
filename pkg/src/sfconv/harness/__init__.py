"""Training engine, datasets, checkpoints and configuration."""

from .config import ConfigError, DataSpec, ModelSpec, TrainConfig, load_config, parse_config
from .optim import AdamState, adam_step, lr_schedule

__all__ = [
    "AdamState",
    "ConfigError",
    "DataSpec",
    "ModelSpec",
    "TrainConfig",
    "adam_step",
    "load_config",
    "lr_schedule",
    "parse_config",
]
