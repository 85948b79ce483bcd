"""Experiment runner: config resolution, training loop, checkpoints and plots."""
from .checkpoint import load_checkpoint, read_header, save_checkpoint
from .config import RunConfig, config_from_yaml, config_to_yaml, load_config, parse_override, record_config
from .train import Trainer, TrainingError, evaluate, group_rewards, train

__all__ = [
    "RunConfig", "load_config", "parse_override", "record_config", "config_to_yaml", "config_from_yaml",
    "Trainer", "TrainingError", "train", "evaluate", "group_rewards",
    "save_checkpoint", "load_checkpoint", "read_header",
]
