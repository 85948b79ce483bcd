"""Checkpoint files: one npz holding every parameter array plus a JSON header.

Layout: ``__header__`` is a JSON string with the format version, the
resolved config as YAML, the seed, env step count and the policy map.
Every other key is ``<policy id>/<net>/<tensor>`` (W0, b0, ..., sizes,
optimizer moments) or ``_mixer/...`` for a mixing network.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..algos import make_algorithm
from ..approx import CHECKPOINT_VERSION
from ..errors import ConfigurationError
from ..mapping import build_policy_map
from .config import config_from_yaml, config_to_yaml


def save_checkpoint(path, algo, cfg, seed: int, env_steps: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "version": CHECKPOINT_VERSION,
        "algorithm": algo.name,
        "config": config_to_yaml(cfg),
        "seed": int(seed),
        "env_steps": int(env_steps),
        "policy_map": algo.policy_map.to_dict(),
    }
    arrays = algo.to_arrays()
    arrays["__header__"] = np.array(json.dumps(header, sort_keys=True))
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    return path


def read_header(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        if "__header__" not in data:
            raise ConfigurationError(f"{path}: not a checkpoint (no header)")
        header = json.loads(str(data["__header__"]))
    if header.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{path}: checkpoint version {header.get('version')}, expected {CHECKPOINT_VERSION}")
    return header


def load_checkpoint(path):
    """Rebuild (algorithm, config, header) from a checkpoint file."""
    from ..envs import make_env

    header = read_header(path)
    cfg = config_from_yaml(header["config"])
    env = make_env(cfg.task.env, cfg.task.env_config)
    pmap = build_policy_map(env.spec, cfg.training.sharing, cfg.training.custom_mapping)
    if pmap.to_dict() != header["policy_map"]:
        raise ConfigurationError(f"{path}: stored policy map does not match the rebuilt one")
    algo = make_algorithm(cfg.algorithm, env.spec, pmap, hidden=cfg.model.hidden, seed=header["seed"],
                          model_kind=cfg.model.kind)
    with np.load(path, allow_pickle=False) as data:
        algo.load_arrays({k: data[k] for k in data.files if k != "__header__"})
    return algo, cfg, header
