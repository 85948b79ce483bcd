"""Run configuration: four sections merged from defaults, YAML files and CLI overrides."""
from __future__ import annotations

import difflib
import types
import typing
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from ..algos.base import AlgoConfig
from ..errors import ConfigurationError
from ..mapping import SharingMode


@dataclass
class TaskConfig:
    env: str = "matrix"
    env_config: dict = field(default_factory=dict)


@dataclass
class ModelConfig:
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"
    kind: str = "mlp"  # "tabular" is accepted by the Q-learning family


@dataclass
class TrainingConfig:
    total_steps: int = 20000
    workers: int = 1
    eval_interval: int = 2000
    eval_episodes: int = 10
    seeds: list[int] = field(default_factory=lambda: [0])
    out_dir: str = "runs"
    run_name: str = ""
    sharing: str = "full"
    custom_mapping: dict = field(default_factory=dict)
    checkpoint: bool = True
    dump_transitions: bool = False


@dataclass
class RunConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    algorithm: AlgoConfig = field(default_factory=AlgoConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def name(self) -> str:
        return self.training.run_name or f"{self.algorithm.name}_{self.task.env}"


SECTIONS = {f.name: f.type for f in fields(RunConfig)}
SECTION_TYPES = {"task": TaskConfig, "algorithm": AlgoConfig, "model": ModelConfig, "training": TrainingConfig}


def _suggest(key, options):
    close = difflib.get_close_matches(key, list(options), n=1)
    return f"; did you mean {close[0]!r}?" if close else f"; valid keys: {sorted(options)}"


def _coerce(value, hint, where):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], where)
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigurationError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{where}: expected true/false, got {value!r}")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{where}: expected a string, got {value!r}")
        return value
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{where}: expected a list, got {value!r}")
        return [_coerce(v, args[0], f"{where}[{i}]") for i, v in enumerate(value)] if args else list(value)
    if hint is dict or origin is dict:
        if not isinstance(value, dict):
            raise ConfigurationError(f"{where}: expected a mapping, got {value!r}")
        return dict(value)
    return value


def _merge_section(obj, updates: dict, section: str):
    hints = typing.get_type_hints(type(obj))
    names = {f.name for f in fields(obj)}
    for key, value in updates.items():
        if key not in names:
            raise ConfigurationError(f"unknown key {section}.{key}{_suggest(key, names)}")
        current = getattr(obj, key)
        if isinstance(current, dict) and isinstance(value, dict) and key == "env_config":
            merged = dict(current)
            merged.update(value)
            value = merged
        setattr(obj, key, _coerce(value, hints[key], f"{section}.{key}"))


def merge(cfg: RunConfig, data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("config file must contain a mapping of sections")
    for section, updates in data.items():
        if section not in SECTIONS:
            raise ConfigurationError(f"unknown config section {section!r}{_suggest(section, SECTIONS)}")
        if updates is None:
            continue
        if not isinstance(updates, dict):
            raise ConfigurationError(f"section {section!r} must be a mapping")
        _merge_section(getattr(cfg, section), updates, section)
    return cfg


def parse_override(text: str) -> dict:
    """``section.key=value`` -> nested dict, value parsed as YAML."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} is not of the form section.key=value")
    path, raw = text.split("=", 1)
    parts = path.strip().split(".")
    if len(parts) < 2:
        raise ConfigurationError(f"override {text!r} must name a section and a key")
    value = yaml.safe_load(raw)
    out: dict = {}
    node = out
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


def validate(cfg: RunConfig) -> RunConfig:
    cfg.algorithm.validate()
    if cfg.model.activation != "tanh":
        raise ConfigurationError("model.activation: only 'tanh' is supported")
    if cfg.model.kind not in ("mlp", "tabular"):
        raise ConfigurationError(f"model.kind: must be 'mlp' or 'tabular', got {cfg.model.kind!r}")
    if cfg.model.kind == "tabular" and cfg.algorithm.name not in ("iql", "vdn", "qmix"):
        raise ConfigurationError("model.kind: tabular models only work with iql, vdn and qmix")
    if not cfg.model.hidden or any(h < 1 for h in cfg.model.hidden):
        raise ConfigurationError("model.hidden: need at least one positive width")
    t = cfg.training
    if t.total_steps < 0:
        raise ConfigurationError("training.total_steps: must be >= 0")
    if t.workers < 1:
        raise ConfigurationError("training.workers: must be >= 1")
    if t.eval_interval < 1 or t.eval_episodes < 1:
        raise ConfigurationError("training.eval_interval and eval_episodes must be >= 1")
    if not t.seeds:
        raise ConfigurationError("training.seeds: need at least one seed")
    try:
        SharingMode(t.sharing)
    except ValueError:
        raise ConfigurationError(f"training.sharing: unknown mode {t.sharing!r}; valid: "
                                 f"{[m.value for m in SharingMode]}") from None
    if cfg.algorithm.eps_decay_steps is None:
        cfg.algorithm.eps_decay_steps = t.total_steps // 2
    return cfg


def load_config(paths=(), overrides=()) -> RunConfig:
    """Resolve a RunConfig: defaults < each file in order < each override in order.

    ``overrides`` holds nested dicts or ``section.key=value`` strings.
    """
    cfg = RunConfig()
    for path in paths:
        try:
            data = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: not valid YAML: {exc}") from exc
        merge(cfg, data or {})
    for ov in overrides:
        merge(cfg, parse_override(ov) if isinstance(ov, str) else ov)
    return validate(cfg)


def config_to_yaml(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def record_config(cfg: RunConfig, out_dir) -> Path:
    """Write the fully resolved config; the file alone reproduces the run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.yaml"
    path.write_text(config_to_yaml(cfg))
    return path


def config_from_yaml(text: str) -> RunConfig:
    return validate(merge(RunConfig(), yaml.safe_load(text)))
