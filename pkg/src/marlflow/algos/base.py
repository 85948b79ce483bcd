"""Algorithm configuration, category table and the learner base class."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import dataflow
from ..approx import (GradientSet, OptimizerState, Tabular, apply_update, backward, clip_by_norm, forward,
                      net_from_arrays, net_to_arrays)
from ..errors import AlignmentError, ConfigurationError, ModeError

CATEGORIES = {
    "iql": "independent",
    "ia2c": "independent",
    "ippo": "independent",
    "maa2c": "centralized_critic",
    "mappo": "centralized_critic",
    "coma": "centralized_critic",
    "vdn": "value_decomposition",
    "qmix": "value_decomposition",
    "vda2c": "value_decomposition",
}

POSTPROCESS = {
    "independent": dataflow.postprocess_independent,
    "centralized_critic": dataflow.postprocess_centralized_critic,
    "value_decomposition": dataflow.postprocess_value_decomposition,
}


@dataclass
class AlgoConfig:
    name: str = "mappo"
    gamma: float = 0.99
    lam: float = 0.95
    lr_actor: float = 0.001
    lr_critic: float = 0.001
    lr_mixer: float = 0.001
    ppo_clip: float = 0.2
    epochs: int = 4
    normalize_advantages: bool = True
    entropy_coef: float = 0.01
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int | None = None  # None: half of training.total_steps
    target_update_period: int = 200
    episodes_per_iter: int = 4
    batch_episodes: int = 16
    replay_capacity: int = 5000
    mixer: str = "monotonic"  # vda2c only; vdn always sums, qmix is always monotonic
    mixer_hidden: int = 32
    max_grad_norm: float = 10.0

    @property
    def category(self) -> str:
        return CATEGORIES[self.name]

    def validate(self) -> None:
        if self.name not in CATEGORIES:
            raise ConfigurationError(f"algorithm.name: unknown algorithm {self.name!r}; valid: {sorted(CATEGORIES)}")
        for key in ("gamma", "lam", "eps_start", "eps_end"):
            v = getattr(self, key)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"algorithm.{key}: must lie in [0, 1], got {v}")
        for key in ("lr_actor", "lr_critic", "lr_mixer", "ppo_clip"):
            if not getattr(self, key) > 0:
                raise ConfigurationError(f"algorithm.{key}: must be positive")
        for key in ("epochs", "episodes_per_iter", "batch_episodes", "replay_capacity", "mixer_hidden",
                    "target_update_period"):
            if getattr(self, key) < 1:
                raise ConfigurationError(f"algorithm.{key}: must be >= 1")
        if self.mixer not in ("sum", "monotonic"):
            raise ConfigurationError(f"algorithm.mixer: must be 'sum' or 'monotonic', got {self.mixer!r}")


def apply_grads(net, grads, opt, max_norm):
    if isinstance(net, Tabular):
        net.apply_update(grads, opt.lr)
    else:
        apply_update(net, clip_by_norm(grads, max_norm), opt)


def net_forward(net, x):
    return net.forward(x) if isinstance(net, Tabular) else forward(net, x)


def net_backward(net, x, upstream):
    return net.backward(x, upstream) if isinstance(net, Tabular) else backward(net, x, upstream)


def add_grads(a, b):
    if a is None:
        return b
    if isinstance(a, GradientSet):
        return a + b
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0.0) + v
    return out


def stack_masks(items, n_actions) -> np.ndarray:
    return np.stack([np.ones(n_actions) if m is None else np.asarray(m, dtype=float) for m in items])


def team_rows(buffers, spec):
    """Per-agent transition lists aligned row by row (synchronous team data)."""
    agents = list(spec.agents)
    cols = [buffers[a].transitions for a in agents]
    n = len(cols[0])
    for a, col in zip(agents, cols):
        if len(col) != n:
            raise AlignmentError(f"agent {a} has {len(col)} transitions, expected {n}")
    for r in range(n):
        steps = {col[r].step for col in cols}
        if len(steps) != 1:
            raise AlignmentError(f"buffers misaligned at timestep {min(steps)}")
    return agents, cols


class Algorithm:
    """Shared plumbing: category dispatch, exploration, checkpoint arrays."""

    off_policy = False

    def __init__(self, cfg: AlgoConfig, spec, policy_map, hidden=(64, 64), seed=0, model_kind="mlp"):
        cfg.validate()
        if spec.action_space.kind != "discrete":
            raise ConfigurationError("only discrete action spaces are supported")
        if cfg.category == "value_decomposition" and (spec.task_mode != "cooperative" or spec.interaction != "synchronous"):
            raise ModeError(f"{cfg.name} needs a cooperative synchronous task, got {spec.task_mode}/{spec.interaction}")
        self.cfg = cfg
        self.name = cfg.name
        self.category = cfg.category
        self.spec = spec
        self.policy_map = policy_map
        self.hidden = list(hidden)
        self.model_kind = model_kind
        self.rng = np.random.default_rng(seed)
        self.policies: dict = {}
        self.hooks = []
        self.mixer = None
        self.target_mixer = None
        self.mixer_opt = None

    # -- category dispatch -------------------------------------------------
    def postprocess(self, buffers, **kwargs):
        op = POSTPROCESS[self.category]
        out = op(buffers, **kwargs)
        for hook in self.hooks:
            hook(self, op.__name__, out)
        return out

    def policy_of(self, agent):
        return self.policies[self.policy_map.resolve(agent)]

    # -- overridables --------------------------------------------------------
    loss_names: tuple[str, ...] = ()

    def set_exploration(self, env_steps: int, decay_steps: int) -> None:
        pass

    def train_iteration(self, episodes, env_steps: int) -> dict:
        raise NotImplementedError

    def greedy_actions(self, policy_id, bundles) -> list[int]:
        return self.policies[policy_id].greedy(bundles)

    # -- checkpointing -------------------------------------------------------
    def named_nets(self):
        """Yield (key, net, optimizer or None) for every parameter set."""
        for pid, pol in self.policies.items():
            for name, net, opt in pol.nets():
                yield f"{pid}/{name}", net, opt
        if self.mixer is not None and self.mixer.net is not None:
            yield "_mixer/net", self.mixer.net, self.mixer_opt
            yield "_mixer/target", self.target_mixer.net, None

    def to_arrays(self) -> dict:
        out = {}
        for key, net, opt in self.named_nets():
            if isinstance(net, Tabular):
                keys = list(net.table)
                out[f"{key}/table_keys"] = np.array(keys, dtype=float).reshape(len(keys), -1)
                out[f"{key}/table_values"] = np.array([net.table[k] for k in keys]).reshape(len(keys), -1)
            else:
                out.update(net_to_arrays(key, net, opt))
        return out

    def load_arrays(self, arrays) -> None:
        for key, net, opt in self.named_nets():
            if isinstance(net, Tabular):
                keys, vals = arrays[f"{key}/table_keys"], arrays[f"{key}/table_values"]
                net.table = {tuple(k.tolist()): v.copy() for k, v in zip(keys, vals)}
                continue
            loaded, lopt = net_from_arrays(key, arrays)
            if loaded.sizes != net.sizes:
                raise ConfigurationError(f"checkpoint net {key} has sizes {loaded.sizes}, expected {net.sizes}")
            net.load_from(loaded)
            if opt is not None and lopt is not None:
                opt.t, opt.m, opt.v = lopt.t, lopt.m, lopt.v

    def checksum(self) -> float:
        return float(sum(net.checksum() for _, net, _ in self.named_nets()))


def new_optimizer(lr):
    return OptimizerState("adam", lr)
