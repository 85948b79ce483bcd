"""Repeated normal-form games with per-group payoff tensors."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from ..interface import ActionSpace, EnvSpec, MultiAgentEnv, ObservationBundle, StepOutput

PRESETS = {
    "coordination": dict(
        n_agents=2, n_actions=2, mode="cooperative",
        payoff={"team": [[1.0, 0.0], [0.0, 0.5]]},
    ),
    "masked_coordination": dict(
        n_agents=2, n_actions=2, mode="cooperative", mask_schedule="alternating",
        payoff={"team": [[1.0, 0.0], [0.0, 0.5]]},
    ),
    "matching_pennies": dict(
        n_agents=2, n_actions=2, mode="competitive", constant_sum=0.0,
        groups={"a0": "a0", "a1": "a1"},
        payoff={"a0": [[1.0, -1.0], [-1.0, 1.0]], "a1": [[-1.0, 1.0], [1.0, -1.0]]},
    ),
    "team_2v2": dict(
        n_agents=4, n_actions=2, mode="mixed", constant_sum=0.0,
        groups={"a0": "red", "a1": "red", "a2": "blue", "a3": "blue"},
        payoff="team_2v2",
    ),
}


def _team_2v2_payoff():
    # red scores +1/2 for each pairing (a0 vs a2, a1 vs a3) it matches, -1/2 otherwise
    red = np.zeros((2, 2, 2, 2))
    for a0, a1, a2, a3 in itertools.product(range(2), repeat=4):
        red[a0, a1, a2, a3] = 0.5 * ((1 if a0 == a2 else -1) + (1 if a1 == a3 else -1))
    return {"red": red, "blue": -red}


@dataclass
class MatrixGameConfig:
    preset: str = "coordination"
    n_agents: int = 2
    n_actions: int = 2
    payoff: dict = field(default_factory=dict)
    mode: str = "cooperative"
    horizon: int = 5
    groups: dict | None = None
    global_state: bool = True
    mask_schedule: str = "none"
    constant_sum: float | None = None
    payoff_scale: float = 1.0

    @classmethod
    def from_dict(cls, cfg: dict | None) -> "MatrixGameConfig":
        cfg = dict(cfg or {})
        preset = cfg.get("preset", "coordination")
        if preset != "custom" and preset not in PRESETS:
            raise ConfigurationError(
                f"preset: unknown matrix preset {preset!r}; valid: {sorted(PRESETS) + ['custom']}")
        merged = dict(PRESETS.get(preset, {}))
        merged.update(cfg)
        merged["preset"] = preset
        known = set(cls.__dataclass_fields__)
        for key in merged:
            if key not in known:
                raise ConfigurationError(f"matrix config: unknown key {key!r}")
        return cls(**merged)


def masked_action_set(step_index: int, config) -> np.ndarray:
    """Deterministic per-step legality pattern.

    ``alternating``: every action legal on even steps, action 0 illegal on
    odd steps. ``none``: always all legal.
    """
    n = config.n_actions
    mask = np.ones(n, dtype=np.int8)
    if config.mask_schedule == "alternating" and step_index % 2 == 1 and n > 1:
        mask[0] = 0
    return mask


class MatrixGame(MultiAgentEnv):
    def __init__(self, config: MatrixGameConfig | dict | None = None):
        super().__init__()
        if not isinstance(config, MatrixGameConfig):
            config = MatrixGameConfig.from_dict(config)
        self.config = c = config
        if c.n_agents < 1 or c.n_actions < 1 or c.horizon < 1:
            raise ConfigurationError("matrix config: n_agents, n_actions and horizon must be positive")
        if c.mask_schedule not in ("none", "alternating"):
            raise ConfigurationError(f"mask_schedule: unknown schedule {c.mask_schedule!r}")
        agents = tuple(f"a{i}" for i in range(c.n_agents))
        groups = dict(c.groups) if c.groups else {a: "team" for a in agents}
        payoff = _team_2v2_payoff() if c.payoff == "team_2v2" else c.payoff
        shape = (c.n_actions,) * c.n_agents
        self.payoff = {}
        for label in set(groups.values()):
            if label not in payoff:
                raise ConfigurationError(f"payoff: missing payoff tensor for group {label!r}")
            table = np.asarray(payoff[label], dtype=float) * c.payoff_scale
            if table.shape != shape:
                raise ConfigurationError(f"payoff: group {label!r} has shape {table.shape}, expected {shape}")
            if not np.all(np.isfinite(table)):
                raise ConfigurationError(f"payoff: group {label!r} has non-finite entries")
            self.payoff[label] = table
        if c.constant_sum is not None:
            total = sum(self.payoff[groups[a]] for a in agents)
            if not np.all(total == c.constant_sum):
                raise ConfigurationError("payoff: agent payoffs do not sum to constant_sum for every joint action")
        self.spec = EnvSpec(
            agents=agents,
            obs_dim=2,
            state_dim=2 if c.global_state else 0,
            action_space=ActionSpace.discrete(c.n_actions),
            task_mode=c.mode,
            interaction="synchronous",
            groups=groups,
            episode_limit=c.horizon,
            constant_sum=None if c.constant_sum is None else c.constant_sum * c.horizon,
        )

    def optimum(self) -> float:
        """Best achievable episode team reward (cooperative games only)."""
        (table,) = self.payoff.values()
        if self.config.mask_schedule == "none":
            return float(table.max()) * self.config.horizon
        total = 0.0
        for t in range(self.config.horizon):
            legal = np.flatnonzero(masked_action_set(t, self.config))
            total += table[np.ix_(*[legal] * self.config.n_agents)].max()
        return float(total)

    def _observe(self) -> dict[str, ObservationBundle]:
        feat = np.array([1.0, self.t / self.config.horizon])
        mask = masked_action_set(self.t, self.config) if self.config.mask_schedule != "none" else None
        state = feat.copy() if self.config.global_state else None
        return {a: ObservationBundle(feat.copy(), None if mask is None else mask.copy(), state)
                for a in self.spec.agents}

    def _reset(self, rng):
        return StepOutput(self._observe(), {}, False, {})

    def _step(self, actions):
        joint = tuple(int(actions[a]) for a in self.spec.agents)
        rewards = {a: float(self.payoff[self.spec.groups[a]][joint]) for a in self.spec.agents}
        done = self.t >= self.config.horizon
        obs = {} if done else self._observe()
        return StepOutput(obs, rewards, done, {a: {"joint_action": list(joint)} for a in self.spec.agents})
