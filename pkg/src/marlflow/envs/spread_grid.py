"""Cooperative navigation on a small grid: cover every landmark."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from ..interface import (ActionSpace, EnvSpec, MultiAgentEnv, ObservationBundle, StepOutput,
                         broadcast_team_reward)

# stay, up, down, left, right
MOVES = np.array([[0, 0], [0, 1], [0, -1], [-1, 0], [1, 0]])


@dataclass
class SpreadGridConfig:
    grid_size: int = 4
    n_agents: int = 2
    n_landmarks: int = 2
    horizon: int = 10

    @classmethod
    def from_dict(cls, cfg: dict | None) -> "SpreadGridConfig":
        cfg = dict(cfg or {})
        for key in cfg:
            if key not in cls.__dataclass_fields__:
                raise ConfigurationError(f"spread_grid config: unknown key {key!r}")
        return cls(**cfg)


def spread_grid_reward(positions, landmarks) -> float:
    """Negative sum over landmarks of the Manhattan distance to the nearest agent."""
    positions = np.asarray(positions).reshape(-1, 2)
    landmarks = np.asarray(landmarks).reshape(-1, 2)
    dist = np.abs(landmarks[:, None, :] - positions[None, :, :]).sum(-1)
    return -float(dist.min(axis=1).sum())


class SpreadGrid(MultiAgentEnv):
    def __init__(self, config: SpreadGridConfig | dict | None = None):
        super().__init__()
        if not isinstance(config, SpreadGridConfig):
            config = SpreadGridConfig.from_dict(config)
        self.config = c = config
        if c.grid_size < 2:
            raise ConfigurationError("grid_size: must be >= 2")
        if c.n_landmarks < 1:
            raise ConfigurationError("n_landmarks: must be >= 1")
        if not 1 <= c.n_agents <= 10:
            raise ConfigurationError("n_agents: must be between 1 and 10")
        if c.horizon < 1:
            raise ConfigurationError("horizon: must be positive")
        agents = tuple(f"a{i}" for i in range(c.n_agents))
        self.spec = EnvSpec(
            agents=agents,
            obs_dim=2 + 2 * c.n_landmarks,
            state_dim=2 * c.n_agents,
            action_space=ActionSpace.discrete(len(MOVES)),
            task_mode="cooperative",
            interaction="synchronous",
            groups={a: "team" for a in agents},
            episode_limit=c.horizon,
        )
        self.positions = np.zeros((c.n_agents, 2), dtype=int)
        self.landmarks = np.zeros((c.n_landmarks, 2), dtype=int)

    def _observe(self):
        scale = self.config.grid_size - 1
        marks = self.landmarks.reshape(-1) / scale
        state = self.positions.reshape(-1) / scale
        return {
            a: ObservationBundle(np.concatenate([self.positions[i] / scale, marks]), None, state.copy())
            for i, a in enumerate(self.spec.agents)
        }

    def _reset(self, rng):
        g = self.config.grid_size
        self.positions = rng.integers(0, g, size=(self.config.n_agents, 2))
        self.landmarks = rng.integers(0, g, size=(self.config.n_landmarks, 2))
        return StepOutput(self._observe(), {}, False, {})

    def _step(self, actions):
        moves = np.array([MOVES[int(actions[a])] for a in self.spec.agents])
        self.positions = np.clip(self.positions + moves, 0, self.config.grid_size - 1)
        reward = spread_grid_reward(self.positions, self.landmarks)
        done = self.t >= self.config.horizon
        infos = {a: {"covered": reward == 0.0} for a in self.spec.agents}
        return StepOutput({} if done else self._observe(),
                          broadcast_team_reward(reward, self.spec.agents), done, infos)
