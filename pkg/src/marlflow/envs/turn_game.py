"""Turn-based matching game: agents act strictly one after another.

Each round every agent acts once, in id order. When the last agent of a
round has acted, the whole team earns +1 if all actions in the round were
equal. The acting agent sees the action of the previous mover in the round,
so a perfect team copies whatever the first mover picked.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from ..interface import (ActionSpace, EnvSpec, MultiAgentEnv, ObservationBundle, StepOutput,
                         broadcast_team_reward)


@dataclass
class TurnGameConfig:
    n_agents: int = 2
    n_rounds: int = 4
    n_actions: int = 2
    match_bonus: float = 1.0

    @classmethod
    def from_dict(cls, cfg: dict | None) -> "TurnGameConfig":
        cfg = dict(cfg or {})
        for key in cfg:
            if key not in cls.__dataclass_fields__:
                raise ConfigurationError(f"turn_game config: unknown key {key!r}")
        return cls(**cfg)


class TurnGame(MultiAgentEnv):
    def __init__(self, config: TurnGameConfig | dict | None = None):
        super().__init__()
        if not isinstance(config, TurnGameConfig):
            config = TurnGameConfig.from_dict(config)
        self.config = c = config
        if c.n_agents < 2 or c.n_rounds < 1 or c.n_actions < 1:
            raise ConfigurationError("turn_game config: need n_agents >= 2, n_rounds >= 1, n_actions >= 1")
        agents = tuple(f"a{i}" for i in range(c.n_agents))
        self.spec = EnvSpec(
            agents=agents,
            obs_dim=c.n_actions + 1,
            state_dim=1 + c.n_agents * c.n_actions,
            action_space=ActionSpace.discrete(c.n_actions),
            task_mode="cooperative",
            interaction="asynchronous",
            groups={a: "team" for a in agents},
            episode_limit=c.n_rounds * c.n_agents,
        )
        self.round_actions: list[int] = []

    def optimum(self) -> float:
        return self.config.match_bonus * self.config.n_rounds

    def _observe(self):
        c = self.config
        rnd = self.t // c.n_agents
        mover = self.spec.agents[self.t % c.n_agents]
        prev = np.zeros(c.n_actions)
        if self.round_actions:
            prev[self.round_actions[-1]] = 1.0
        state = np.zeros(1 + c.n_agents * c.n_actions)
        state[0] = rnd / c.n_rounds
        for i, a in enumerate(self.round_actions):
            state[1 + i * c.n_actions + a] = 1.0
        obs = np.concatenate([prev, [rnd / c.n_rounds]])
        return {mover: ObservationBundle(obs, None, state)}

    def _reset(self, rng):
        self.round_actions = []
        return StepOutput(self._observe(), {}, False, {})

    def _step(self, actions):
        ((agent, action),) = actions.items()
        self.round_actions.append(int(action))
        c = self.config
        rewards = {}
        if len(self.round_actions) == c.n_agents:
            matched = len(set(self.round_actions)) == 1
            rewards = broadcast_team_reward(c.match_bonus if matched else 0.0, self.spec.agents)
            self.round_actions = []
        done = self.t >= self.spec.episode_limit
        infos = {agent: {"action": int(action)}}
        return StepOutput({} if done else self._observe(), rewards, done, infos)
