"""Unified multi-agent environment contract.

Every environment speaks the same Gym-style protocol: ``reset`` and ``step``
return a :class:`StepOutput` whose observation, reward and info maps are keyed
by agent id, plus one termination flag that is true only when every agent is
finished. Synchronous environments observe all live agents each step;
asynchronous ones observe only the agents due to act next.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import ConfigurationError, IllegalActionError, ProtocolViolation

AgentId = str

TASK_MODES = ("cooperative", "collaborative", "competitive", "mixed")
INTERACTIONS = ("synchronous", "asynchronous")


@dataclass(frozen=True)
class ActionSpace:
    kind: str = "discrete"
    n: int = 0
    low: tuple[float, ...] = ()
    high: tuple[float, ...] = ()

    @classmethod
    def discrete(cls, n: int) -> "ActionSpace":
        if n < 1:
            raise ConfigurationError(f"action_space: discrete size must be >= 1, got {n}")
        return cls("discrete", n)

    @classmethod
    def box(cls, low, high) -> "ActionSpace":
        low, high = tuple(float(v) for v in low), tuple(float(v) for v in high)
        if len(low) != len(high) or any(lo > hi for lo, hi in zip(low, high)):
            raise ConfigurationError("action_space: box bounds are inconsistent")
        return cls("box", 0, low, high)

    def contains(self, action) -> bool:
        if self.kind == "discrete":
            return isinstance(action, (int, np.integer)) and 0 <= int(action) < self.n
        a = np.asarray(action, dtype=float)
        return a.shape == (len(self.low),) and bool(np.all(a >= self.low) and np.all(a <= self.high))


@dataclass
class ObservationBundle:
    observation: np.ndarray
    action_mask: np.ndarray | None = None
    global_state: np.ndarray | None = None

    def as_dict(self) -> dict:
        return {
            "observation": self.observation.tolist(),
            "action_mask": None if self.action_mask is None else self.action_mask.tolist(),
            "global_state": None if self.global_state is None else self.global_state.tolist(),
        }


@dataclass
class StepOutput:
    observations: dict[AgentId, ObservationBundle]
    rewards: dict[AgentId, float]
    all_done: bool
    infos: dict[AgentId, dict[str, Any]] = field(default_factory=dict)


@dataclass(frozen=True)
class EnvSpec:
    agents: tuple[AgentId, ...]
    obs_dim: int
    state_dim: int
    action_space: ActionSpace
    task_mode: str
    interaction: str
    groups: Mapping[AgentId, str]
    episode_limit: int
    # Declared sum of all agents' episode rewards, for constant-sum tasks.
    constant_sum: float | None = None

    def __post_init__(self):
        if not self.agents:
            raise ConfigurationError("agents: at least one agent is required")
        if len(set(self.agents)) != len(self.agents) or any(not a for a in self.agents):
            raise ConfigurationError("agents: ids must be unique non-empty strings")
        if self.obs_dim < 1:
            raise ConfigurationError(f"obs_dim: must be positive, got {self.obs_dim}")
        if self.state_dim < 0:
            raise ConfigurationError(f"state_dim: must be non-negative, got {self.state_dim}")
        if self.task_mode not in TASK_MODES:
            raise ConfigurationError(f"task_mode: {self.task_mode!r} not in {TASK_MODES}")
        if self.interaction not in INTERACTIONS:
            raise ConfigurationError(f"interaction: {self.interaction!r} not in {INTERACTIONS}")
        if self.episode_limit < 1:
            raise ConfigurationError("episode_limit: must be positive")
        if set(self.groups) != set(self.agents):
            raise ConfigurationError("groups: every agent needs exactly one group label")
        labels = set(self.groups.values())
        if self.task_mode == "cooperative" and len(labels) != 1:
            raise ConfigurationError("groups: cooperative mode requires exactly one group label")
        if self.task_mode == "mixed" and len(labels) < 2:
            raise ConfigurationError("groups: mixed mode requires at least two group labels")

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def n_actions(self) -> int:
        return self.action_space.n

    def group_labels(self) -> list[str]:
        """Distinct group labels in order of first appearance."""
        return list(dict.fromkeys(self.groups[a] for a in self.agents))


def broadcast_team_reward(scalar: float, agents) -> dict[AgentId, float]:
    """Copy a scalar team reward to every agent."""
    agents = list(agents)
    if not agents:
        raise ProtocolViolation("cannot broadcast a team reward to an empty agent list")
    return {a: float(scalar) for a in agents}


class MultiAgentEnv:
    """Base class for environments.

    Subclasses set ``self.spec`` and implement ``_reset(rng)`` and
    ``_step(actions)``. The public methods enforce the protocol so that every
    built-in rejects wrong key sets and masked-out actions the same way.
    """

    spec: EnvSpec

    def __init__(self):
        self._due: dict[AgentId, ObservationBundle] = {}
        self._done = True
        self.t = 0

    def reset(self, seed: int | None = None) -> StepOutput:
        self.t = 0
        out = self._reset(np.random.default_rng(seed))
        self._remember(out)
        return out

    def step(self, actions: Mapping[AgentId, Any]) -> StepOutput:
        if self._done:
            raise ProtocolViolation("step called on a finished episode; call reset first")
        if set(actions) != set(self._due):
            raise ProtocolViolation(
                f"action keys {sorted(actions)} do not match agents due to act {sorted(self._due)}"
            )
        for agent, action in actions.items():
            if not self.spec.action_space.contains(action):
                raise IllegalActionError(agent, action)
            mask = self._due[agent].action_mask
            if mask is not None and not mask[int(action)]:
                raise IllegalActionError(agent, action)
        self.t += 1  # _step sees the index of the state it produces
        out = self._step(dict(actions))
        self._remember(out)
        return out

    @property
    def due_agents(self) -> list[AgentId]:
        return list(self._due)

    def _remember(self, out: StepOutput) -> None:
        self._due = dict(out.observations)
        self._done = out.all_done

    def _reset(self, rng: np.random.Generator) -> StepOutput:
        raise NotImplementedError

    def _step(self, actions: dict[AgentId, Any]) -> StepOutput:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# conformance checking


@dataclass
class Violation:
    episode: int
    step: int
    code: str
    message: str

    def __str__(self):
        return f"episode {self.episode} step {self.step}: {self.code}: {self.message}"


@dataclass
class ConformanceReport:
    env_name: str
    episodes: int = 0
    steps: int = 0
    violations: list[Violation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def add(self, episode, step, code, message):
        self.violations.append(Violation(episode, step, code, message))

    def format(self) -> str:
        lines = [f"env {self.env_name}: {self.episodes} episodes, {self.steps} steps"]
        lines += [str(v) for v in self.violations]
        lines.append("PASS" if self.passed else f"FAIL ({len(self.violations)} violations)")
        return "\n".join(lines)

    def to_records(self) -> list[dict]:
        return [vars(v).copy() for v in self.violations]


def _check_bundles(report, spec, out, ep, t):
    states = []
    for agent, bundle in out.observations.items():
        if agent not in spec.agents:
            report.add(ep, t, "unknown agent", f"observation for undeclared agent {agent!r}")
            continue
        obs = np.asarray(bundle.observation)
        if obs.shape != (spec.obs_dim,):
            report.add(ep, t, "obs_dim mismatch", f"{agent}: shape {obs.shape}, expected ({spec.obs_dim},)")
        elif not np.all(np.isfinite(obs)):
            report.add(ep, t, "non-finite observation", agent)
        if bundle.action_mask is not None:
            mask = np.asarray(bundle.action_mask)
            if spec.action_space.kind != "discrete" or mask.shape != (spec.n_actions,):
                report.add(ep, t, "action_mask mismatch", f"{agent}: shape {mask.shape}")
            elif not np.all((mask == 0) | (mask == 1)):
                report.add(ep, t, "action_mask not binary", agent)
            elif mask.sum() < 1:
                report.add(ep, t, "no legal action", agent)
        gs = bundle.global_state
        if spec.state_dim > 0:
            if gs is None:
                report.add(ep, t, "missing global_state", agent)
            elif np.asarray(gs).shape != (spec.state_dim,):
                report.add(ep, t, "state_dim mismatch", f"{agent}: shape {np.asarray(gs).shape}")
            else:
                states.append((agent, np.asarray(gs)))
        elif gs is not None:
            report.add(ep, t, "state_dim mismatch", f"{agent}: global_state given but state_dim = 0")
    for agent, s in states[1:]:
        if not np.array_equal(s, states[0][1]):
            report.add(ep, t, "global_state inconsistency", f"{agent} differs from {states[0][0]}")


def _legal_random_action(spec, bundle, rng):
    if spec.action_space.kind == "box":
        return rng.uniform(spec.action_space.low, spec.action_space.high)
    if bundle.action_mask is not None:
        legal = np.flatnonzero(np.asarray(bundle.action_mask))
        if legal.size == 0:
            return None
        return int(rng.choice(legal))
    return int(rng.integers(spec.n_actions))


def check_conformance(env: MultiAgentEnv, n_episodes: int, seed: int, name: str | None = None) -> ConformanceReport:
    """Run random legal-action episodes and collect contract violations.

    Violations become report entries; this function only raises for a bad
    ``n_episodes``.
    """
    if n_episodes < 1:
        raise ConfigurationError("n_episodes must be >= 1")
    spec = env.spec
    report = ConformanceReport(name or type(env).__name__)
    rng = np.random.default_rng(seed)
    for ep in range(n_episodes):
        report.episodes += 1
        t = 0
        try:
            out = env.reset(seed=int(rng.integers(2**31)))
        except Exception as exc:  # noqa: BLE001 - surfaced as a report entry
            report.add(ep, 0, "reset failed", repr(exc))
            continue
        if out.rewards:
            report.add(ep, 0, "reward on reset", f"rewards {sorted(out.rewards)}")
        if out.all_done:
            report.add(ep, 0, "done on reset", "all_done true immediately after reset")
            continue
        if not out.observations:
            report.add(ep, 0, "no agent due", "reset observed no agent")
            continue
        _check_bundles(report, spec, out, ep, 0)
        totals = {a: 0.0 for a in spec.agents}
        while not out.all_done:
            if t >= spec.episode_limit:
                report.add(ep, t, "episode_limit overrun", f"still running after {t} steps")
                break
            actions = {agent: _legal_random_action(spec, b, rng) for agent, b in out.observations.items()}
            if any(a is None for a in actions.values()):
                break  # already reported as "no legal action"
            try:
                out = env.step(actions)
            except Exception as exc:  # noqa: BLE001
                report.add(ep, t, "step failed", repr(exc))
                break
            t += 1
            report.steps += 1
            _check_bundles(report, spec, out, ep, t)
            for agent, r in out.rewards.items():
                if agent not in totals:
                    report.add(ep, t, "unknown agent", f"reward for undeclared agent {agent!r}")
                    continue
                if not math.isfinite(r):
                    report.add(ep, t, "non-finite reward", agent)
                    continue
                totals[agent] += r
            for agent in out.infos:
                if agent not in totals:
                    report.add(ep, t, "unknown agent", f"info for undeclared agent {agent!r}")
            if spec.task_mode == "cooperative" and len(set(out.rewards.values())) > 1:
                report.add(ep, t, "cooperative reward mismatch", f"rewards {out.rewards}")
            if out.all_done:
                if out.observations:
                    report.add(ep, t, "agents due after done", f"{sorted(out.observations)}")
                missing = set(spec.agents) - set(out.rewards)
                if missing:
                    report.add(ep, t, "missing final credit", f"no final reward for {sorted(missing)}")
            elif not out.observations:
                report.add(ep, t, "no agent due", "episode running but nobody is due to act")
                break
        else:
            if spec.constant_sum is not None and sum(totals.values()) != spec.constant_sum:
                report.add(ep, t, "constant-sum violation",
                           f"sum {sum(totals.values())} != declared {spec.constant_sum}")
    return report
