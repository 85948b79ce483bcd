"""Agent-level dataflow.

Each agent owns its own buffer during collection. Cross-agent information is
injected only in a postprocessing step, one function per algorithm family:

* ``postprocess_independent``: nothing is shared.
* ``postprocess_centralized_critic``: observed data (global state or joint
  observation) and predicted data (other agents' actions, critic values).
* ``postprocess_value_decomposition``: every agent's value prediction, plus
  the state when the mixer conditions on it.

After postprocessing, buffers are grouped per physical policy and each policy
optimizes on its own batch.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Iterable

import numpy as np

from .errors import (AlignmentError, CollectionError, ConfigurationError, MarlflowError, ModeError,
                     ProtocolViolation)
from .interface import AgentId, EnvSpec, ObservationBundle
from .mapping import PolicyMap

SHARED_FIELDS = ("shared_obs", "shared_actions", "peer_values")


@dataclass(eq=False)
class Transition:
    agent_id: AgentId
    obs: np.ndarray
    action_mask: np.ndarray | None
    global_state: np.ndarray | None
    action: int
    reward: float = 0.0
    done: bool = False
    step: int = 0  # env step index at which the action was taken
    logp: float = 0.0  # behaviour log-probability
    next_obs: np.ndarray | None = None
    next_action_mask: np.ndarray | None = None
    next_global_state: np.ndarray | None = None
    # injected during postprocessing
    shared_obs: np.ndarray | None = None
    shared_actions: np.ndarray | None = None
    peer_values: np.ndarray | None = None
    peer_target_values: np.ndarray | None = None
    next_shared_obs: np.ndarray | None = None
    # caches and targets
    value: float | None = None
    centralized_value: float | None = None
    critic_q: np.ndarray | None = None
    return_: float | None = None
    advantage: float | None = None

    def to_record(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


@dataclass
class AgentBuffer:
    agent_id: AgentId
    transitions: list[Transition] = field(default_factory=list)
    episode_ends: list[int] = field(default_factory=list)  # exclusive end index per episode
    total_reward: float = 0.0  # every reward received, attached or not
    unattached_reward: float = 0.0  # reward that arrived before the agent ever acted
    env_steps: int = 0

    def __len__(self):
        return len(self.transitions)

    def episodes(self) -> list[list[Transition]]:
        out, start = [], 0
        for end in self.episode_ends:
            out.append(self.transitions[start:end])
            start = end
        return out

    def copy(self) -> "AgentBuffer":
        return replace(self, transitions=[replace(t) for t in self.transitions],
                       episode_ends=list(self.episode_ends))


Buffers = dict  # AgentId -> AgentBuffer


@dataclass
class SampleBatch:
    groups: dict[str, list[Transition]]

    def __getitem__(self, policy_id):
        return self.groups[policy_id]

    def __len__(self):
        return sum(len(v) for v in self.groups.values())

    def column(self, policy_id, name) -> np.ndarray:
        return np.array([getattr(t, name) for t in self.groups[policy_id]])


# ---------------------------------------------------------------------------
# collection


def collect_episode(env, policies, policy_map: PolicyMap, rng: np.random.Generator,
                    seed: int | None = None) -> Buffers:
    """Run one episode and return per-agent buffers.

    ``policies`` maps PolicyId to an object with
    ``act(bundles, agent_ids, rng) -> list[(action, logp)]``. Rewards arriving
    between two action points of an agent are attached to the earlier
    transition; whatever is pending when the episode ends is flushed into the
    final transition, which is marked done.
    """
    spec: EnvSpec = env.spec
    buffers = {a: AgentBuffer(a) for a in spec.agents}
    pending: dict[AgentId, Transition] = {}
    acc = {a: 0.0 for a in spec.agents}
    step = 0
    try:
        out = env.reset(seed=seed)
    except MarlflowError as exc:
        raise CollectionError(f"reset failed: {exc}", step=0) from exc
    while True:
        for agent, r in out.rewards.items():
            if agent not in acc:
                raise CollectionError(f"reward for undeclared agent {agent!r}", step=step)
            acc[agent] += r
            buffers[agent].total_reward += r
        if out.all_done:
            break
        if step >= spec.episode_limit:
            raise CollectionError(f"episode exceeded its limit of {spec.episode_limit} steps", step=step)
        due = list(out.observations)
        if not due:
            raise CollectionError("no agent due to act in a running episode", step=step)
        for agent in due:
            if agent not in buffers:
                raise CollectionError(f"observation for undeclared agent {agent!r}", step=step)
            bundle = out.observations[agent]
            prev = pending.pop(agent, None)
            if prev is not None:
                prev.reward = acc[agent]
                prev.next_obs = bundle.observation
                prev.next_action_mask = bundle.action_mask
                prev.next_global_state = bundle.global_state
                buffers[agent].transitions.append(prev)
            else:
                buffers[agent].unattached_reward += acc[agent]
            acc[agent] = 0.0
        actions = {}
        by_policy: dict[str, list[AgentId]] = {}
        for agent in due:
            by_policy.setdefault(policy_map.resolve(agent), []).append(agent)
        for pid in policy_map.policy_ids:
            agents = by_policy.get(pid)
            if not agents:
                continue
            bundles = [out.observations[a] for a in agents]
            for agent, bundle, (action, logp) in zip(agents, bundles, policies[pid].act(bundles, agents, rng)):
                actions[agent] = action
                pending[agent] = Transition(agent, bundle.observation, bundle.action_mask, bundle.global_state,
                                            action, step=step, logp=float(logp))
        try:
            out = env.step(actions)
        except (ProtocolViolation, MarlflowError) as exc:
            raise CollectionError(str(exc), step=step) from exc
        step += 1
    for agent, buf in buffers.items():
        prev = pending.pop(agent, None)
        if prev is not None:
            prev.reward = acc[agent]
            prev.done = True
            buf.transitions.append(prev)
        else:
            buf.unattached_reward += acc[agent]
        buf.episode_ends.append(len(buf.transitions))
        buf.env_steps = step
    return buffers


# ---------------------------------------------------------------------------
# returns


def compute_gae(rewards, values, gamma: float, lam: float):
    """Generalized advantage estimate.

    ``values`` has one more entry than ``rewards``: the bootstrap value after
    the last reward (0 when the episode terminated).
    """
    if not 0.0 <= gamma <= 1.0:
        raise ConfigurationError(f"gamma: must lie in [0, 1], got {gamma}")
    if not 0.0 <= lam <= 1.0:
        raise ConfigurationError(f"lambda: must lie in [0, 1], got {lam}")
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape != (rewards.shape[0] + 1,):
        raise ConfigurationError(f"values must have length {rewards.shape[0] + 1}, got {values.shape}")
    adv = np.zeros_like(rewards)
    running = 0.0
    for t in reversed(range(len(rewards))):
        delta = rewards[t] + gamma * values[t + 1] - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
    return adv, adv + values[:-1]


def add_gae(buffers: Buffers, value_attr: str, gamma: float, lam: float, bootstrap_fn=None) -> None:
    """Fill ``return_`` and ``advantage`` per agent episode from a cached value field."""
    for buf in buffers.values():
        for ep in buf.episodes():
            if not ep:
                continue
            vals = [getattr(t, value_attr) for t in ep]
            last = ep[-1]
            tail = 0.0 if last.done or bootstrap_fn is None else float(bootstrap_fn(last))
            adv, ret = compute_gae([t.reward for t in ep], vals + [tail], gamma, lam)
            for t, a, r in zip(ep, adv, ret):
                t.advantage = float(a)
                t.return_ = float(r)


# ---------------------------------------------------------------------------
# postprocessing


def _copy(buffers: Buffers) -> Buffers:
    return {a: b.copy() for a, b in buffers.items()}


def postprocess_independent(buffers: Buffers, value_fn: Callable | None = None,
                            gamma: float = 0.99, lam: float = 0.95) -> Buffers:
    """No information crosses agents. With ``value_fn(agent, obs_rows)`` the
    agent's own value predictions are cached and GAE targets computed."""
    out = _copy(buffers)
    if value_fn is not None:
        for agent, buf in out.items():
            if not buf.transitions:
                continue
            vals = value_fn(agent, np.stack([t.obs for t in buf.transitions]))
            for t, v in zip(buf.transitions, vals):
                t.value = float(v)
        add_gae(out, "value", gamma, lam)
    return out


def _step_table(buffers: Buffers, spec: EnvSpec, strict: bool):
    """Map env step index -> {agent: transition}; in strict mode every agent must act every step."""
    table: dict[int, dict[AgentId, Transition]] = {}
    for agent, buf in buffers.items():
        for t in buf.transitions:
            table.setdefault(t.step, {})[agent] = t
    if strict:
        for step in sorted(table):
            missing = [a for a in spec.agents if a in buffers and a not in table[step]]
            if missing:
                raise AlignmentError(f"buffers misaligned at timestep {step}: no transition for {missing}")
    return table


def joint_observation(obs_by_agent: dict, spec: EnvSpec) -> np.ndarray:
    """Concatenate observations in sorted agent-id order, zeros for absent agents."""
    return np.concatenate([
        np.asarray(obs_by_agent[a], dtype=float) if a in obs_by_agent else np.zeros(spec.obs_dim)
        for a in sorted(spec.agents)
    ])


def _episode_slices(buffers: Buffers):
    """Yield per-episode views {agent: AgentBuffer} of multi-episode buffers."""
    n_eps = max(len(b.episode_ends) for b in buffers.values())
    per_agent = {a: b.episodes() for a, b in buffers.items()}
    for i in range(n_eps):
        yield {a: AgentBuffer(a, eps[i] if i < len(eps) else [], [len(eps[i]) if i < len(eps) else 0])
               for a, eps in per_agent.items()}


def postprocess_centralized_critic(buffers: Buffers, spec: EnvSpec, critic_fn: Callable | None = None,
                                   gamma: float = 0.99, lam: float = 0.95,
                                   shared_obs_fn: Callable | None = None) -> Buffers:
    """Inject central observed data and the other agents' actions; cache critic outputs.

    shared_obs is the global state when the env has one, else the joint
    observation. shared_actions lists every other agent's action (sorted id
    order) at the same step; in asynchronous envs the latest earlier action,
    or -1 when that agent has not acted yet. ``critic_fn(agent, transitions)``
    returns a value per transition, or a row of action values (then the
    chosen entry is the value and the row is kept in ``critic_q``).
    """
    out = _copy(buffers)
    sync = spec.interaction == "synchronous"
    for episode in _episode_slices(out):
        table = _step_table(episode, spec, strict=sync)
        last_obs: dict[AgentId, np.ndarray] = {}
        last_act: dict[AgentId, int] = {}
        for step in sorted(table):
            row = table[step]
            for a, t in row.items():
                last_obs[a] = t.obs
            for agent, t in row.items():
                if shared_obs_fn is not None:
                    t.shared_obs = np.asarray(shared_obs_fn(t, row), dtype=float)
                elif t.global_state is not None:
                    t.shared_obs = np.asarray(t.global_state, dtype=float)
                else:
                    t.shared_obs = joint_observation(last_obs, spec)
                others = []
                for other in sorted(spec.agents):
                    if other == agent:
                        continue
                    if other in row:
                        others.append(row[other].action)
                    else:
                        others.append(last_act.get(other, -1))
                t.shared_actions = np.asarray(others, dtype=np.int64)
            for a, t in row.items():
                last_act[a] = t.action
    if critic_fn is not None:
        for agent, buf in out.items():
            if not buf.transitions:
                continue
            vals = np.asarray(critic_fn(agent, buf.transitions), dtype=float)
            for t, v in zip(buf.transitions, vals):
                if np.ndim(v) == 1:
                    t.critic_q = v
                    t.centralized_value = float(v[t.action])
                else:
                    t.centralized_value = float(v)
        add_gae(out, "centralized_value", gamma, lam)
    return out


MIXERS_WITH_STATE = ("monotonic",)


def postprocess_value_decomposition(buffers: Buffers, spec: EnvSpec, value_fn: Callable, mixer_kind: str,
                                    target_fn: Callable | None = None) -> Buffers:
    """Share every agent's value prediction at each step.

    ``value_fn(agent, transitions)`` gives the agent's prediction per
    transition (chosen-action Q or state value); ``target_fn`` optionally
    gives the bootstrap prediction (legal-max target Q at the next
    observation, 0 when done). The state is injected only for mixers that
    condition on it.
    """
    if spec.task_mode != "cooperative":
        raise ModeError(f"value decomposition needs a cooperative task, got {spec.task_mode!r}")
    if spec.interaction != "synchronous":
        raise ModeError("value decomposition is only defined for synchronous interaction")
    if mixer_kind not in ("sum", "monotonic"):
        raise ConfigurationError(f"mixer: unknown kind {mixer_kind!r}")
    out = _copy(buffers)
    preds = {a: np.asarray(value_fn(a, b.transitions), dtype=float) for a, b in out.items() if b.transitions}
    targets = ({a: np.asarray(target_fn(a, b.transitions), dtype=float) for a, b in out.items() if b.transitions}
               if target_fn is not None else None)
    index = {}
    for a, buf in out.items():
        for i, t in enumerate(buf.transitions):
            index[id(t)] = i
    needs_state = mixer_kind in MIXERS_WITH_STATE
    for episode in _episode_slices(out):
        table = _step_table(episode, spec, strict=True)
        for step in sorted(table):
            row = table[step]
            peer = np.array([preds[a][index[id(row[a])]] for a in spec.agents])
            peer_t = None if targets is None else np.array([targets[a][index[id(row[a])]] for a in spec.agents])
            if needs_state:
                any_t = row[spec.agents[0]]
                if any_t.global_state is not None:
                    state = np.asarray(any_t.global_state, dtype=float)
                    nxt = any_t.next_global_state
                else:
                    state = joint_observation({a: t.obs for a, t in row.items()}, spec)
                    nxt = None if any_t.done else joint_observation({a: t.next_obs for a, t in row.items()}, spec)
                next_state = np.zeros_like(state) if nxt is None else np.asarray(nxt, dtype=float)
            for t in row.values():
                t.peer_values = peer.copy()
                if peer_t is not None:
                    t.peer_target_values = peer_t.copy()
                if needs_state:
                    t.shared_obs = state
                    t.next_shared_obs = next_state
    return out


def shared_field_pattern(buffers: Buffers) -> tuple[bool | None, ...]:
    """Presence of (shared_obs, shared_actions, peer_values) over all transitions.

    Each entry is True (on every transition), False (on none) or None (mixed).
    """
    ts = [t for b in buffers.values() for t in b.transitions]
    pattern = []
    for name in SHARED_FIELDS:
        present = {getattr(t, name) is not None for t in ts}
        pattern.append(present.pop() if len(present) == 1 else None)
    return tuple(pattern)


# ---------------------------------------------------------------------------
# batching and storage


def merge_episodes(episodes: Iterable[Buffers]) -> Buffers:
    merged: Buffers = {}
    for ep in episodes:
        for agent, buf in ep.items():
            m = merged.setdefault(agent, AgentBuffer(agent))
            m.transitions.extend(buf.transitions)
            base = m.episode_ends[-1] if m.episode_ends else 0
            m.episode_ends.extend(base + end for end in buf.episode_ends)
            m.total_reward += buf.total_reward
            m.unattached_reward += buf.unattached_reward
            m.env_steps += buf.env_steps
    return merged


def build_sample_batch(buffers: Buffers, policy_map: PolicyMap) -> SampleBatch:
    groups: dict[str, list[Transition]] = {pid: [] for pid in policy_map.policy_ids}
    for agent in policy_map.agents:
        if agent in buffers:
            groups[policy_map.resolve(agent)].extend(buffers[agent].transitions)
    for agent in buffers:
        policy_map.resolve(agent)  # raises for unmapped agents
    return SampleBatch(groups)


class EpisodeReplay:
    """FIFO store of complete episodes bounded by total transition count."""

    def __init__(self, capacity: int = 5000):
        self.capacity = capacity
        self.episodes: deque[Buffers] = deque()
        self.size = 0

    def __len__(self):
        return len(self.episodes)

    def add(self, episode: Buffers) -> None:
        n = sum(len(b) for b in episode.values())
        self.episodes.append(episode)
        self.size += n
        while self.size > self.capacity and len(self.episodes) > 1:
            old = self.episodes.popleft()
            self.size -= sum(len(b) for b in old.values())

    def sample(self, k: int, rng: np.random.Generator) -> list[Buffers]:
        idx = rng.integers(len(self.episodes), size=k)
        return [self.episodes[i] for i in idx]


def dump_transitions(buffers: Buffers, path, iteration: int | None = None) -> None:
    with open(path, "a") as fh:
        for agent, buf in buffers.items():
            for t in buf.transitions:
                rec = t.to_record()
                if iteration is not None:
                    rec["iteration"] = iteration
                fh.write(json.dumps(rec) + "\n")
