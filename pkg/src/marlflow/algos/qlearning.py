"""Q-learning family: IQL (independent) and VDN / QMIX (value decomposition)."""
from __future__ import annotations

import numpy as np

from ..approx import Tabular, init_params
from ..dataflow import EpisodeReplay, build_sample_batch, merge_episodes
from ..errors import ModeError, NumericError
from .base import (Algorithm, add_grads, apply_grads, net_backward, net_forward, new_optimizer,
                   stack_masks, team_rows)
from .core import epsilon_greedy, masked_argmax, q_target
from .mixers import make_mixer


class QPolicy:
    def __init__(self, policy_id, obs_dim, n_actions, hidden, lr, rng, kind="mlp"):
        self.policy_id = policy_id
        self.n_actions = n_actions
        if kind == "tabular":
            self.q = Tabular(n_actions)
        else:
            self.q = init_params([obs_dim, *hidden, n_actions], rng)
        self.target = self.q.copy()
        self.opt = new_optimizer(lr)
        self.epsilon = 1.0

    def nets(self):
        yield "q", self.q, self.opt
        yield "q_target", self.target, None

    def q_values(self, obs):
        return net_forward(self.q, obs)

    def act(self, bundles, agent_ids, rng):
        q = self.q_values(np.stack([b.observation for b in bundles]))
        return [(epsilon_greedy(q[i], b.action_mask, self.epsilon, rng), 0.0) for i, b in enumerate(bundles)]

    def greedy(self, bundles):
        q = self.q_values(np.stack([b.observation for b in bundles]))
        return [masked_argmax(q[i], b.action_mask) for i, b in enumerate(bundles)]

    def action_probs(self, bundle):
        """Greedy policy as a distribution (used by sharing checks)."""
        p = np.zeros(self.n_actions)
        p[masked_argmax(self.q_values(bundle.observation[None])[0], bundle.action_mask)] = 1.0
        return p


def _next_legal_max(net, transitions, n_actions):
    """Legal-max Q at each transition's next observation; 0 after a terminal step."""
    out = np.zeros(len(transitions))
    live = [i for i, t in enumerate(transitions) if not t.done and t.next_obs is not None]
    if live:
        q = net_forward(net, np.stack([transitions[i].next_obs for i in live]))
        masks = stack_masks([transitions[i].next_action_mask for i in live], n_actions).astype(bool)
        out[live] = np.where(masks, q, -np.inf).max(axis=1)
    return out


def td_loss_and_grads(transitions, q_net, target_net, gamma, n_actions):
    """Mean squared TD error against the target net, and its gradient."""
    obs = np.stack([t.obs for t in transitions])
    actions = np.array([t.action for t in transitions])
    rewards = np.array([t.reward for t in transitions], dtype=float)
    dones = np.array([t.done for t in transitions], dtype=float)
    rows = np.arange(len(transitions))
    q_sa = net_forward(q_net, obs)[rows, actions]
    y = q_target(rewards, dones, gamma, _next_legal_max(target_net, transitions, n_actions))
    err = q_sa - y
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise NumericError("non-finite TD loss")
    upstream = np.zeros((len(transitions), n_actions))
    upstream[rows, actions] = 2.0 * err / len(transitions)
    return loss, net_backward(q_net, obs, upstream)


def iql_update(batch, policies, gamma):
    """Independent TD update for each physical policy: {policy_id: (loss, grads)}."""
    out = {}
    for pid, transitions in batch.groups.items():
        if transitions:
            pol = policies[pid]
            out[pid] = td_loss_and_grads(transitions, pol.q, pol.target, gamma, pol.n_actions)
    return out


def vd_q_update(buffers, policies, policy_map, spec, mixer, target_mixer, gamma):
    """Team TD update through a mixer.

    Uses the injected peer values for Q_tot and the injected target values
    for the bootstrap. Each agent's gradient enters its own net through its
    own entry, scaled by dQ_tot/dq_i. Returns (loss, {policy_id: grads},
    mixer grads or None).
    """
    if spec.task_mode != "cooperative":
        raise ModeError("value decomposition needs a cooperative task")
    agents, cols = team_rows(buffers, spec)
    first = cols[0]
    n = len(first)
    peer = np.stack([t.peer_values for t in first])
    peer_next = np.stack([t.peer_target_values for t in first])
    rewards = np.array([t.reward for t in first], dtype=float)
    dones = np.array([t.done for t in first], dtype=float)
    state = np.stack([t.shared_obs for t in first]) if mixer.needs_state else None
    next_state = np.stack([t.next_shared_obs for t in first]) if mixer.needs_state else None
    q_tot = mixer.forward(peer, state)
    y = q_target(rewards, dones, gamma, target_mixer.forward(peer_next, next_state))
    err = q_tot - y
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise NumericError("non-finite team TD loss")
    dq, mixer_grads = mixer.backward(peer, state, 2.0 * err / n)
    grads = {}
    rows = np.arange(n)
    for i, (agent, col) in enumerate(zip(agents, cols)):
        pol = policies[policy_map.resolve(agent)]
        upstream = np.zeros((n, pol.n_actions))
        upstream[rows, [t.action for t in col]] = dq[:, i]
        g = net_backward(pol.q, np.stack([t.obs for t in col]), upstream)
        grads[pol.policy_id] = add_grads(grads.get(pol.policy_id), g)
    return loss, grads, mixer_grads


class QLearning(Algorithm):
    off_policy = True
    loss_names = ("td_loss",)

    def __init__(self, cfg, spec, policy_map, hidden=(64, 64), seed=0, model_kind="mlp"):
        super().__init__(cfg, spec, policy_map, hidden, seed, model_kind)
        for pid in policy_map.policy_ids:
            self.policies[pid] = QPolicy(pid, spec.obs_dim, spec.n_actions, self.hidden, cfg.lr_critic,
                                         self.rng, model_kind)
        if self.category == "value_decomposition":
            kind = "sum" if cfg.name == "vdn" else "monotonic"
            state_dim = spec.state_dim or spec.n_agents * spec.obs_dim
            self.mixer = make_mixer(kind, spec.n_agents, state_dim, cfg.mixer_hidden, self.hidden, self.rng)
            self.target_mixer = self.mixer.copy()
            self.mixer_opt = new_optimizer(cfg.lr_mixer)
        self.replay = EpisodeReplay(cfg.replay_capacity)
        self.last_target_sync = 0

    def set_exploration(self, env_steps, decay_steps):
        c = self.cfg
        frac = min(1.0, env_steps / decay_steps) if decay_steps > 0 else 1.0
        eps = c.eps_start + frac * (c.eps_end - c.eps_start)
        for pol in self.policies.values():
            pol.epsilon = eps

    def _chosen_q(self, agent, transitions):
        q = self.policy_of(agent).q_values(np.stack([t.obs for t in transitions]))
        return q[np.arange(len(transitions)), [t.action for t in transitions]]

    def _target_max(self, agent, transitions):
        pol = self.policy_of(agent)
        return _next_legal_max(pol.target, transitions, pol.n_actions)

    def train_iteration(self, episodes, env_steps):
        for ep in episodes:
            self.replay.add(ep)
        losses = {}
        if len(self.replay) >= self.cfg.batch_episodes:
            merged = merge_episodes(self.replay.sample(self.cfg.batch_episodes, self.rng))
            if self.category == "independent":
                processed = self.postprocess(merged)
                results = iql_update(build_sample_batch(processed, self.policy_map), self.policies, self.cfg.gamma)
                for pid, (loss, grads) in results.items():
                    pol = self.policies[pid]
                    apply_grads(pol.q, grads, pol.opt, self.cfg.max_grad_norm)
                losses["td_loss"] = float(np.mean([r[0] for r in results.values()]))
            else:
                processed = self.postprocess(merged, spec=self.spec, value_fn=self._chosen_q,
                                             mixer_kind=self.mixer.kind, target_fn=self._target_max)
                loss, grads, mixer_grads = vd_q_update(processed, self.policies, self.policy_map, self.spec,
                                                       self.mixer, self.target_mixer, self.cfg.gamma)
                for pid, g in grads.items():
                    pol = self.policies[pid]
                    apply_grads(pol.q, g, pol.opt, self.cfg.max_grad_norm)
                if mixer_grads is not None:
                    apply_grads(self.mixer.net, mixer_grads, self.mixer_opt, self.cfg.max_grad_norm)
                losses["td_loss"] = loss
        if env_steps - self.last_target_sync >= self.cfg.target_update_period:
            self.sync_targets()
            self.last_target_sync = env_steps
        return losses

    def sync_targets(self):
        for pol in self.policies.values():
            pol.target.load_from(pol.q)
        if self.mixer is not None:
            self.target_mixer.load_from(self.mixer)
