"""Policy-gradient family.

IA2C / IPPO use a critic on the agent's own observation. MAA2C / MAPPO use
a critic on the shared observation plus the agent's own observation; COMA's
critic also sees the other agents' actions (one-hot) and outputs a value per
own action. VDA2C mixes per-agent state values into a team value. Whenever a
physical policy serves more than one agent, centralized critic inputs end
with a one-hot of the agent's slot among the agents bound to that policy.
"""
from __future__ import annotations

import numpy as np

from ..approx import backward, forward, init_params
from ..dataflow import build_sample_batch, compute_gae, merge_episodes
from ..errors import ModeError
from .base import Algorithm, add_grads, apply_grads, new_optimizer, stack_masks, team_rows
from .core import (centralized_critic_loss, coma_advantage, entropy, entropy_grad_logits, masked_argmax,
                   masked_log_softmax, one_hot, pg_actor_loss, ppo_surrogate, ppo_surrogate_grad)
from .mixers import make_mixer

PPO_ALGOS = ("ippo", "mappo")
ACTOR_OUT_SCALE = 0.01  # near-uniform initial policy


class ActorCriticPolicy:
    def __init__(self, policy_id, obs_dim, n_actions, critic_in, critic_out, hidden, lr_actor, lr_critic, rng):
        self.policy_id = policy_id
        self.n_actions = n_actions
        self.actor = init_params([obs_dim, *hidden, n_actions], rng, out_scale=ACTOR_OUT_SCALE)
        self.critic = init_params([critic_in, *hidden, critic_out], rng)
        self.actor_opt = new_optimizer(lr_actor)
        self.critic_opt = new_optimizer(lr_critic)

    def nets(self):
        yield "actor", self.actor, self.actor_opt
        yield "critic", self.critic, self.critic_opt

    def log_probs(self, obs, masks):
        return masked_log_softmax(forward(self.actor, obs), masks)

    def act(self, bundles, agent_ids, rng):
        obs = np.stack([b.observation for b in bundles])
        logp = self.log_probs(obs, stack_masks([b.action_mask for b in bundles], self.n_actions))
        out = []
        for row in logp:
            a = int(rng.choice(self.n_actions, p=np.exp(row)))
            out.append((a, row[a]))
        return out

    def greedy(self, bundles):
        obs = np.stack([b.observation for b in bundles])
        masks = stack_masks([b.action_mask for b in bundles], self.n_actions)
        return [masked_argmax(row, m) for row, m in zip(self.log_probs(obs, masks), masks)]

    def action_probs(self, bundle):
        masks = stack_masks([bundle.action_mask], self.n_actions)
        return np.exp(self.log_probs(bundle.observation[None], masks))[0]


class ActorCritic(Algorithm):
    loss_names = ("actor_loss", "critic_loss", "entropy")

    def __init__(self, cfg, spec, policy_map, hidden=(64, 64), seed=0, model_kind="mlp",
                 shared_obs_fn=None, shared_obs_dim=None):
        super().__init__(cfg, spec, policy_map, hidden, seed, model_kind)
        if self.category == "value_decomposition" and spec.task_mode != "cooperative":
            raise ModeError(f"{cfg.name} needs a cooperative task, got {spec.task_mode!r}")
        self.shared_obs_fn = shared_obs_fn
        self.is_ppo = cfg.name in PPO_ALGOS
        self.is_coma = cfg.name == "coma"
        if shared_obs_dim is None:
            shared_obs_dim = spec.state_dim or spec.n_agents * spec.obs_dim
        self.shared_obs_dim = shared_obs_dim
        n, a = spec.n_agents, spec.n_actions
        for pid in policy_map.policy_ids:
            n_bound = len(policy_map.agents_of(pid))
            slot = n_bound if n_bound > 1 else 0
            if self.category == "centralized_critic":
                critic_in = shared_obs_dim + spec.obs_dim + slot
                if self.is_coma:
                    critic_in += (n - 1) * a
            else:
                critic_in = spec.obs_dim
            critic_out = a if self.is_coma else 1
            self.policies[pid] = ActorCriticPolicy(pid, spec.obs_dim, a, critic_in, critic_out, self.hidden,
                                                   cfg.lr_actor, cfg.lr_critic, self.rng)
        if self.category == "value_decomposition":
            state_dim = spec.state_dim or n * spec.obs_dim
            self.mixer = make_mixer(cfg.mixer, n, state_dim, cfg.mixer_hidden, self.hidden, self.rng)
            self.target_mixer = self.mixer  # no bootstrapping target for on-policy mixing
            self.mixer_opt = new_optimizer(cfg.lr_mixer)

    def named_nets(self):
        for pid, pol in self.policies.items():
            for name, net, opt in pol.nets():
                yield f"{pid}/{name}", net, opt
        if self.mixer is not None and self.mixer.net is not None:
            yield "_mixer/net", self.mixer.net, self.mixer_opt

    # -- critic inputs -------------------------------------------------------
    def critic_inputs(self, agent, transitions):
        obs = np.stack([t.obs for t in transitions])
        if self.category != "centralized_critic":
            return obs
        parts = [np.stack([t.shared_obs for t in transitions]).reshape(len(transitions), self.shared_obs_dim)]
        if self.is_coma:
            acts = one_hot(np.stack([t.shared_actions for t in transitions]), self.spec.n_actions)
            parts.append(acts.reshape(len(transitions), -1))
        parts.append(obs)
        idx, n_bound = self.policy_map.slot(agent)
        if n_bound > 1:
            parts.append(np.tile(one_hot(idx, n_bound), (len(transitions), 1)))
        return np.concatenate(parts, axis=1)

    def _own_value(self, agent, obs):
        return forward(self.policy_of(agent).critic, obs)[:, 0]

    def _critic_out(self, agent, transitions):
        out = forward(self.policy_of(agent).critic, self.critic_inputs(agent, transitions))
        return out if self.is_coma else out[:, 0]

    def _state_value(self, agent, transitions):
        return self._own_value(agent, np.stack([t.obs for t in transitions]))

    # -- postprocessing --------------------------------------------------------
    def process(self, episodes):
        """Merge episodes, run the category's postprocess and fill advantages/returns."""
        merged = merge_episodes(episodes)
        c = self.cfg
        if self.category == "independent":
            return self.postprocess(merged, value_fn=self._own_value, gamma=c.gamma, lam=c.lam)
        if self.category == "centralized_critic":
            out = self.postprocess(merged, spec=self.spec, critic_fn=self._critic_out, gamma=c.gamma, lam=c.lam,
                                   shared_obs_fn=self.shared_obs_fn)
            if self.is_coma:
                for agent, buf in out.items():
                    if not buf.transitions:
                        continue
                    pol = self.policy_of(agent)
                    obs = np.stack([t.obs for t in buf.transitions])
                    probs = np.exp(pol.log_probs(obs, stack_masks([t.action_mask for t in buf.transitions],
                                                                   pol.n_actions)))
                    for t, p in zip(buf.transitions, probs):
                        t.advantage = coma_advantage(t.critic_q, p, t.action)
            return out
        out = self.postprocess(merged, spec=self.spec, value_fn=self._state_value, mixer_kind=self.mixer.kind)
        agents, cols = team_rows(out, self.spec)
        for ep_start, ep_end in _episode_bounds(out[agents[0]]):
            rows = [[col[r] for col in cols] for r in range(ep_start, ep_end)]
            peer = np.stack([row[0].peer_values for row in rows])
            state = np.stack([row[0].shared_obs for row in rows]) if self.mixer.needs_state else None
            v_tot = self.mixer.forward(peer, state)
            last = rows[-1][0]
            tail = 0.0 if last.done else float(v_tot[-1])
            adv, ret = compute_gae([row[0].reward for row in rows], np.append(v_tot, tail), c.gamma, c.lam)
            for row, vt, a_, r_ in zip(rows, v_tot, adv, ret):
                for t in row:
                    t.centralized_value = float(vt)
                    t.advantage = float(a_)
                    t.return_ = float(r_)
        return out

    # -- gradients -------------------------------------------------------------
    def actor_loss_and_grads(self, policy_id, transitions, advantages=None):
        pol = self.policies[policy_id]
        n = len(transitions)
        obs = np.stack([t.obs for t in transitions])
        masks = stack_masks([t.action_mask for t in transitions], pol.n_actions)
        actions = np.array([t.action for t in transitions])
        adv = np.array([t.advantage for t in transitions], dtype=float) if advantages is None else advantages
        logp_all = masked_log_softmax(forward(pol.actor, obs), masks)
        probs = np.exp(logp_all)
        logp = logp_all[np.arange(n), actions]
        ent = entropy(probs)
        dlogp = one_hot(actions, pol.n_actions) - probs
        coef = self.cfg.entropy_coef
        if self.is_ppo:
            ratio = np.exp(logp - np.array([t.logp for t in transitions]))
            loss = -float(np.mean(ppo_surrogate(ratio, adv, self.cfg.ppo_clip))) - coef * float(np.mean(ent))
            weight = ppo_surrogate_grad(ratio, adv, self.cfg.ppo_clip) * ratio
        else:
            loss = pg_actor_loss(logp, adv, ent, coef)
            weight = adv
        upstream = (-weight[:, None] * dlogp - coef * entropy_grad_logits(probs)) / n
        return loss, float(np.mean(ent)), backward(pol.actor, obs, upstream)

    def critic_loss_and_grads(self, policy_id, transitions):
        pol = self.policies[policy_id]
        n = len(transitions)
        grouped = {}
        for t in transitions:
            grouped.setdefault(t.agent_id, []).append(t)
        x = np.concatenate([self.critic_inputs(a, ts) for a, ts in grouped.items()])
        order = [t for ts in grouped.values() for t in ts]
        returns = np.array([t.return_ for t in order], dtype=float)
        out = forward(pol.critic, x)
        if self.is_coma:
            rows = np.arange(n)
            acts = np.array([t.action for t in order])
            values = out[rows, acts]
            upstream = np.zeros_like(out)
            upstream[rows, acts] = 2.0 * (values - returns) / n
        else:
            values = out[:, 0]
            upstream = (2.0 * (values - returns) / n)[:, None]
        return centralized_critic_loss(values, returns), backward(pol.critic, x, upstream)

    def mixed_critic_loss_and_grads(self, buffers):
        """Team value loss through the mixer: (loss, {policy_id: grads}, mixer grads)."""
        agents, cols = team_rows(buffers, self.spec)
        first = cols[0]
        n = len(first)
        peer = np.stack([t.peer_values for t in first])
        state = np.stack([t.shared_obs for t in first]) if self.mixer.needs_state else None
        returns = np.array([t.return_ for t in first], dtype=float)
        v_tot = self.mixer.forward(peer, state)
        dv, mixer_grads = self.mixer.backward(peer, state, 2.0 * (v_tot - returns) / n)
        grads = {}
        for i, (agent, col) in enumerate(zip(agents, cols)):
            pol = self.policy_of(agent)
            g = backward(pol.critic, np.stack([t.obs for t in col]), dv[:, i:i + 1])
            grads[pol.policy_id] = add_grads(grads.get(pol.policy_id), g)
        return centralized_critic_loss(v_tot, returns), grads, mixer_grads

    # -- training ----------------------------------------------------------------
    def train_iteration(self, episodes, env_steps):
        c = self.cfg
        processed = self.process(episodes)
        batch = build_sample_batch(processed, self.policy_map)
        advantages = {}
        for pid, ts in batch.groups.items():
            adv = np.array([t.advantage for t in ts], dtype=float)
            if self.is_ppo and c.normalize_advantages and len(adv) > 1:
                adv = (adv - adv.mean()) / (adv.std() + 1e-8)
            advantages[pid] = adv
        epochs = c.epochs if self.is_ppo else 1
        actor_losses, critic_losses, ents = [], [], []
        for _ in range(epochs):
            for pid, ts in batch.groups.items():
                if not ts:
                    continue
                pol = self.policies[pid]
                loss, ent, grads = self.actor_loss_and_grads(pid, ts, advantages[pid])
                actor_losses.append(loss)
                ents.append(ent)
                apply_grads(pol.actor, grads, pol.actor_opt, c.max_grad_norm)
                if self.category != "value_decomposition":
                    closs, cgrads = self.critic_loss_and_grads(pid, ts)
                    critic_losses.append(closs)
                    apply_grads(pol.critic, cgrads, pol.critic_opt, c.max_grad_norm)
            if self.category == "value_decomposition":
                closs, cgrads, mgrads = self.mixed_critic_loss_and_grads(processed)
                critic_losses.append(closs)
                for pid, g in cgrads.items():
                    pol = self.policies[pid]
                    apply_grads(pol.critic, g, pol.critic_opt, c.max_grad_norm)
                if mgrads is not None:
                    apply_grads(self.mixer.net, mgrads, self.mixer_opt, c.max_grad_norm)
        return {"actor_loss": float(np.mean(actor_losses)), "critic_loss": float(np.mean(critic_losses)),
                "entropy": float(np.mean(ents))}


def _episode_bounds(buf):
    start = 0
    for end in buf.episode_ends:
        if end > start:
            yield start, end
        start = end
