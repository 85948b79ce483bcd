"""Per-sample building blocks shared by the learners."""
from __future__ import annotations

import numpy as np

from ..errors import ProtocolViolation


def _legal(mask, n):
    if mask is None:
        return np.ones(n, dtype=bool)
    legal = np.asarray(mask).astype(bool)
    if not legal.any():
        raise ProtocolViolation("action mask has no legal action")
    return legal


def masked_argmax(q, mask=None) -> int:
    """Argmax over legal entries, lowest index on ties."""
    q = np.asarray(q, dtype=float)
    legal = _legal(mask, q.shape[-1])
    return int(np.argmax(np.where(legal, q, -np.inf)))


def masked_softmax(logits, mask=None) -> np.ndarray:
    """Softmax restricted to legal entries; works on a vector or on rows."""
    logits = np.asarray(logits, dtype=float)
    if mask is None:
        legal = np.ones(logits.shape, dtype=bool)
    else:
        legal = np.broadcast_to(np.asarray(mask).astype(bool), logits.shape)
        if not np.all(legal.any(axis=-1)):
            raise ProtocolViolation("action mask has no legal action")
    z = np.where(legal, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(legal, np.exp(z), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def masked_log_softmax(logits, mask=None) -> np.ndarray:
    """Log-probabilities; illegal entries are -inf."""
    logits = np.asarray(logits, dtype=float)
    legal = np.ones(logits.shape, dtype=bool) if mask is None else np.broadcast_to(
        np.asarray(mask).astype(bool), logits.shape)
    z = np.where(legal, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.where(legal, np.exp(z), 0.0).sum(axis=-1, keepdims=True))
    return z - lse


def entropy(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def entropy_grad_logits(probs) -> np.ndarray:
    """d entropy / d logits for a (masked) softmax; zero on illegal entries."""
    p = np.asarray(probs, dtype=float)
    logp = np.log(np.where(p > 0, p, 1.0))
    h = entropy(p)[..., None]
    return -p * (logp + h)


def q_target(reward, done, gamma, next_q_legal_max):
    done = np.asarray(done, dtype=float)
    return reward + (1.0 - done) * gamma * next_q_legal_max


def epsilon_greedy(q, mask, eps: float, rng: np.random.Generator) -> int:
    q = np.asarray(q, dtype=float)
    legal = _legal(mask, q.shape[-1])
    if eps > 0 and rng.random() < eps:
        return int(rng.choice(np.flatnonzero(legal)))
    return masked_argmax(q, legal)


def vdn_mix(per_agent_q_chosen) -> float:
    return float(np.sum(per_agent_q_chosen))


def pg_actor_loss(logp_chosen, advantages, entropies, entropy_coef: float) -> float:
    logp_chosen = np.asarray(logp_chosen, dtype=float)
    return float(np.mean(-logp_chosen * np.asarray(advantages, dtype=float))
                 - entropy_coef * np.mean(entropies))


def ppo_surrogate(ratio, advantage, eps: float):
    """Clipped surrogate objective (to be maximized); elementwise."""
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    out = np.minimum(ratio * advantage, np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage)
    return float(out) if out.ndim == 0 else out


def ppo_surrogate_grad(ratio, advantage, eps: float):
    """d surrogate / d ratio: the advantage where the unclipped term is the min, else 0."""
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    unclipped = ratio * advantage <= np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage
    return np.where(unclipped, advantage, 0.0)


def coma_advantage(q_all_actions, policy_probs, chosen: int) -> float:
    q = np.asarray(q_all_actions, dtype=float)
    return float(q[chosen] - np.dot(policy_probs, q))


def centralized_critic_loss(values, returns) -> float:
    d = np.asarray(values, dtype=float) - np.asarray(returns, dtype=float)
    return float(np.mean(d * d))


def one_hot(indices, n: int) -> np.ndarray:
    """One-hot rows; negative indices give an all-zero row."""
    idx = np.asarray(indices, dtype=np.int64)
    out = np.zeros(idx.shape + (n,))
    valid = idx >= 0
    np.put_along_axis(out, np.where(valid, idx, 0)[..., None], valid[..., None].astype(float), axis=-1)
    return out
