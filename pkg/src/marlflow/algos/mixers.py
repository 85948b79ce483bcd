"""Value mixers for value decomposition.

``SumMixer`` adds per-agent values. ``MonotonicMixer`` feeds them through a
one-hidden-layer network whose weights come from a hypernetwork on the
state::

    Q_tot = |w2(s)| . tanh(|W1(s)| q + b1(s)) + b2(s)

The absolute values make every partial derivative dQ_tot/dq_i non-negative
for any parameters.
"""
from __future__ import annotations

import numpy as np

from ..approx import Mlp, backward, forward, init_params
from ..errors import ModeError, ShapeError


class SumMixer:
    kind = "sum"
    net = None
    needs_state = False

    def __init__(self, n_agents: int):
        self.n_agents = n_agents

    def forward(self, q, state=None) -> np.ndarray:
        return np.asarray(q, dtype=float).sum(axis=-1)

    def backward(self, q, state, upstream):
        q = np.asarray(q, dtype=float)
        dq = np.broadcast_to(np.asarray(upstream, dtype=float)[..., None], q.shape).copy()
        return dq, None

    def copy(self):
        return SumMixer(self.n_agents)

    def load_from(self, other):
        pass


class MonotonicMixer:
    kind = "monotonic"
    needs_state = True

    def __init__(self, n_agents: int, state_dim: int, embed: int = 32, hyper_hidden=(64, 64),
                 seed=None, net: Mlp | None = None):
        self.n_agents = n_agents
        self.state_dim = state_dim
        self.embed = embed
        n_out = n_agents * embed + embed + embed + 1
        self.net = net if net is not None else init_params([state_dim, *hyper_hidden, n_out], seed)
        if self.net.d_in != state_dim or self.net.d_out != n_out:
            raise ShapeError("hypernetwork sizes do not match the mixer layout")

    def _split(self, h):
        n, m = self.n_agents, self.embed
        w1 = h[:, : n * m].reshape(-1, m, n)
        b1 = h[:, n * m: n * m + m]
        w2 = h[:, n * m + m: n * m + 2 * m]
        b2 = h[:, -1]
        return w1, b1, w2, b2

    def _prep(self, q, state):
        q = np.asarray(q, dtype=float)
        state = np.asarray(state, dtype=float)
        single = q.ndim == 1
        if single:
            q, state = q[None], state[None]
        if q.shape[1] != self.n_agents or state.shape != (q.shape[0], self.state_dim):
            raise ShapeError(f"mixer got q {q.shape} and state {state.shape}")
        return q, state, single

    def forward(self, q, state) -> np.ndarray:
        q, state, single = self._prep(q, state)
        w1, b1, w2, b2 = self._split(forward(self.net, state))
        hidden = np.tanh(np.einsum("bmn,bn->bm", np.abs(w1), q) + b1)
        out = (np.abs(w2) * hidden).sum(-1) + b2
        return out[0] if single else out

    def backward(self, q, state, upstream):
        """Gradients of ``sum(upstream * forward(q, state))``: (dq, hypernet GradientSet)."""
        q, state, single = self._prep(q, state)
        g = np.atleast_1d(np.asarray(upstream, dtype=float))
        h = forward(self.net, state)
        w1, b1, w2, b2 = self._split(h)
        hidden = np.tanh(np.einsum("bmn,bn->bm", np.abs(w1), q) + b1)
        dz = g[:, None] * np.abs(w2) * (1.0 - hidden ** 2)  # (B, m)
        dq = np.einsum("bm,bmn->bn", dz, np.abs(w1))
        dw1 = dz[:, :, None] * q[:, None, :] * np.sign(w1)
        dw2 = g[:, None] * hidden * np.sign(w2)
        dh = np.concatenate([dw1.reshape(len(q), -1), dz, dw2, g[:, None]], axis=1)
        grads = backward(self.net, state, dh)
        return (dq[0] if single else dq), grads

    def copy(self):
        return MonotonicMixer(self.n_agents, self.state_dim, self.embed, net=self.net.copy())

    def load_from(self, other):
        self.net.load_from(other.net)


def make_mixer(kind: str, n_agents: int, state_dim: int, embed: int = 32, hyper_hidden=(64, 64), seed=None):
    if kind == "sum":
        return SumMixer(n_agents)
    if kind == "monotonic":
        return MonotonicMixer(n_agents, state_dim, embed, hyper_hidden, seed)
    raise ValueError(f"unknown mixer kind {kind!r}")


def qmix_mix(per_agent_q_chosen, state, mixer: MonotonicMixer) -> float:
    return float(mixer.forward(per_agent_q_chosen, state))


def vda2c_mixed_value(per_agent_v, state, mixer, task_mode: str = "cooperative") -> float:
    if task_mode != "cooperative":
        raise ModeError(f"mixed state values need a cooperative task, got {task_mode!r}")
    return float(mixer.forward(per_agent_v, state))

