"""Small function approximators with hand-written gradients.

``Mlp`` is a fully connected net with tanh hidden layers and a linear output
layer. All functions accept a single input vector or a batch (rows); batched
gradients are summed over rows. ``Tabular`` stores one value vector per
discretized observation.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError, ShapeError

CHECKPOINT_VERSION = 1


@dataclass
class Mlp:
    sizes: list[int]
    weights: list[np.ndarray]  # weights[i] has shape (sizes[i], sizes[i+1])
    biases: list[np.ndarray]

    @property
    def d_in(self):
        return self.sizes[0]

    @property
    def d_out(self):
        return self.sizes[-1]

    def named_params(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"W{i}", w
            yield f"b{i}", b

    def copy(self) -> "Mlp":
        return Mlp(list(self.sizes), [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def load_from(self, other: "Mlp") -> None:
        """Hard copy of another net's parameters (target refresh)."""
        for dst, src in zip(self.weights + self.biases, other.weights + other.biases):
            dst[...] = src

    def checksum(self) -> float:
        return float(sum(np.sum(p) + np.sum(p * p) for _, p in self.named_params()))


@dataclass
class GradientSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x: np.ndarray | None = None

    def named(self):
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"W{i}", w
            yield f"b{i}", b

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet([a + b for a, b in zip(self.weights, other.weights)],
                           [a + b for a, b in zip(self.biases, other.biases)])

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g * g) for _, g in self.named())))

    def scaled(self, k: float) -> "GradientSet":
        return GradientSet([w * k for w in self.weights], [b * k for b in self.biases],
                           None if self.x is None else self.x * k)


def init_params(sizes, seed=None, zero: bool = False, out_scale: float = 1.0) -> Mlp:
    """Glorot-uniform weights, zero biases. ``seed`` may be an int or a Generator.

    ``out_scale`` multiplies the last layer's weights; a small value starts a
    policy head near uniform.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ConfigurationError(f"layer sizes must be >= 2 positive integers, got {sizes}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        weights.append(np.zeros_like(w) if zero else w)
        biases.append(np.zeros(fan_out))
    weights[-1] = weights[-1] * out_scale
    return Mlp(sizes, weights, biases)


def _as_batch(net: Mlp, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.d_in:
        raise ShapeError(f"input has shape {np.shape(x)}, net expects last dim {net.d_in}")
    return x, single


def _activations(net: Mlp, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    last = len(net.weights) - 1
    h = x
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    return acts


def forward(net: Mlp, x) -> np.ndarray:
    x, single = _as_batch(net, x)
    out = _activations(net, x)[-1]
    return out[0] if single else out


def backward(net: Mlp, x, upstream) -> GradientSet:
    """Gradient of ``sum(upstream * forward(x))`` w.r.t. every parameter and the input."""
    x, single = _as_batch(net, x)
    g = np.asarray(upstream, dtype=float)
    if single:
        g = g[None, :]
    if g.shape != (x.shape[0], net.d_out):
        raise ShapeError(f"upstream has shape {np.shape(upstream)}, expected ({x.shape[0]}, {net.d_out})")
    acts = _activations(net, x)
    n = len(net.weights)
    gw, gb = [None] * n, [None] * n
    for i in reversed(range(n)):
        if i < n - 1:
            g = g * (1.0 - acts[i + 1] ** 2)
        gw[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        g = g @ net.weights[i].T
    return GradientSet(gw, gb, g[0] if single else g)


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigurationError(f"optimizer: unknown kind {self.kind!r}")
        if not self.lr > 0:
            raise ConfigurationError(f"optimizer: step size must be positive, got {self.lr}")


def apply_update(net: Mlp, grads: GradientSet, opt: OptimizerState):
    """One optimizer step in place; returns ``(net, opt)``."""
    params = [p for _, p in net.named_params()]
    named = list(grads.named())
    if len(named) != len(params):
        raise ShapeError("gradient set does not match the network's parameter list")
    for (name, g), p in zip(named, params):
        if g.shape != p.shape:
            raise ShapeError(f"gradient {name} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in tensor {name}")
    if opt.kind == "sgd":
        for (_, g), p in zip(named, params):
            p -= opt.lr * g
        return net, opt
    if not opt.m:
        opt.m = [np.zeros_like(p) for p in params]
        opt.v = [np.zeros_like(p) for p in params]
    opt.t += 1
    c1 = 1.0 - opt.beta1 ** opt.t
    c2 = 1.0 - opt.beta2 ** opt.t
    for (_, g), p, m, v in zip(named, params, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return net, opt


def clip_by_norm(grads: GradientSet, max_norm: float | None) -> GradientSet:
    if not max_norm:
        return grads
    norm = grads.norm()
    if norm > max_norm:
        return grads.scaled(max_norm / norm)
    return grads


# ---------------------------------------------------------------------------
# tabular


class Tabular:
    """Lookup-table approximator keyed by rounded observations.

    Unseen keys read as zeros. Gradients are dicts key -> vector and only
    plain SGD applies to them.
    """

    def __init__(self, n_out: int, decimals: int = 6):
        self.n_out = n_out
        self.decimals = decimals
        self.table: dict[tuple, np.ndarray] = {}

    def key(self, x) -> tuple:
        return tuple(np.round(np.asarray(x, dtype=float), self.decimals).tolist())

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.table.get(self.key(x), np.zeros(self.n_out)).copy()
        return np.stack([self.forward(row) for row in x])

    def backward(self, x, upstream) -> dict:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        upstream = np.atleast_2d(np.asarray(upstream, dtype=float))
        grads: dict[tuple, np.ndarray] = {}
        for row, g in zip(x, upstream):
            k = self.key(row)
            grads[k] = grads.get(k, 0.0) + g
        return grads

    def apply_update(self, grads: dict, lr: float) -> None:
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for table entry {k}")
            self.table[k] = self.table.get(k, np.zeros(self.n_out)) - lr * g

    def copy(self) -> "Tabular":
        return copy.deepcopy(self)

    def load_from(self, other: "Tabular") -> None:
        self.table = {k: v.copy() for k, v in other.table.items()}

    def checksum(self) -> float:
        return float(sum(np.sum(v) + np.sum(v * v) for v in self.table.values()))


# ---------------------------------------------------------------------------
# serialization


def net_to_arrays(prefix: str, net: Mlp, opt: OptimizerState | None = None) -> dict[str, np.ndarray]:
    out = {f"{prefix}/sizes": np.asarray(net.sizes, dtype=np.int64)}
    for name, p in net.named_params():
        out[f"{prefix}/{name}"] = p
    if opt is not None:
        out[f"{prefix}/opt"] = np.array([opt.lr, opt.beta1, opt.beta2, opt.eps, opt.t], dtype=float)
        out[f"{prefix}/opt_kind"] = np.array(opt.kind)
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            out[f"{prefix}/opt_m{i}"] = m
            out[f"{prefix}/opt_v{i}"] = v
    return out


def net_from_arrays(prefix: str, arrays) -> tuple[Mlp, OptimizerState | None]:
    sizes = [int(s) for s in arrays[f"{prefix}/sizes"]]
    n = len(sizes) - 1
    net = Mlp(sizes, [np.array(arrays[f"{prefix}/W{i}"]) for i in range(n)],
              [np.array(arrays[f"{prefix}/b{i}"]) for i in range(n)])
    opt = None
    if f"{prefix}/opt" in arrays:
        lr, b1, b2, eps, t = arrays[f"{prefix}/opt"]
        opt = OptimizerState(str(arrays[f"{prefix}/opt_kind"]), float(lr), float(b1), float(b2), float(eps), int(t))
        i = 0
        while f"{prefix}/opt_m{i}" in arrays:
            opt.m.append(np.array(arrays[f"{prefix}/opt_m{i}"]))
            opt.v.append(np.array(arrays[f"{prefix}/opt_v{i}"]))
            i += 1
    return net, opt
