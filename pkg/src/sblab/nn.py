"""Dense networks with hand-written reverse-mode gradients and Adam.

The networks here map ``(k, x)`` to ``R^d``: the integer step ``k`` is turned
into sinusoidal features of ``k / N`` and concatenated to ``x`` before the
first layer.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericError

ACTIVATIONS = {"silu": 0, "tanh": 1, "relu": 2, "identity": 3}
ACTIVATION_NAMES = {v: k for k, v in ACTIVATIONS.items()}


def timestep_embed(k, n_steps: int, embed_dim: int) -> np.ndarray:
    """Sinusoidal features ``[sin(w_i k/N)..., cos(w_i k/N)...]``.

    ``k`` may be a scalar or an integer array; the result has shape
    ``(embed_dim,)`` or ``(len(k), embed_dim)`` respectively. The
    ``embed_dim // 2`` frequencies are geometrically spaced in [1, 1000].
    """
    if embed_dim <= 0 or embed_dim % 2:
        raise InvalidArgument("embed_dim must be a positive even integer")
    if n_steps <= 0:
        raise InvalidArgument("N must be positive")
    k_arr = np.asarray(k, dtype=np.float64)
    if np.any(k_arr < 0) or np.any(k_arr > n_steps):
        raise InvalidArgument(f"step index outside [0, {n_steps}]")
    freqs = np.geomspace(1.0, 1000.0, embed_dim // 2)
    phase = (k_arr / n_steps)[..., None] * freqs
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)


def _act(name, z):
    if name == "silu":
        return z / (1.0 + np.exp(-z))
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0)
    return z


def _act_grad(name, z):
    if name == "silu":
        s = 1.0 / (1.0 + np.exp(-z))
        return s * (1.0 + z * (1.0 - s))
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if name == "relu":
        return (z > 0).astype(z.dtype)
    return np.ones_like(z)


@dataclass
class Mlp:
    """Fully connected network ``R^(d + embed_dim) -> R^d``.

    ``weights[i]`` has shape ``(layer_dims[i], layer_dims[i+1])`` and is
    applied as ``h @ W + b``.  ``n_steps`` is the N used to normalise the step
    index fed to the embedding.
    """

    layer_dims: list
    weights: list
    biases: list
    n_steps: int
    embed_dim: int = 16
    activation: str = "silu"

    def __post_init__(self):
        dims = [int(v) for v in self.layer_dims]
        if len(dims) < 2 or any(v <= 0 for v in dims):
            raise InvalidArgument("layer_dims needs >= 2 positive entries")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise InvalidArgument("one weight matrix and bias per layer required")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise InvalidArgument(f"layer {i} has inconsistent shapes")
        if dims[0] != dims[-1] + self.embed_dim:
            raise InvalidArgument("input dim must equal data dim + embed_dim")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"unknown activation {self.activation!r}")
        self.layer_dims = dims

    @property
    def data_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def params(self) -> list:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "Mlp":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "Mlp":
        return Mlp(
            self.layer_dims,
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
            self.n_steps,
            self.embed_dim,
            self.activation,
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params)

    def __call__(self, k, x):
        return mlp_forward(self, k, x)


def init_mlp(
    data_dim: int,
    n_steps: int,
    rng: np.random.Generator,
    hidden: int = 128,
    n_layers: int = 10,
    embed_dim: int = 16,
    activation: str = "silu",
    dtype=np.float32,
) -> Mlp:
    """Uniform(+-1/sqrt(fan_in)) weights and biases."""
    if n_layers < 1:
        raise InvalidArgument("need at least one layer")
    dims = [data_dim + embed_dim] + [hidden] * (n_layers - 1) + [data_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype))
        biases.append(rng.uniform(-bound, bound, fan_out).astype(dtype))
    return Mlp(dims, weights, biases, n_steps, embed_dim, activation)


def zero_mlp(like: Mlp) -> Mlp:
    return Mlp(
        like.layer_dims,
        [np.zeros_like(w) for w in like.weights],
        [np.zeros_like(b) for b in like.biases],
        like.n_steps,
        like.embed_dim,
        like.activation,
    )


def _net_input(net: Mlp, k, x):
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != net.data_dim:
        raise InvalidArgument(f"expected x of shape (batch, {net.data_dim}), got {x.shape}")
    k_arr = np.asarray(k)
    if k_arr.ndim == 0:
        emb = np.broadcast_to(timestep_embed(k_arr, net.n_steps, net.embed_dim), (x.shape[0], net.embed_dim))
    else:
        if k_arr.shape != (x.shape[0],):
            raise InvalidArgument("per-row step indices must have shape (batch,)")
        emb = timestep_embed(k_arr, net.n_steps, net.embed_dim)
    return np.concatenate([x.astype(net.dtype, copy=False), emb.astype(net.dtype)], axis=1)


def _forward(net: Mlp, h):
    # returns the output plus, per layer, its input and pre-activation
    inputs, pre = [], []
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w + b
        if i < last:
            pre.append(z)
            h = _act(net.activation, z)
        else:
            h = z
    return h, inputs, pre


def mlp_forward(net: Mlp, k, x) -> np.ndarray:
    """``net(concat(x, timestep_embed(k)))`` for a batch ``x`` of shape (B, d)."""
    out, _, _ = _forward(net, _net_input(net, k, x))
    return out


def mse_grad(net: Mlp, k, x, target, weights=None):
    """Loss and exact gradients of ``mean_{i,j} w_i (net(k_i, x_i)_j - t_ij)^2``.

    Returns ``(loss, grads)`` where ``grads`` follows ``net.params`` order.
    ``weights`` is an optional per-row factor (defaults to 1).
    """
    x = np.asarray(x)
    target = np.asarray(target)
    if x.shape[0] == 0:
        raise InvalidArgument("empty batch")
    if target.shape != x.shape:
        raise InvalidArgument("target shape must match input shape")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(target))):
        raise NumericError("non-finite values in inputs or targets")
    h0 = _net_input(net, k, x)
    out, inputs, pre = _forward(net, h0)
    resid = out - target.astype(net.dtype, copy=False)
    n = resid.size
    if weights is None:
        loss = float(np.sum(np.square(resid, dtype=np.float64)) / n)
        g = (2.0 / n) * resid
    else:
        w = np.asarray(weights, dtype=np.float64)
        loss = float(np.sum(w[:, None] * np.square(resid, dtype=np.float64)) / n)
        g = ((2.0 / n) * w[:, None]).astype(net.dtype) * resid
    g = g.astype(net.dtype, copy=False)

    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        grads_w[i] = inputs[i].T @ g
        grads_b[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ net.weights[i].T) * _act_grad(net.activation, pre[i - 1])
    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads += [gw, gb]
    return loss, grads


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, beta1=0.9, beta2=0.99, eps=1e-8) -> "AdamState":
        return cls(
            [np.zeros_like(p) for p in params],
            [np.zeros_like(p) for p in params],
            0,
            beta1,
            beta2,
            eps,
        )


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update, applied in place; no weight decay.

    A non-finite gradient raises :class:`NumericError` before anything is
    modified.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidArgument("params, grads and optimizer state disagree in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise InvalidArgument("gradient shape mismatch")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    return params, state


def ema_update(ema: Mlp, net: Mlp, decay: float = 0.999) -> Mlp:
    for pe, p in zip(ema.params, net.params):
        pe *= decay
        pe += (1.0 - decay) * p
    return ema
