"""Small fully-connected networks with hand-written backprop, plus Adam.

No autodiff framework: forward passes return the activation cache the
matching backward pass consumes. Everything operates on float64 batches.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError


def positional_encode(x, num_freq: int):
    """Frequency-encode rows: concat(x, sin(2^k pi x), cos(2^k pi x)), k < num_freq."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if num_freq == 0:
        return x
    freqs = (2.0 ** np.arange(num_freq)) * np.pi  # (F,)
    ang = x[:, None, :] * freqs[None, :, None]  # (B, F, d)
    parts = np.concatenate([np.sin(ang), np.cos(ang)], axis=2)  # (B, F, 2d)
    return np.concatenate([x, parts.reshape(x.shape[0], -1)], axis=1)


def encoded_width(dim: int, num_freq: int) -> int:
    return dim + 2 * num_freq * dim


@dataclass
class Mlp:
    """ReLU MLP, identity output layer. weights[i] has shape (out, in)."""

    layer_widths: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @property
    def in_width(self) -> int:
        return self.layer_widths[0]

    @property
    def out_width(self) -> int:
        return self.layer_widths[-1]

    def parameters(self) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "Mlp":
        return Mlp(
            list(self.layer_widths),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def is_zero_output(self) -> bool:
        return not (np.any(self.weights[-1]) or np.any(self.biases[-1]))


def mlp_init(layer_widths: Sequence[int], rng: np.random.Generator,
             zero_final: bool = False, dtype=np.float32) -> Mlp:
    """He-initialized MLP; zero_final zeroes the output layer so the net
    starts as the constant-zero function."""
    widths = list(layer_widths)
    if len(widths) < 2:
        raise ConfigurationError("an MLP needs at least input and output widths")
    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        if last and zero_final:
            w = np.zeros((n_out, n_in))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in))
        weights.append(w.astype(dtype))
        biases.append(np.zeros(n_out, dtype=dtype))
    return Mlp(widths, weights, biases)


def mlp_forward(net: Mlp, x) -> Tuple[np.ndarray, list]:
    """Run the net on a (B, in) batch; returns (output, cache for backward).

    Arithmetic runs in the weights' dtype (float32 nets train fast, float64
    nets gradient-check cleanly).
    """
    dt = net.weights[0].dtype
    x = np.atleast_2d(np.asarray(x, dtype=dt))
    if x.shape[1] != net.in_width:
        raise ConfigurationError(
            f"input width {x.shape[1]} does not match net input {net.in_width}"
        )
    cache = [x]
    h = x
    n_layers = len(net.weights)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
        cache.append(h)
    return h, cache


def mlp_backward(net: Mlp, cache: list, grad_out) -> Tuple[List[np.ndarray], np.ndarray]:
    """Backprop through a cached forward pass.

    Returns (param_grads interleaved as [dW0, db0, dW1, ...], grad_input).
    ReLU subgradient at exactly 0 is taken as 0.
    """
    dt = net.weights[0].dtype
    g = np.atleast_2d(np.asarray(grad_out, dtype=dt))
    n_layers = len(net.weights)
    grads: List[Optional[np.ndarray]] = [None] * (2 * n_layers)
    for i in range(n_layers - 1, -1, -1):
        pre = cache[i]  # input to layer i (post-activation of previous)
        if i < n_layers - 1:
            g = g * (cache[i + 1] > 0.0)
        grads[2 * i] = g.T @ pre
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i]
    return grads, g


@dataclass
class AdamState:
    """First/second-moment accumulators mirroring a parameter list."""

    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(params: Sequence[np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return AdamState(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            beta1=beta1, beta2=beta2, eps=eps,
        )

    def select(self, keep: np.ndarray) -> None:
        """Row-subset every accumulator (used when Gaussians are pruned)."""
        self.m = [a[keep] for a in self.m]
        self.v = [a[keep] for a in self.v]

    def append_zeros(self, counts: int) -> None:
        """Extend accumulators with zero rows for newly added Gaussians."""
        self.m = [np.concatenate([a, np.zeros((counts,) + a.shape[1:], a.dtype)]) for a in self.m]
        self.v = [np.concatenate([a, np.zeros((counts,) + a.shape[1:], a.dtype)]) for a in self.v]


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState, lr) -> None:
    """One bias-corrected Adam update, in place, preserving param dtypes.

    lr may be a scalar or a per-parameter sequence.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    lrs = lr if isinstance(lr, (list, tuple)) else [lr] * len(params)
    for p, g, m, v, a in zip(params, grads, state.m, state.v, lrs):
        if g is None:
            continue
        g = np.asarray(g, dtype=p.dtype)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        mhat = m / c1
        vhat = v / c2
        p -= (a * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype)


def lr_exponential(step: int, total_steps: int, lr_start: float, lr_end: float) -> float:
    """Geometric interpolation from lr_start at step 0 to lr_end at total_steps."""
    if total_steps <= 0:
        return lr_end
    frac = min(max(step / total_steps, 0.0), 1.0)
    return lr_start * (lr_end / lr_start) ** frac
