"""Dense-math substrate: MLPs with hand-derived gradients, Adam, clipping.

Everything runs in float64. There is no autodiff graph; the only trainable
architecture in this project is the fixed tanh MLP below, and its backward
pass is written out by hand and cross-checked against central finite
differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


@dataclass
class MlpParams:
    """Fully-connected net: tanh on hidden layers, identity on the output.

    layers[i] = (W, b) with W of shape (n_in, n_out); x maps to x @ W + b.
    """

    layers: list[tuple[Array, Array]]

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0][0].shape[0]] + [w.shape[1] for w, _ in self.layers]

    def flat(self) -> list[Array]:
        """Parameter arrays in declaration order: W0, b0, W1, b1, ..."""
        out: list[Array] = []
        for w, b in self.layers:
            out.append(w)
            out.append(b)
        return out

    def n_params(self) -> int:
        return sum(a.size for a in self.flat())

    def copy(self) -> "MlpParams":
        return MlpParams([(w.copy(), b.copy()) for w, b in self.layers])

    @staticmethod
    def from_flat(arrays: Sequence[Array]) -> "MlpParams":
        if len(arrays) % 2 != 0:
            raise ValueError("flat parameter list must pair weights and biases")
        return MlpParams([(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)])


def init_mlp(sizes: Sequence[int], rng: np.random.Generator) -> MlpParams:
    """Seeded init: W ~ N(0, 1/n_in), zero biases."""
    layers = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)
        layers.append((w, np.zeros(n_out)))
    return MlpParams(layers)


def mlp_forward(params: MlpParams, x: Array) -> Array:
    """Forward pass; accepts a single input vector or a (batch, n_in) matrix."""
    x = np.asarray(x, dtype=np.float64)
    n_in = params.layers[0][0].shape[0]
    if x.shape[-1] != n_in:
        raise ValueError(f"input width {x.shape[-1]} does not match net input {n_in}")
    a = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        z = a @ w + b
        a = z if i == last else np.tanh(z)
    return a


def mlp_backward(
    params: MlpParams, x: Array, upstream_grad: Array
) -> tuple[list[Array], Array]:
    """Gradients of the scalar loss whose d(loss)/d(output) is upstream_grad.

    Returns (param_grads in flat() order, d(loss)/d(input)). Batched inputs
    sum parameter gradients over the batch.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    n_out = params.layers[-1][0].shape[1]
    if upstream_grad.shape[-1] != n_out or upstream_grad.shape[:-1] != x.shape[:-1]:
        raise ValueError(
            f"upstream grad shape {upstream_grad.shape} does not match forward "
            f"output for input shape {x.shape}"
        )
    squeeze = x.ndim == 1
    a = x.reshape(1, -1) if squeeze else x
    g = upstream_grad.reshape(1, -1) if squeeze else upstream_grad

    acts = [a]
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        z = acts[-1] @ w + b
        acts.append(z if i == last else np.tanh(z))

    grads: list[Array] = [None] * (2 * len(params.layers))  # type: ignore[list-item]
    delta = g
    for i in range(last, -1, -1):
        if i != last:
            delta = delta * (1.0 - acts[i + 1] ** 2)  # tanh'
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ params.layers[i][0].T
    input_grad = delta[0] if squeeze else delta
    return grads, input_grad


@dataclass
class AdamState:
    m: list[Array]
    v: list[Array]
    t: int = 0


def init_adam(params: Sequence[Array]) -> AdamState:
    return AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    params: Sequence[Array],
    grads: Sequence[Array],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[list[Array], AdamState]:
    """One bias-corrected adaptive-moment update; functional (new arrays)."""
    if len(params) != len(grads):
        raise ValueError("params and grads must have equal length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"grad shape {g.shape} does not match param shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient")
    t = state.t + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_params.append(p - step)
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t)


def global_norm(grads: Sequence[Array]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_global_norm(grads: Sequence[Array], max_norm: float) -> list[Array]:
    """Rescale so the joint L2 norm is at most max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return [g.copy() for g in grads]
    scale = max_norm / norm
    return [g * scale for g in grads]


def finite_diff_grad(
    loss_fn: Callable[[list[Array]], float],
    params: Sequence[Array],
    h: float = 1e-6,
) -> list[Array]:
    """Central-difference gradient oracle, one parameter at a time."""
    if h <= 0:
        raise ValueError("h must be positive")
    base = [p.copy() for p in params]
    grads = []
    for k, p in enumerate(base):
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = loss_fn(base)
            flat[j] = orig - h
            down = loss_fn(base)
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads
