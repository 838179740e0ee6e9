"""Feedforward classifier over a flat weight vector, loss, and optimizer.

The network's parameters live in one flat float64 vector (layer-major:
weight matrix row-major, then bias, per layer).  Keeping everything flat
lets the compression pipeline partition weights into blocks without caring
about layer boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class ModelSpec:
    """MLP architecture: layer_sizes = (input, hidden..., classes)."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        if len(self.layer_sizes) < 2 or any(s < 1 for s in self.layer_sizes):
            raise ValueError("layer_sizes needs at least (input, output) with positive sizes")
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))

    @property
    def layers(self) -> list[tuple[int, int]]:
        return list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def total_params(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layers)

    def segments(self) -> list[tuple[str, int, int, tuple[int, ...]]]:
        """(name, start, length, shape) for every weight/bias segment."""
        out = []
        offset = 0
        for i, (fan_in, fan_out) in enumerate(self.layers):
            out.append((f"w{i}", offset, fan_in * fan_out, (fan_in, fan_out)))
            offset += fan_in * fan_out
            out.append((f"b{i}", offset, fan_out, (fan_out,)))
            offset += fan_out
        return out

    def layer_of_param(self) -> np.ndarray:
        """Layer index owning each flat coordinate."""
        out = np.empty(self.total_params, dtype=np.int64)
        for name, start, length, _ in self.segments():
            out[start : start + length] = int(name[1:])
        return out

    def weight_matrix_mask(self) -> np.ndarray:
        """True for weight-matrix coordinates, False for biases."""
        mask = np.zeros(self.total_params, dtype=bool)
        for name, start, length, _ in self.segments():
            if name.startswith("w"):
                mask[start : start + length] = True
        return mask


def init_flat_weights(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per layer, biases included."""
    flat = np.empty(spec.total_params)
    for name, start, length, shape in spec.segments():
        fan_in = spec.layers[int(name[1:])][0]
        bound = 1.0 / np.sqrt(fan_in)
        flat[start : start + length] = rng.uniform(-bound, bound, size=length)
    return flat


def mlp_apply(spec: ModelSpec, flat_weights: Tensor, x: np.ndarray) -> Tensor:
    """Logits for a batch; affine layers with ReLU in between."""
    h: Tensor | np.ndarray = np.asarray(x, dtype=np.float64)
    segs = spec.segments()
    n_layers = len(spec.layers)
    for i in range(n_layers):
        _, w_start, w_len, w_shape = segs[2 * i]
        _, b_start, b_len, _ = segs[2 * i + 1]
        w = ad.reshape(flat_weights[w_start : w_start + w_len], w_shape)
        b = flat_weights[b_start : b_start + b_len]
        h = ad.matmul(ad._ensure(h), w) + b
        if i < n_layers - 1:
            h = ad.relu(h)
    return h


def mlp_logits(spec: ModelSpec, flat_weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Plain-numpy forward pass for evaluation (no tape)."""
    h = np.asarray(x, dtype=np.float64)
    segs = spec.segments()
    n_layers = len(spec.layers)
    for i in range(n_layers):
        _, w_start, w_len, w_shape = segs[2 * i]
        _, b_start, b_len, _ = segs[2 * i + 1]
        w = flat_weights[w_start : w_start + w_len].reshape(w_shape)
        b = flat_weights[b_start : b_start + b_len]
        h = h @ w + b
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
    return h


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], via log-sum-exp."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise ValueError("labels must be 1-d with one entry per row of logits")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    # Subtracting the rowwise max is gradient-neutral (softmax shift
    # invariance), so the max is detached.
    row_max = logits.data.max(axis=1, keepdims=True)
    shifted = logits - row_max
    lse = ad.log(ad.tsum(ad.exp(shifted), axis=1))
    picked = ad.pick(shifted, labels)
    return ad.tmean(lse - picked)


def reparam_sample(mu: Tensor, sigma: Tensor, noise: np.ndarray) -> Tensor:
    """w = mu + sigma * eps with fixed noise; differentiable in mu and sigma."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != mu.data.shape or noise.shape != sigma.data.shape:
        raise ValueError("noise shape must match mu and sigma")
    return mu + sigma * noise


class Adam:
    """Bias-corrected Adam over a list of leaf tensors."""

    def __init__(self, params: list[Tensor], lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, update_masks: list[np.ndarray | None] | None = None):
        """One update; a False entry in a mask freezes that coordinate."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            update = self.lr * (self.m[i] / bc1) / (np.sqrt(self.v[i] / bc2) + self.eps)
            if update_masks is not None and update_masks[i] is not None:
                update = update * update_masks[i]
            p.data = p.data - update
