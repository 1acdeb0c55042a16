"""Tiny numpy MLPs with hand-rolled reverse-mode gradients and Adam.

The activation controllers are small enough (a few thousand weights) that
an explicit backward pass is simpler and faster than dragging in an autodiff
framework, and it keeps the gradient math testable against finite
differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Mlp:
    """Fully-connected net, tanh hidden layers, linear output."""

    weights: list[np.ndarray]           # per layer, (out, in)
    biases: list[np.ndarray]            # per layer, (out,)
    # fixed input affine (x - loc) / scale applied before the first layer
    input_loc: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    @classmethod
    def create(cls, sizes: tuple[int, ...], rng: np.random.Generator,
               final_scale: float = 0.01) -> "Mlp":
        weights, biases = [], []
        for i in range(len(sizes) - 1):
            fan_in = sizes[i]
            w = rng.standard_normal((sizes[i + 1], sizes[i])) / np.sqrt(fan_in)
            if i == len(sizes) - 2:
                w *= final_scale          # near-uniform initial policy
            weights.append(w)
            biases.append(np.zeros(sizes[i + 1]))
        return cls(weights, biases)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple([self.weights[0].shape[1]] + [w.shape[0] for w in self.weights])

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """x: (batch, in). Returns output (batch, out) and the activation cache."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.input_loc is not None:
            x = (x - self.input_loc) / self.input_scale
        cache = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i != last:
                h = np.tanh(h)
            cache.append(h)
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: list[np.ndarray], dout: np.ndarray
                 ) -> list[tuple[np.ndarray, np.ndarray]]:
        """Accumulate d(loss)/d(params) given d(loss)/d(output)."""
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.weights)
        delta = np.atleast_2d(dout)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            layer_input = cache[i]
            grads[i] = (delta.T @ layer_input, delta.sum(axis=0))
            if i > 0:
                delta = (delta @ self.weights[i]) * (1.0 - cache[i] ** 2)
        return grads

    def zero_grads(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(np.zeros_like(w), np.zeros_like(b))
                for w, b in zip(self.weights, self.biases)]

    # -- flat views, used by the finite-difference checks and checkpoints --
    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for pair in zip(self.weights, self.biases)
                               for p in pair])

    def set_flat(self, flat: np.ndarray) -> None:
        idx = 0
        for i in range(len(self.weights)):
            for arr in (self.weights[i], self.biases[i]):
                n = arr.size
                arr[...] = flat[idx:idx + n].reshape(arr.shape)
                idx += n

    @staticmethod
    def flatten_grads(grads) -> np.ndarray:
        return np.concatenate([g.ravel() for pair in grads for g in pair])

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights],
                   [b.copy() for b in self.biases],
                   None if self.input_loc is None else self.input_loc.copy(),
                   None if self.input_scale is None else self.input_scale.copy())


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


@dataclass
class Adam:
    """Adaptive moment estimation over a list of (W, b) pairs."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, net: Mlp, grads) -> None:
        flat_g = [g for pair in grads for g in pair]
        params = [p for pair in zip(net.weights, net.biases) for p in pair]
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, flat_g, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
