"""Small dense networks in numpy with hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeMismatch(ValueError):
    pass


@dataclass
class MLPCache:
    inputs: list[np.ndarray]
    acts: list[np.ndarray]


class MLP:
    """``tanh`` hidden layers, linear output. Parameters live in one flat vector."""

    def __init__(self, sizes: list[int], rng: np.random.Generator | None = None, out_scale: float = 0.01):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = list(sizes)
        self.shapes: list[tuple[int, int]] = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            self.shapes += [(a, b), (1, b)]
        self.n_params = sum(r * c for r, c in self.shapes)
        self.theta = np.zeros(self.n_params)
        if rng is not None:
            self.init(rng, out_scale)

    def init(self, rng: np.random.Generator, out_scale: float = 0.01) -> None:
        parts = []
        n_layers = len(self.sizes) - 1
        for li, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            gain = out_scale if li == n_layers - 1 else 1.0
            # scaled orthogonal-free Glorot uniform
            lim = gain * np.sqrt(6.0 / (a + b))
            parts += [rng.uniform(-lim, lim, size=(a, b)).ravel(), np.zeros(b)]
        self.theta = np.concatenate(parts)

    def params(self, theta: np.ndarray | None = None) -> list[np.ndarray]:
        theta = self.theta if theta is None else theta
        out, i = [], 0
        for r, c in self.shapes:
            out.append(theta[i:i + r * c].reshape(r, c))
            i += r * c
        return out

    def forward(self, x: np.ndarray, theta: np.ndarray | None = None) -> tuple[np.ndarray, MLPCache]:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.sizes[0]:
            raise ShapeMismatch(f"expected {self.sizes[0]} inputs, got {x.shape[1]}")
        ps = self.params(theta)
        inputs, acts = [], []
        h = x
        n_layers = len(ps) // 2
        for li in range(n_layers):
            W, b = ps[2 * li], ps[2 * li + 1]
            inputs.append(h)
            z = h @ W + b
            if li < n_layers - 1:
                h = np.tanh(z)
                acts.append(h)
            else:
                h = z
        return h, MLPCache(inputs, acts)

    def backward(self, cache: MLPCache, grad_out: np.ndarray, theta: np.ndarray | None = None) -> np.ndarray:
        """Gradient of ``sum(grad_out * output)`` w.r.t. the flat parameter vector."""
        ps = self.params(theta)
        n_layers = len(ps) // 2
        grads: list[np.ndarray] = [None] * len(ps)  # type: ignore[list-item]
        g = grad_out
        for li in reversed(range(n_layers)):
            W = ps[2 * li]
            grads[2 * li] = cache.inputs[li].T @ g
            grads[2 * li + 1] = g.sum(axis=0, keepdims=True)
            if li > 0:
                g = (g @ W.T) * (1.0 - cache.acts[li - 1] ** 2)
        return np.concatenate([gr.ravel() for gr in grads])


class Adam:
    def __init__(self, n: int, lr: float = 3e-4, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return updated parameters for a *minimized* objective."""
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mh = self.m / (1 - self.b1 ** self.t)
        vh = self.v / (1 - self.b2 ** self.t)
        return theta - self.lr * mh / (np.sqrt(vh) + self.eps)
