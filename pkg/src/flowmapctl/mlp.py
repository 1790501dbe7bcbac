"""Small dense networks with hand-written backprop, in float64.

Hidden layers use tanh, the output layer is linear. The explicit forward
cache / backward pair keeps gradients available with respect to both the
parameters and the inputs; the latter is what lets the planner and the
recurrent trainer push gradients through fed-back predictions.
"""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Input or parameter dimensions inconsistent with the layer widths."""


class Mlp:
    """Fully connected tanh network; weights[i] has shape (out, in)."""

    def __init__(self, widths: list[int], weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(widths) < 2:
            raise DimensionError("at least an input and an output layer are required")
        if len(weights) != len(widths) - 1 or len(biases) != len(widths) - 1:
            raise DimensionError("one weight and bias per layer transition is required")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (widths[i + 1], widths[i]) or b.shape != (widths[i + 1],):
                raise DimensionError(
                    f"layer {i}: weight {w.shape} / bias {b.shape} do not match "
                    f"widths {widths[i]} -> {widths[i + 1]}"
                )
        self.widths = list(widths)
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def init(cls, widths: list[int], rng: np.random.Generator) -> "Mlp":
        """Uniform init scaled by fan-in: entries in +-sqrt(1/fan_in)."""
        weights, biases = [], []
        for n_in, n_out in zip(widths[:-1], widths[1:]):
            bound = np.sqrt(1.0 / n_in)
            weights.append(rng.uniform(-bound, bound, (n_out, n_in)))
            biases.append(rng.uniform(-bound, bound, n_out))
        return cls(widths, weights, biases)

    @classmethod
    def zeros(cls, widths: list[int]) -> "Mlp":
        weights = [np.zeros((o, i)) for i, o in zip(widths[:-1], widths[1:])]
        biases = [np.zeros(o) for o in widths[1:]]
        return cls(widths, weights, biases)

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (shared with grads from backward)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.widths, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(np.asarray(x, dtype=np.float64))
        return y

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward pass returning the activations needed for backward.

        x may be (n_in,) or (batch, n_in); the output shape follows suit.
        The cache holds the input to every layer (tanh outputs for hidden
        layers), so cache[i] feeds weights[i].
        """
        squeeze = x.ndim == 1
        a = x[None, :] if squeeze else x
        if a.shape[1] != self.n_in:
            raise DimensionError(f"input width {a.shape[1]} != expected {self.n_in}")
        cache = [a]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w.T + b
            if i < last:
                a = np.tanh(a)
                cache.append(a)
        return (a[0] if squeeze else a), cache

    def backward(
        self, cache: list[np.ndarray], g_out: np.ndarray
    ) -> tuple[list[np.ndarray], np.ndarray]:
        """Backprop the output gradient; returns (parameter grads, input grad).

        The parameter grads are ordered like params(). g_out must be
        (batch, n_out) matching the cached forward pass.
        """
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))
        delta = np.asarray(g_out, dtype=np.float64)
        if delta.ndim == 1:
            delta = delta[None, :]
        for i in range(len(self.weights) - 1, -1, -1):
            a_in = cache[i]
            grads[2 * i] = delta.T @ a_in
            grads[2 * i + 1] = delta.sum(axis=0)
            g_in = delta @ self.weights[i]
            if i > 0:
                g_in = g_in * (1.0 - a_in * a_in)  # a_in is the tanh output feeding layer i
            delta = g_in
        return grads, delta


class Adam:
    """Adam with an exponential per-update learning-rate decay."""

    def __init__(
        self,
        params: list[np.ndarray],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        lr_decay: float = 1.0,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.lr_decay = lr_decay
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def current_lr(self) -> float:
        return self.lr * self.lr_decay**self.t

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Update parameters in place; the decayed rate uses the update index."""
        lr_t = self.current_lr()
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr_t * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def finite_difference_gradients(
    loss_fn, params: list[np.ndarray], h: float = 1e-5
) -> list[np.ndarray]:
    """Central finite differences of loss_fn with respect to each parameter array."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat = p.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = loss_fn()
            flat[i] = orig - h
            f_minus = loss_fn()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads
