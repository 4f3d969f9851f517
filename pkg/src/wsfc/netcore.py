"""Small dense feedforward nets with hand-written exact backpropagation.

Everything runs in float64.  Hidden layers use tanh; the output layer is
linear (contour generators) or sigmoid (weight modules).  The sigmoid is
clamped away from exactly 0 and 1 so downstream gates built on it keep
strict open bounds even for saturating pre-activations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Clamp bounds for the sigmoid output.  2 * SIGMOID_MAX < 2.0 holds in
# float64, which is what the (0, 2) weight gate relies on.
SIGMOID_MIN = 1e-300
SIGMOID_MAX = 1.0 - 1e-15

DEFAULT_INIT_SCALE = 0.1


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function, clamped inside (0, 1)."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, SIGMOID_MIN, SIGMOID_MAX)


@dataclass
class Gradients:
    """Parameter gradients mirroring a net's weight and bias arrays."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]


class DenseNet:
    """Fully connected net: sizes[0] inputs through sizes[-1] outputs."""

    def __init__(self, sizes, output: str = "linear",
                 init_scale: float = DEFAULT_INIT_SCALE, seed=None):
        if len(sizes) < 2:
            raise ValueError("need at least input and output layer sizes")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if output not in ("linear", "sigmoid"):
            raise ValueError(f"unknown output activation {output!r}")
        self.sizes = [int(s) for s in sizes]
        self.output = output
        rng = np.random.default_rng(seed)
        self.weights = [rng.uniform(-init_scale, init_scale, size=(m, n))
                        for n, m in zip(self.sizes, self.sizes[1:])]
        self.biases = [rng.uniform(-init_scale, init_scale, size=m)
                       for m in self.sizes[1:]]

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "DenseNet":
        dup = DenseNet.__new__(DenseNet)
        dup.sizes = list(self.sizes)
        dup.output = self.output
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    def _forward_cached(self, x: np.ndarray) -> list[np.ndarray]:
        """Activations per layer for a 2-D batch, input included."""
        acts = [x]
        a = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            if k < last:
                a = np.tanh(z)
            elif self.output == "sigmoid":
                a = sigmoid(z)
            else:
                a = z
            acts.append(a)
        return acts

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the net; accepts a single vector or a (n, in_dim) batch."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        out = self._forward_cached(np.atleast_2d(x))[-1]
        return out[0] if single else out

    def _backward_from_cache(self, acts: list[np.ndarray],
                             upstream: np.ndarray
                             ) -> tuple[Gradients, np.ndarray]:
        delta = upstream
        if self.output == "sigmoid":
            out = acts[-1]
            delta = delta * out * (1.0 - out)
        grads_w: list[np.ndarray] = [None] * len(self.weights)
        grads_b: list[np.ndarray] = [None] * len(self.weights)
        for k in range(len(self.weights) - 1, -1, -1):
            grads_w[k] = delta.T @ acts[k]
            grads_b[k] = delta.sum(axis=0)
            delta = delta @ self.weights[k]
            if k > 0:
                # acts[k] is tanh output for every hidden layer
                delta = delta * (1.0 - acts[k] ** 2)
        return Gradients(grads_w, grads_b), delta

    def backward(self, x: np.ndarray, upstream: np.ndarray
                 ) -> tuple[Gradients, np.ndarray]:
        """Exact gradients of sum(output * upstream) w.r.t. parameters and input.

        Batched inputs sum parameter gradients over the batch and return
        per-row input gradients.
        """
        x = np.asarray(x, dtype=float)
        upstream = np.asarray(upstream, dtype=float)
        single = x.ndim == 1
        acts = self._forward_cached(np.atleast_2d(x))
        grads, din = self._backward_from_cache(acts, np.atleast_2d(upstream))
        return grads, (din[0] if single else din)

    def to_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "output": self.output,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DenseNet":
        net = cls(data["sizes"], output=data["output"], init_scale=0.0)
        for k, w in enumerate(data["weights"]):
            net.weights[k] = np.array(w, dtype=float).reshape(net.weights[k].shape)
        for k, b in enumerate(data["biases"]):
            net.biases[k] = np.array(b, dtype=float).reshape(net.biases[k].shape)
        return net


class SgdMomentum:
    """Classic momentum state: v <- momentum * v + g, p <- p - lr * v."""

    def __init__(self, net: DenseNet, learning_rate: float = 0.01,
                 momentum: float = 0.9):
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.vel_w = [np.zeros_like(w) for w in net.weights]
        self.vel_b = [np.zeros_like(b) for b in net.biases]


def apply_update(net: DenseNet, grads: Gradients, opt: SgdMomentum) -> None:
    """One momentum step in place; rejects non-finite gradients."""
    for g in grads.arrays():
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient component")
    for k in range(len(net.weights)):
        opt.vel_w[k] = opt.momentum * opt.vel_w[k] + grads.weights[k]
        opt.vel_b[k] = opt.momentum * opt.vel_b[k] + grads.biases[k]
        net.weights[k] -= opt.learning_rate * opt.vel_w[k]
        net.biases[k] -= opt.learning_rate * opt.vel_b[k]


def gradient_check(net: DenseNet, x: np.ndarray, eps: float = 1e-5) -> float:
    """Worst-case relative error of analytic against central-difference gradients.

    The scalar probed is sum(forward(x)); the error for each parameter is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-12) and the maximum
    over all parameters is returned.
    """
    x = np.asarray(x, dtype=float)
    upstream = np.ones(net.out_dim)
    analytic, _ = net.backward(x, upstream)
    worst = 0.0
    for param, grad in zip(net.parameters(), analytic.arrays()):
        flat_p = param.reshape(-1)
        flat_g = grad.reshape(-1)
        for i in range(flat_p.size):
            saved = flat_p[i]
            flat_p[i] = saved + eps
            hi = float(np.sum(net.forward(x) * upstream))
            flat_p[i] = saved - eps
            lo = float(np.sum(net.forward(x) * upstream))
            flat_p[i] = saved
            numeric = (hi - lo) / (2.0 * eps)
            err = abs(flat_g[i] - numeric) / max(abs(flat_g[i]), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst
