"""Fully connected ELU network with hand-written reverse mode.

Weights are stored as ``(fan_in, fan_out)`` matrices so that a batch of rows
``h`` propagates as ``h @ W + b``. The output layer has a single unit and no
activation; its value is the logit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def elu(z: np.ndarray) -> np.ndarray:
    """ELU with alpha = 1."""
    # max(z, 0) + (exp(min(z, 0)) - 1) is exact on both branches and avoids
    # np.where/expm1, which dominate the cost at these layer widths.
    e = np.exp(np.minimum(z, 0.0))
    e -= 1.0
    return np.maximum(z, 0.0) + e


@dataclass
class MlpNetwork:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "elu"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be non-empty lists of equal length")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i > 0 and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i}: fan_in {w.shape[0]} does not match previous layer")
        if self.weights[-1].shape[1] != 1:
            raise ValueError("output layer must have exactly one unit")
        if self.activation != "elu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if not all(np.all(np.isfinite(p)) for p in self.parameters()):
            raise ValueError("network parameters must be finite")

    @classmethod
    def init(cls, layer_sizes, rng: np.random.Generator | None = None, zeros: bool = False):
        """Build a network with uniform(+-sqrt(1/fan_in)) weights and biases."""
        layer_sizes = [int(s) for s in layer_sizes]
        if len(layer_sizes) < 2 or any(s < 1 for s in layer_sizes):
            raise ValueError(f"invalid layer sizes {layer_sizes}")
        if layer_sizes[-1] != 1:
            raise ValueError("last layer size must be 1")
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            if zeros:
                weights.append(np.zeros((fan_in, fan_out)))
                biases.append(np.zeros(fan_out))
                continue
            bound = np.sqrt(1.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def parameters(self) -> list[np.ndarray]:
        """Flat list ``[W0, b0, W1, b1, ...]`` of the live arrays (not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpNetwork":
        return MlpNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.input_dim:
            raise ValueError(f"expected input dimension {self.input_dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x2)):
            raise ValueError("input contains non-finite values")
        return x2, single

    def forward(self, x) -> np.ndarray | float:
        """Logit for one input vector (returns float) or a batch of rows."""
        x2, single = self._check_input(x)
        logits, _ = _forward(self, x2)
        return float(logits[0]) if single else logits

    def forward_cached(self, x):
        x2, _ = self._check_input(x)
        return _forward(self, x2)

    def backward(self, x, upstream):
        """Gradients of ``sum(upstream * logit)``.

        Returns ``(weight_grads, input_grad)`` where ``weight_grads`` follows
        the ``parameters()`` ordering and ``input_grad`` has the shape of ``x``.
        """
        x2, single = self._check_input(x)
        up = np.atleast_1d(np.asarray(upstream, dtype=np.float64))
        if up.shape != (x2.shape[0],):
            raise ValueError(f"upstream shape {up.shape} does not match batch {x2.shape[0]}")
        _, cache = _forward(self, x2)
        grads, dx = _backward(self, cache, up, want_input=True)
        return grads, (dx[0] if single else dx)


def _forward(net: MlpNetwork, x: np.ndarray):
    hs = [x]
    slopes = []
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w
        z += b
        if i < last:
            e = np.exp(np.minimum(z, 0.0))
            slopes.append(e)
            h = np.maximum(z, 0.0) + (e - 1.0)
            hs.append(h)
        else:
            h = z
    return h[:, 0], (hs, slopes)


def _backward(net: MlpNetwork, cache, upstream: np.ndarray, want_input: bool = False):
    hs, slopes = cache
    delta = upstream[:, None]
    grads = [None] * (2 * len(net.weights))
    for i in range(len(net.weights) - 1, -1, -1):
        grads[2 * i] = hs[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i == 0 and not want_input:
            break
        delta = delta @ net.weights[i].T
        if i > 0:
            # d elu / dz = exp(min(z, 0))
            delta *= slopes[i - 1]
    return grads, (delta if want_input else None)


def forward(net: MlpNetwork, x):
    return net.forward(x)


def backward(net: MlpNetwork, x, upstream):
    return net.backward(x, upstream)
