"""Minimal dense networks with explicit gradients.

Shared by the nonlinear codec, the mask encoder and the flow velocity
network. Everything runs in float64 so finite-difference gradient checks
are meaningful; checkpoints quantize to float32 on save.
"""

from __future__ import annotations

import numpy as np


def softplus(x):
    # log(1 + e^x), stable for large |x|
    return np.logaddexp(0.0, x)


def softplus_grad(x):
    return 1.0 / (1.0 + np.exp(-x))


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_ACTS = {
    "linear": (lambda x: x, lambda x: np.ones_like(x)),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "softplus": (softplus, softplus_grad),
    "sigmoid": (sigmoid, lambda x: sigmoid(x) * (1.0 - sigmoid(x))),
}


class MLP:
    """Fully-connected network, row-major batches of shape (N, d_in)."""

    def __init__(self, sizes: list[int], activations: list[str],
                 rng: np.random.Generator | None = None):
        assert len(activations) == len(sizes) - 1
        self.sizes = list(sizes)
        self.activations = list(activations)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        rng = rng or np.random.default_rng(0)
        for din, dout in zip(sizes[:-1], sizes[1:]):
            scale = np.sqrt(2.0 / (din + dout))
            self.weights.append(rng.normal(0.0, scale, size=(din, dout)))
            self.biases.append(np.zeros(dout))

    # -- parameter plumbing -------------------------------------------------
    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def set_params(self, params: list[np.ndarray]) -> None:
        for i in range(len(self.weights)):
            self.weights[i] = np.asarray(params[2 * i], dtype=np.float64)
            self.biases[i] = np.asarray(params[2 * i + 1], dtype=np.float64)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat_params(self, flat: np.ndarray) -> None:
        out, off = [], 0
        for p in self.params:
            out.append(flat[off:off + p.size].reshape(p.shape).copy())
            off += p.size
        self.set_params(out)

    # -- forward / backward -------------------------------------------------
    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cache(x)
        return y

    def forward_cache(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        cache = [(x, None)]
        for w, b, act in zip(self.weights, self.biases, self.activations):
            pre = x @ w + b
            x = _ACTS[act][0](pre)
            cache.append((x, pre))
        return x, cache

    def backward(self, cache, dy: np.ndarray):
        """Return (param_grads, dx) for upstream gradient dy on the output."""
        grads = []
        dx = np.asarray(dy, dtype=np.float64)
        for i in reversed(range(len(self.weights))):
            x_in = cache[i][0]
            pre = cache[i + 1][1]
            dpre = dx * _ACTS[self.activations[i]][1](pre)
            grads.append(dpre.sum(axis=0))           # bias
            grads.append(x_in.T @ dpre)              # weight
            dx = dpre @ self.weights[i].T
        grads.reverse()
        return grads, dx


class AdamW:
    """Decoupled weight decay Adam over a list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 weight_decay: float = 0.0, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray],
             grads: list[np.ndarray]) -> list[np.ndarray]:
        self.t += 1
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mh = self.m[i] / (1 - self.b1 ** self.t)
            vh = self.v[i] / (1 - self.b2 ** self.t)
            p = p - self.lr * (mh / (np.sqrt(vh) + self.eps)
                               + self.weight_decay * p)
            out.append(p)
        return out


def finite_difference_grad(loss_fn, flat: np.ndarray, coords: np.ndarray,
                           eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of loss_fn at flat, on selected coords."""
    out = np.empty(len(coords))
    for j, c in enumerate(coords):
        up = flat.copy()
        dn = flat.copy()
        up[c] += eps
        dn[c] -= eps
        out[j] = (loss_fn(up) - loss_fn(dn)) / (2 * eps)
    return out
