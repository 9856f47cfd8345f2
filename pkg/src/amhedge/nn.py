"""Small fully-connected networks with hand-derived gradients.

Hidden layers use ReLU.  The output head is either linear (critic) or
``-sigmoid`` (actor), which maps any pre-activation into [-1, 0].
Inputs are batches of row vectors, shape (batch, n_in).
"""
from __future__ import annotations

import math

import numpy as np

HEADS = ("linear", "neg_sigmoid")


def _views(flat, shapes):
    weights, biases, pos = [], [], 0
    for n_out, n_in in shapes:
        weights.append(flat[pos:pos + n_out * n_in].reshape(n_out, n_in))
        pos += n_out * n_in
        biases.append(flat[pos:pos + n_out])
        pos += n_out
    return weights, biases


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class MLP:
    """Weights and biases are views into one flat parameter vector ``theta``,
    so optimizers and target tracking act on a single array."""

    def __init__(self, weights, biases, head: str = "linear"):
        if head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix")
        weights = [np.asarray(w, dtype=float) for w in weights]
        biases = [np.asarray(b, dtype=float).reshape(-1) for b in biases]
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or w.shape[0] != b.size:
                raise ValueError(f"layer {i}: weight {w.shape} does not match bias {b.shape}")
            if i and w.shape[1] != weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input width {w.shape[1]} does not chain")
        self.head = head
        self.theta = np.empty(sum(w.size + b.size for w, b in zip(weights, biases)))
        self.weights, self.biases = _views(self.theta, [w.shape for w in weights])
        for dst, src in zip(self.weights + self.biases, weights + biases):
            dst[...] = src

    @classmethod
    def init(cls, sizes, head: str, rng: np.random.Generator, final_scale: float = 1.0) -> "MLP":
        """Glorot-uniform weights, zero biases; last layer scaled by ``final_scale``."""
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (n_in + n_out))
            weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
            biases.append(np.zeros(n_out))
        weights[-1] *= final_scale
        return cls(weights, biases, head)

    @property
    def sizes(self) -> list:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def activations(self) -> list:
        return ["relu"] * (len(self.weights) - 1) + [self.head]

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def unflatten(self, flat) -> list:
        """Split a flat vector shaped like ``theta`` into [W0, b0, W1, b1, ...] views."""
        ws, bs = _views(flat, [w.shape for w in self.weights])
        out = []
        for w, b in zip(ws, bs):
            out.extend((w, b))
        return out

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.head)

    def forward(self, x):
        """Return (output, cache); ``cache`` feeds ``backward``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.weights[0].shape[1]:
            raise ValueError(f"expected input width {self.weights[0].shape[1]}, got {x.shape[1]}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            if i < last:
                h = np.maximum(z, 0.0)
            elif self.head == "neg_sigmoid":
                h = -_sigmoid(z)
            else:
                h = z
            acts.append(h)
        return h, acts

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        """Gradient of ``sum(grad_out * output)`` as (flat vector like ``theta``, d_input)."""
        acts = cache
        g = np.asarray(grad_out, dtype=float).reshape(acts[-1].shape)
        if self.head == "neg_sigmoid":
            y = acts[-1]                      # y = -s, ds/dz = s(1-s)
            g = g * (y * (1.0 + y))           # dy/dz = -s(1-s) = y(1+y)
        flat = np.empty_like(self.theta)
        gw, gb = _views(flat, [w.shape for w in self.weights])
        for i in range(len(self.weights) - 1, -1, -1):
            np.matmul(g.T, acts[i], out=gw[i])
            np.sum(g, axis=0, out=gb[i])
            g = g @ self.weights[i]
            if i > 0:
                g = g * (acts[i] > 0)
        return flat, g

    def to_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "activations": self.activations,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLP":
        head = d["activations"][-1]
        return cls(d["weights"], d["biases"], head)


def mlp_forward(net: MLP, x):
    return net.forward(x)


def backprop(net: MLP, cache, upstream):
    return net.unflatten(net.backward(cache, upstream)[0])


def soft_update(target: MLP, online: MLP, soft_tau: float) -> MLP:
    """In-place ``target <- (1 - tau) target + tau online``."""
    if not 0.0 <= soft_tau <= 1.0:
        raise ValueError("soft_tau must lie in [0, 1]")
    if target.sizes != online.sizes:
        raise ValueError("network shapes differ")
    target.theta *= 1.0 - soft_tau
    target.theta += soft_tau * online.theta
    return target


class SGD:
    name = "sgd"

    def __init__(self, lr: float):
        self.lr = lr

    def step(self, theta, grad):
        theta -= self.lr * grad


class Adam:
    name = "adam"

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, theta, grad):
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = math.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        self.m *= b1
        self.m += (1.0 - b1) * grad
        self.v *= b2
        self.v += (1.0 - b2) * grad * grad
        theta -= (self.lr * corr) * self.m / (np.sqrt(self.v) + self.eps)


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")
