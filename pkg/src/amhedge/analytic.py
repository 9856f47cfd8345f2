"""Closed-form European put and a Cox-Ross-Rubinstein tree for American puts."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr


@dataclass(frozen=True)
class OptionSpec:
    strike: float
    maturity: float
    style: str = "american"
    right: str = "put"

    def __post_init__(self):
        if not (self.strike > 0 and math.isfinite(self.strike)):
            raise ValueError("strike must be positive")
        if not (self.maturity > 0 and math.isfinite(self.maturity)):
            raise ValueError("maturity must be positive")
        if self.style not in ("american", "european"):
            raise ValueError(f"unknown style {self.style!r}")
        if self.right != "put":
            raise ValueError("only puts are supported")

    @property
    def american(self) -> bool:
        return self.style == "american"

    def intrinsic(self, s):
        return np.maximum(self.strike - np.asarray(s, dtype=float), 0.0)


def _d1_d2(s, strike, sigma, r, tau):
    vol = sigma * np.sqrt(tau)
    d1 = (np.log(s / strike) + (r + 0.5 * sigma * sigma) * tau) / vol
    return d1, d1 - vol


def bs_put_price(s, spec: OptionSpec, sigma: float, r: float, tau):
    """European put value; returns intrinsic where ``tau == 0``."""
    s = np.asarray(s, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("time to maturity must be non-negative")
    if np.any(tau > spec.maturity + 1e-12):
        raise ValueError("time to maturity exceeds the option maturity")
    if np.any(s <= 0):
        raise ValueError("price must be positive")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    k = spec.strike
    live = tau > 0
    if sigma == 0:
        out = np.maximum(k * np.exp(-r * tau) - s, 0.0)
        return _scalar(out)
    safe_tau = np.where(live, tau, 1.0)
    d1, d2 = _d1_d2(s, k, sigma, r, safe_tau)
    price = k * np.exp(-r * safe_tau) * ndtr(-d2) - s * ndtr(-d1)
    out = np.where(live, price, np.maximum(k - s, 0.0))
    return _scalar(out)


def bs_put_delta(s, spec: OptionSpec, sigma: float, r: float, tau):
    s = np.asarray(s, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("delta is undefined at expiry")
    if np.any(s <= 0):
        raise ValueError("price must be positive")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d1, _ = _d1_d2(s, spec.strike, sigma, r, tau)
    return _scalar(ndtr(d1) - 1.0)


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


class BinomialTree:
    """Recombining CRR lattice with stored node values and exercise flags.

    The lattice starts ``pad`` steps before t = 0 so that the layer at t = 0
    already spans roughly four standard deviations of terminal log-price on
    each side of ``s0``; queries at any (s, t) then interpolate between real
    nodes instead of clamping to a single root.  The node at (s0, 0) roots
    the ordinary ``n_steps`` tree, so its value is the usual CRR price.

    Layer ``i`` (time ``(i - pad) * dt``) holds ``i + 1`` nodes with prices
    ``s0 * u**(2j - i)``; values and flags are stored flat at ``i(i+1)/2 + j``.
    """

    def __init__(self, spec: OptionSpec, s0: float, sigma: float, r: float, n_steps: int):
        if n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if s0 <= 0 or sigma <= 0:
            raise ValueError("s0 and sigma must be positive")
        self.spec = spec
        self.s0 = float(s0)
        self.sigma = float(sigma)
        self.r = float(r)
        self.n_steps = int(n_steps)
        self.pad = 2 * math.ceil(2.0 * math.sqrt(n_steps))
        self.dt = spec.maturity / n_steps
        self.up = math.exp(sigma * math.sqrt(self.dt))
        self.down = 1.0 / self.up
        self.log_up = math.log(self.up)
        p = (math.exp(r * self.dt) - self.down) / (self.up - self.down)
        if not 0.0 < p < 1.0:
            raise ValueError("risk-neutral probability outside (0, 1); refine the tree")
        self.p_up = p

        last = self.pad + self.n_steps
        size = (last + 1) * (last + 2) // 2
        self.values = np.empty(size)
        self.exercise = np.zeros(size, dtype=bool)
        k = spec.strike
        disc = math.exp(-r * self.dt)
        v = np.maximum(k - self.layer_prices(last), 0.0)
        self._store(last, v, v > 0)
        for i in range(last - 1, -1, -1):
            cont = disc * (p * v[1:] + (1.0 - p) * v[:-1])
            if spec.american:
                ex = k - self.layer_prices(i)
                flags = (ex >= cont) & (ex > 0)
                v = np.where(flags, ex, cont)
            else:
                flags = np.zeros(i + 1, dtype=bool)
                v = cont
            self._store(i, v, flags)
        self._boundary = None

    @staticmethod
    def _offset(i):
        return i * (i + 1) // 2

    def _store(self, i, v, flags):
        off = self._offset(i)
        self.values[off:off + i + 1] = v
        self.exercise[off:off + i + 1] = flags

    def layer_index(self, step: int) -> int:
        """Lattice layer holding time ``step * dt``."""
        return self.pad + step

    def layer_prices(self, i: int) -> np.ndarray:
        j = np.arange(i + 1)
        return self.s0 * np.exp((2 * j - i) * self.log_up)

    def layer_values(self, i: int) -> np.ndarray:
        off = self._offset(i)
        return self.values[off:off + i + 1]

    def layer_exercise(self, i: int) -> np.ndarray:
        off = self._offset(i)
        return self.exercise[off:off + i + 1]

    @property
    def root_value(self) -> float:
        return float(self.values[self._offset(self.pad) + self.pad // 2])

    def _value_on_layer(self, i, s):
        # piecewise-linear in price between bracketing nodes, clamped at the ends
        pos = (np.log(s / self.s0) / self.log_up + i) / 2.0
        j0 = np.clip(np.floor(pos).astype(int), 0, i - 1)
        j1 = j0 + 1
        off = i * (i + 1) // 2
        p0 = self.s0 * np.exp((2 * j0 - i) * self.log_up)
        p1 = self.s0 * np.exp((2 * j1 - i) * self.log_up)
        v0 = self.values[off + j0]
        v1 = self.values[off + j1]
        w = np.clip((s - p0) / (p1 - p0), 0.0, 1.0)
        return v0 + w * (v1 - v0)

    def price_at(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self.spec.maturity + 1e-12):
            raise ValueError("query time outside [0, maturity]")
        if np.any(s <= 0):
            raise ValueError("price must be positive")
        s, t = np.broadcast_arrays(s, t)
        f = np.clip(t / self.dt, 0.0, self.n_steps)
        k0 = np.minimum(np.floor(f + 1e-9).astype(int), self.n_steps)
        k1 = np.minimum(k0 + 1, self.n_steps)
        w = np.clip(f - k0, 0.0, 1.0)
        v0 = self._value_on_layer(self.pad + k0, s)
        v1 = self._value_on_layer(self.pad + k1, s)
        out = (1.0 - w) * v0 + w * v1
        if self.spec.american:
            out = np.maximum(out, self.spec.strike - s)
        return _scalar(out)

    def boundary(self) -> list:
        """Per time step: (t, highest exercised node price) or (t, None)."""
        if not self.spec.american:
            raise ValueError("European trees have no exercise boundary")
        out = []
        for k in range(self.n_steps + 1):
            i = self.pad + k
            flags = self.layer_exercise(i)
            t = k * self.dt
            if flags.any():
                out.append((t, float(self.layer_prices(i)[flags].max())))
            else:
                out.append((t, None))
        return out

    def boundary_at(self, t):
        """Critical price at ``t``, linear between layers; 0 where nothing exercises."""
        if self._boundary is None:
            self._boundary = np.array([0.0 if c is None else c for _, c in self.boundary()])
        f = np.clip(np.asarray(t, dtype=float) / self.dt, 0.0, self.n_steps)
        return _scalar(np.interp(f, np.arange(self.n_steps + 1), self._boundary))

    # pricer protocol shared with the Chebyshev surface
    def price(self, s, t, sigma=None):
        return self.price_at(s, t)

    def should_exercise(self, s, t, sigma=None):
        s = np.asarray(s, dtype=float)
        return _scalar_bool((s < self.spec.strike) & (s <= self.boundary_at(t)))


def _scalar_bool(x):
    x = np.asarray(x)
    return bool(x) if x.ndim == 0 else x


def build_tree(spec: OptionSpec, s0: float, sigma: float, r: float, n_steps: int = 500) -> BinomialTree:
    return BinomialTree(spec, s0, sigma, r, n_steps)


def tree_price_at(tree: BinomialTree, s, t):
    return tree.price_at(s, t)


def tree_delta(tree: BinomialTree, s, t, bump: float = 1e-3):
    s = np.asarray(s, dtype=float)
    h = bump * s
    up = tree.price_at(s + h, t)
    down = tree.price_at(s - h, t)
    return _scalar(np.clip((np.asarray(up) - np.asarray(down)) / (2 * h), -1.0, 0.0))


def tree_exercise_boundary(tree: BinomialTree) -> list:
    return tree.boundary()
