"""Dynamic Chebyshev pricing of American puts.

The value function is carried backwards on a fixed tensor grid of
Chebyshev-Gauss-Lobatto nodes.  At each time layer, every node launches a
batch of one-step transitions; the next layer's interpolant is evaluated at
the landing points, discounted and averaged to give the continuation value,
and the node value is the larger of continuation and immediate exercise.
Once built, the surface answers price queries by Clenshaw evaluation alone,
with no further simulation.

Grids are 1-D (price) for GBM and 2-D (price, volatility) for the
stochastic-volatility model.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.chebyshev import chebvander
from scipy.fft import dct

from .analytic import OptionSpec
from .market import (GBMParams, SABRParams, STREAM_PRICER, sabr_step, substream,
                     PRICE_FLOOR)


@dataclass(frozen=True, eq=False)
class ChebGrid:
    bounds: tuple          # ((lo, hi), ...) one pair per dimension
    degrees: tuple         # polynomial degree per dimension

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        degrees = tuple(int(d) for d in self.degrees)
        if len(bounds) not in (1, 2) or len(bounds) != len(degrees):
            raise ValueError("grids are 1-D or 2-D with one degree per dimension")
        for lo, hi in bounds:
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"degenerate bounds [{lo}, {hi}]")
        if min(degrees) < 2:
            raise ValueError("degree must be at least 2")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "degrees", degrees)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def axis_nodes(self, axis: int) -> np.ndarray:
        lo, hi = self.bounds[axis]
        n = self.degrees[axis]
        return 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(np.pi * np.arange(n + 1) / n)

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (n_nodes, dim); first axis varies slowest."""
        axes = [self.axis_nodes(a) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def shape(self) -> tuple:
        return tuple(d + 1 for d in self.degrees)

    def to_unit(self, x, axis):
        lo, hi = self.bounds[axis]
        return (2.0 * np.asarray(x, dtype=float) - (lo + hi)) / (hi - lo)

    def clamp(self, x, axis):
        lo, hi = self.bounds[axis]
        return np.clip(x, lo, hi)

    def fit(self, values) -> np.ndarray:
        """Chebyshev coefficients interpolating ``values`` given on the node grid."""
        c = np.asarray(values, dtype=float).reshape(self.shape)
        for axis, n in enumerate(self.degrees):
            c = dct(c, type=1, axis=axis) / n
            edge = [slice(None)] * self.dim
            for idx in (0, n):
                edge[axis] = idx
                c[tuple(edge)] *= 0.5
        return c

    def evaluate(self, coeffs, *coords) -> np.ndarray:
        """Interpolant value at points (coordinates clamped into the domain)."""
        xs = [self.to_unit(self.clamp(np.asarray(c, dtype=float), a), a)
              for a, c in enumerate(coords)]
        if self.dim == 1:
            return _clenshaw(coeffs, xs[0])
        x, y = np.broadcast_arrays(*xs)
        # basis matrices turn the tensor contraction into one matrix product
        vx = chebvander(x.ravel(), self.degrees[0])
        vy = chebvander(y.ravel(), self.degrees[1])
        out = np.einsum("mj,mj->m", vx @ coeffs, vy)
        return out.reshape(x.shape)


def _clenshaw(coeffs, x):
    """Evaluate sum_k c_k T_k(x) for 1-D ``coeffs``."""
    x = np.asarray(x, dtype=float)
    c = np.asarray(coeffs)
    b1 = np.zeros(x.shape)
    b2 = np.zeros_like(b1)
    for k in range(c.shape[0] - 1, 0, -1):
        b1, b2 = c[k] + 2.0 * x * b1 - b2, b1
    return c[0] + x * b1 - b2


def build_grid(bounds, degrees) -> ChebGrid:
    return ChebGrid(tuple(bounds), tuple(degrees))


def default_grid(model, spec: OptionSpec, price_degree: int = 80,
                 vol_degree: int = 10) -> ChebGrid:
    """Grid covering +-4 standard deviations of terminal log-price."""
    t = spec.maturity
    if isinstance(model, GBMParams):
        width = 4.0 * model.sigma * math.sqrt(t)
        return ChebGrid(((model.s0 * math.exp(-width), model.s0 * math.exp(width)),),
                        (price_degree,))
    # exponents capped so extreme vol-of-vol cannot blow the box up
    sig_bar = model.sigma0 * math.exp(min(2.0 * model.nu * math.sqrt(t), 2.0))
    width = min(4.0 * sig_bar * math.sqrt(t), 3.0)
    vol_hi = model.sigma0 * math.exp(min(3.0 * model.nu * math.sqrt(t), 3.0))
    if vol_hi <= model.sigma0 / 4.0:
        vol_hi = model.sigma0
    return ChebGrid(((model.s0 * math.exp(-width), model.s0 * math.exp(width)),
                     (model.sigma0 / 4.0, vol_hi)),
                    (price_degree, vol_degree))


@lru_cache(maxsize=64)
def _layer_normals(seed: int, layer: int, n_nodes: int, mc: int, n_factors: int):
    # antithetic pairs rescaled to unit sample variance; raw draws bias the
    # value low through noisy exercise decisions
    half = mc // 2
    z = np.empty((n_nodes, n_factors, 2 * half))
    for node in range(n_nodes):
        draw = substream(seed, STREAM_PRICER, layer, node).standard_normal((n_factors, half))
        z[node, :, :half] = draw
        z[node, :, half:] = -draw
    z /= np.sqrt(np.mean(z * z, axis=-1, keepdims=True))
    z.setflags(write=False)
    return z


class ValueSurface:
    """Per-layer Chebyshev coefficients for the option value and continuation value."""

    def __init__(self, grid: ChebGrid, times, value_coeffs, cont_coeffs, exercise,
                 model, spec: OptionSpec):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.value_coeffs = np.asarray(value_coeffs, dtype=float)
        self.cont_coeffs = np.asarray(cont_coeffs, dtype=float)
        self.exercise = np.asarray(exercise, dtype=bool)
        self.model = model
        self.spec = spec
        if not np.all(np.isfinite(self.value_coeffs)):
            raise ValueError("non-finite coefficients")

    @property
    def n_time_steps(self) -> int:
        return self.times.size - 1

    def _coords(self, s, sigma):
        if self.grid.dim == 1:
            return (s,)
        if sigma is None:
            raise ValueError("a volatility level is required for a 2-D surface")
        return (s, sigma)

    def _bracket(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.times[0] - 1e-12) or np.any(t > self.times[-1] + 1e-12):
            raise ValueError("query time outside the surface time grid")
        dt = self.times[1] - self.times[0]
        f = np.clip((t - self.times[0]) / dt, 0.0, self.n_time_steps)
        k0 = np.minimum(np.floor(f + 1e-9).astype(int), self.n_time_steps)
        k1 = np.minimum(k0 + 1, self.n_time_steps)
        return k0, k1, np.clip(f - k0, 0.0, 1.0)

    def _interp_layers(self, coeffs, s, sigma, t):
        s = np.asarray(s, dtype=float)
        coords = self._coords(s, sigma)
        arrays = np.broadcast_arrays(*coords, np.asarray(t, dtype=float))
        pts, tt = arrays[:-1], arrays[-1]
        k0, k1, w = self._bracket(tt)
        flat_k0, flat_k1, flat_w = k0.ravel(), k1.ravel(), w.ravel()
        flat_pts = [p.ravel() for p in pts]
        res = np.zeros(flat_w.size)
        for layer, weight in ((flat_k0, 1.0 - flat_w), (flat_k1, flat_w)):
            for k in np.unique(layer):
                sel = layer == k
                res[sel] += weight[sel] * self.grid.evaluate(coeffs[k], *[p[sel] for p in flat_pts])
        out = np.empty(tt.shape)
        out[...] = res.reshape(tt.shape)
        return out

    def price(self, s, t, sigma=None):
        s_arr = np.asarray(s, dtype=float)
        out = self._interp_layers(self.value_coeffs, s_arr, sigma, t)
        payoff = np.maximum(self.spec.strike - s_arr, 0.0)
        # the maturity layer is known exactly; the interpolant rings at the kink
        out = np.where(np.asarray(t, dtype=float) >= self.times[-1] - 1e-12, payoff,
                       np.maximum(out, payoff))
        return float(out) if out.ndim == 0 else out

    def continuation(self, s, t, sigma=None):
        out = self._interp_layers(self.cont_coeffs, s, sigma, t)
        return float(out) if out.ndim == 0 else out

    def should_exercise(self, s, t, sigma=None):
        s_arr = np.asarray(s, dtype=float)
        intrinsic = self.spec.strike - s_arr
        t_arr = np.asarray(t, dtype=float)
        at_expiry = t_arr >= self.times[-1] - 1e-12
        cont = self._interp_layers(self.cont_coeffs, s_arr, sigma, np.minimum(t_arr, self.times[-1]))
        out = (intrinsic > 0) & (at_expiry | (intrinsic >= cont))
        return bool(out) if out.ndim == 0 else out

    def boundary(self) -> list:
        """Largest exercised node price per layer (and per volatility node in 2-D)."""
        prices = self.grid.axis_nodes(0)
        out = []
        for k, t in enumerate(self.times):
            flags = self.exercise[k].reshape(self.grid.shape)
            if self.grid.dim == 1:
                ex = prices[flags]
                out.append((float(t), float(ex.max()) if ex.size else None))
            else:
                for j, vol in enumerate(self.grid.axis_nodes(1)):
                    ex = prices[flags[:, j]]
                    out.append((float(t), float(ex.max()) if ex.size else None, float(vol)))
        return out

    def to_dict(self) -> dict:
        model = self.model
        kind = "gbm" if isinstance(model, GBMParams) else "sabr"
        return {
            "model": kind,
            "params": dict(model.__dict__),
            "option": {"strike": self.spec.strike, "maturity": self.spec.maturity,
                       "style": self.spec.style},
            "bounds": [list(b) for b in self.grid.bounds],
            "degrees": list(self.grid.degrees),
            "times": self.times.tolist(),
            "value_coeffs": self.value_coeffs.tolist(),
            "cont_coeffs": self.cont_coeffs.tolist(),
            "exercise": self.exercise.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ValueSurface":
        model_cls = GBMParams if d["model"] == "gbm" else SABRParams
        grid = ChebGrid(tuple(tuple(b) for b in d["bounds"]), tuple(d["degrees"]))
        spec = OptionSpec(d["option"]["strike"], d["option"]["maturity"], d["option"]["style"])
        return cls(grid, d["times"], d["value_coeffs"], d["cont_coeffs"],
                   np.asarray(d["exercise"], dtype=bool), model_cls(**d["params"]), spec)

    def save(self, file) -> None:
        with open(file, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, file) -> "ValueSurface":
        with open(file) as fh:
            return cls.from_dict(json.load(fh))


def backward_induce(model, spec: OptionSpec, grid: ChebGrid, n_time_steps: int,
                    mc_per_node: int = 2000, seed: int = 0) -> ValueSurface:
    if n_time_steps < 2:
        raise ValueError("n_time_steps must be at least 2")
    if mc_per_node < 100:
        raise ValueError("mc_per_node must be at least 100")
    is_gbm = isinstance(model, GBMParams)
    if is_gbm and grid.dim != 1:
        raise ValueError("GBM pricing uses a 1-D price grid")
    if not is_gbm and grid.dim != 2:
        raise ValueError("stochastic-volatility pricing needs a 2-D (price, vol) grid")

    r = model.r
    dt = spec.maturity / n_time_steps
    disc = math.exp(-r * dt)
    times = np.linspace(0.0, spec.maturity, n_time_steps + 1)
    nodes = grid.nodes()
    n_nodes = nodes.shape[0]
    s_nodes = nodes[:, 0]
    intrinsic = np.maximum(spec.strike - s_nodes, 0.0)

    n_coef = grid.shape
    value_coeffs = np.empty((n_time_steps + 1,) + n_coef)
    cont_coeffs = np.empty_like(value_coeffs)
    exercise = np.zeros((n_time_steps + 1, n_nodes), dtype=bool)

    value_coeffs[-1] = grid.fit(intrinsic)
    cont_coeffs[-1] = 0.0
    exercise[-1] = intrinsic > 0
    n_factors = 1 if is_gbm else 2

    for k in range(n_time_steps - 1, -1, -1):
        z = _layer_normals(seed, k, n_nodes, mc_per_node, n_factors)
        if is_gbm:
            s1 = s_nodes[:, None] * np.exp((r - 0.5 * model.sigma ** 2) * dt
                                           + model.sigma * math.sqrt(dt) * z[:, 0])
            s1 = np.maximum(s1, PRICE_FLOOR)
            landed = (s1,)
        else:
            vol_nodes = nodes[:, 1]
            s1, v1 = sabr_step(s_nodes[:, None], vol_nodes[:, None], r, model.nu, model.rho,
                               dt, z[:, 0], z[:, 1])
            landed = (s1, v1)
        if k + 1 == n_time_steps:
            # the maturity value is known exactly; no need to interpolate the kink
            nxt = np.maximum(spec.strike - s1, 0.0)
        else:
            nxt = grid.evaluate(value_coeffs[k + 1], *landed)
            nxt = np.maximum(nxt, spec.strike - grid.clamp(s1, 0))
        cont = disc * nxt.mean(axis=1)
        if spec.american:
            flags = (intrinsic >= cont) & (intrinsic > 0)
            vals = np.where(flags, intrinsic, cont)
        else:
            flags = np.zeros(n_nodes, dtype=bool)
            vals = cont
        exercise[k] = flags
        value_coeffs[k] = grid.fit(vals)
        cont_coeffs[k] = grid.fit(cont)

    return ValueSurface(grid, times, value_coeffs, cont_coeffs, exercise, model, spec)


def query_price(surface: ValueSurface, s, sigma, t):
    return surface.price(s, t, sigma)


def exercise_boundary(surface: ValueSurface) -> list:
    return surface.boundary()


class StrikeScaledSurface:
    """A surface struck at ``K_ref`` re-used for strike ``K``.

    Both models scale with the price level, so
    ``P(s; K) = (K / K_ref) * P(s * K_ref / K; K_ref)``.
    """

    def __init__(self, surface: ValueSurface, strike: float):
        self.surface = surface
        self.strike = float(strike)
        self.ratio = self.strike / surface.spec.strike
        self.model = surface.model
        self.spec = OptionSpec(self.strike, surface.spec.maturity, surface.spec.style)

    @property
    def r(self) -> float:
        return self.model.r

    def price(self, s, t, sigma=None):
        out = self.ratio * np.asarray(self.surface.price(np.asarray(s, dtype=float) / self.ratio,
                                                         t, sigma))
        return float(out) if out.ndim == 0 else out

    def should_exercise(self, s, t, sigma=None):
        return self.surface.should_exercise(np.asarray(s, dtype=float) / self.ratio, t, sigma)
