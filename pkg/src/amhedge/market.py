"""Seeded path generation for the hedging experiments.

Two models are supported: geometric Brownian motion (stepped with the exact
log-normal transition) and a lognormal stochastic-volatility model in which
volatility follows a driftless multiplicative walk correlated with the price
shocks (stepped with the plain Euler scheme).

Randomness comes from Philox counter-based generators.  Every path owns a
substream keyed by ``(seed, path index)`` so paths can be generated in any
order, or in parallel, and still reproduce bit-for-bit.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

VOL_FLOOR = 1e-4
PRICE_FLOOR = 1e-6

# Philox keys are two 64-bit words; the second word tags the stream family
# so GBM paths, SABR paths and pricer draws never share counters.
STREAM_GBM = 1
STREAM_SABR = 2
STREAM_PRICER = 3
STREAM_MISC = 4

_MASK64 = (1 << 64) - 1


def substream(seed: int, tag: int, *index: int) -> np.random.Generator:
    """Independent generator for ``(seed, tag, index...)``.

    Up to three integer indices are placed in the upper counter words, which
    keeps the streams disjoint for fewer than 2**64 draws each.
    """
    if len(index) > 3:
        raise ValueError("at most three substream indices")
    counter = [0, 0, 0, 0]
    for pos, value in enumerate(index):
        if value < 0:
            raise ValueError("substream indices must be non-negative")
        counter[3 - pos] = int(value) & _MASK64
    bitgen = np.random.Philox(key=[int(seed) & _MASK64, tag], counter=counter)
    return np.random.Generator(bitgen)


@dataclass(frozen=True)
class GBMParams:
    s0: float
    mu: float
    sigma: float
    r: float

    def __post_init__(self):
        _check_finite(self, ("s0", "mu", "sigma", "r"))
        if self.s0 <= 0:
            raise ValueError("s0 must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


@dataclass(frozen=True)
class SABRParams:
    s0: float
    sigma0: float
    nu: float
    rho: float
    mu: float
    r: float

    def __post_init__(self):
        _check_finite(self, ("s0", "sigma0", "nu", "rho", "mu", "r"))
        if self.s0 <= 0:
            raise ValueError("s0 must be positive")
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        if self.nu < 0:
            raise ValueError("nu must be non-negative")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")

    def with_updates(self, **changes) -> "SABRParams":
        values = dict(s0=self.s0, sigma0=self.sigma0, nu=self.nu,
                      rho=self.rho, mu=self.mu, r=self.r)
        values.update(changes)
        return SABRParams(**values)


def _check_finite(obj, names):
    for name in names:
        if not math.isfinite(getattr(obj, name)):
            raise ValueError(f"{name} must be finite")


@dataclass(frozen=True, eq=False)
class PathSet:
    """Price paths on a uniform grid; ``prices`` has shape (n_paths, n_steps + 1)."""

    times: np.ndarray
    prices: np.ndarray
    vols: np.ndarray | None = None
    seed: int | None = None
    labels: tuple = field(default=())

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        prices = np.atleast_2d(np.asarray(self.prices, dtype=float))
        if times.ndim != 1 or times.size < 2:
            raise ValueError("times must be a 1-D grid with at least two instants")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise ValueError("times must start at 0 and increase strictly")
        if prices.shape[1] != times.size:
            raise ValueError("prices must have one column per time instant")
        if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
            raise ValueError("prices must be finite and positive")
        if self.vols is not None:
            vols = np.atleast_2d(np.asarray(self.vols, dtype=float))
            if vols.shape != prices.shape:
                raise ValueError("vols must match the shape of prices")
            if np.any(vols <= 0):
                raise ValueError("vols must be positive")
            vols.setflags(write=False)
            object.__setattr__(self, "vols", vols)
        times.setflags(write=False)
        prices.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "prices", prices)

    @property
    def n_paths(self) -> int:
        return self.prices.shape[0]

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def path(self, i: int) -> np.ndarray:
        return self.prices[i]

    def vol_path(self, i: int) -> np.ndarray | None:
        return None if self.vols is None else self.vols[i]

    def subset(self, rows) -> "PathSet":
        vols = None if self.vols is None else self.vols[rows]
        return PathSet(self.times, self.prices[rows], vols, self.seed)


def correlated_increments(rho: float, dt: float, z1, z2):
    """Brownian increments (dW, dB) with correlation ``rho`` from two standard normals."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if not (math.isfinite(rho) and math.isfinite(dt)):
        raise ValueError("rho and dt must be finite")
    if not np.all(np.isfinite(z1)) or not np.all(np.isfinite(z2)):
        raise ValueError("normal draws must be finite")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not -1.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [-1, 1]")
    sq = math.sqrt(dt)
    dw = sq * z1
    db = sq * (rho * z1 + math.sqrt(1.0 - rho * rho) * z2)
    if dw.ndim == 0:
        return float(dw), float(db)
    return dw, db


def _grid(n_paths: int, n_steps: int, horizon: float) -> np.ndarray:
    if n_paths < 1 or n_steps < 1:
        raise ValueError("n_paths and n_steps must be at least 1")
    if not (math.isfinite(horizon) and horizon > 0):
        raise ValueError("horizon must be positive")
    return np.linspace(0.0, horizon, n_steps + 1)


def simulate_gbm(params: GBMParams, n_paths: int, n_steps: int, horizon: float,
                 seed: int) -> PathSet:
    times = _grid(n_paths, n_steps, horizon)
    dt = horizon / n_steps
    drift = (params.mu - 0.5 * params.sigma ** 2) * dt
    vol = params.sigma * math.sqrt(dt)
    z = np.empty((n_paths, n_steps))
    for i in range(n_paths):
        z[i] = substream(seed, STREAM_GBM, i).standard_normal(n_steps)
    log_paths = np.cumsum(drift + vol * z, axis=1)
    prices = np.empty((n_paths, n_steps + 1))
    prices[:, 0] = params.s0
    prices[:, 1:] = params.s0 * np.exp(log_paths)
    np.maximum(prices, PRICE_FLOOR, out=prices)
    return PathSet(times, prices, None, seed)


def sabr_step(s, sigma, mu, nu, rho, dt, z1, z2):
    """One Euler step of the stochastic-volatility model; returns (s_next, sigma_next).

    The volatility is updated first and the new level drives the price move.
    """
    dw, db = correlated_increments(rho, dt, z1, z2)
    sigma_next = np.maximum(sigma + nu * sigma * db, VOL_FLOOR)
    s_next = np.maximum(s + mu * s * dt + sigma_next * s * dw, PRICE_FLOOR)
    return s_next, sigma_next


def simulate_sabr(params: SABRParams, n_paths: int, n_steps: int, horizon: float,
                  seed: int) -> PathSet:
    times = _grid(n_paths, n_steps, horizon)
    dt = horizon / n_steps
    z = np.empty((n_paths, 2, n_steps))
    for i in range(n_paths):
        z[i] = substream(seed, STREAM_SABR, i).standard_normal((2, n_steps))
    prices = np.empty((n_paths, n_steps + 1))
    vols = np.empty((n_paths, n_steps + 1))
    prices[:, 0] = params.s0
    vols[:, 0] = params.sigma0
    for k in range(n_steps):
        prices[:, k + 1], vols[:, k + 1] = sabr_step(
            prices[:, k], vols[:, k], params.mu, params.nu, params.rho, dt,
            z[:, 0, k], z[:, 1, k])
    return PathSet(times, prices, vols, seed)


def write_paths_csv(paths: PathSet, file) -> None:
    """Write ``time,path_id,price[,vol]`` rows, path-major."""
    with open(file, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["time", "path_id", "price"]
        if paths.vols is not None:
            header.append("vol")
        writer.writerow(header)
        for i in range(paths.n_paths):
            for k, t in enumerate(paths.times):
                row = [repr(float(t)), i, repr(float(paths.prices[i, k]))]
                if paths.vols is not None:
                    row.append(repr(float(paths.vols[i, k])))
                writer.writerow(row)


def read_paths_csv(file) -> PathSet:
    with open(file, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["time", "path_id", "price"]:
            raise ValueError(f"{file}: expected header time,path_id,price[,vol]")
        has_vol = len(header) > 3 and header[3] == "vol"
        rows: dict[int, list] = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                t, pid, price = float(row[0]), int(row[1]), float(row[2])
                vol = float(row[3]) if has_vol else None
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{file}:{lineno}: malformed row") from exc
            rows.setdefault(pid, []).append((t, price, vol))
    if not rows:
        raise ValueError(f"{file}: no rows")
    ids = sorted(rows)
    times = np.array([t for t, _, _ in rows[ids[0]]])
    prices = np.array([[p for _, p, _ in rows[i]] for i in ids])
    vols = np.array([[v for _, _, v in rows[i]] for i in ids]) if has_vol else None
    return PathSet(times, prices, vols)
