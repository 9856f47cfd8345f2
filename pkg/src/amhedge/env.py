"""Episodic environment for hedging a short American put.

The agent holds ``a`` shares (``a`` in [-1, 0]) against one short put.  Each
step the option is revalued with a pricer (a binomial tree or a Chebyshev
surface) and the agent is rewarded with minus the absolute hedge error of
the step, less a transaction-cost penalty on the trade that set up the new
holding.  The counterparty exercises optimally: the episode ends early when
the price reaches the pricer's exercise region at a rebalance instant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .analytic import OptionSpec

PENALTY_KINDS = ("linear", "quadratic")


@dataclass(frozen=True)
class HedgeState:
    s: float
    tau: float
    holding: float
    sigma: float | None = None

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError("price must be positive")
        if self.tau < -1e-12:
            raise ValueError("time to maturity must be non-negative")
        if not -1.0 <= self.holding <= 0.0:
            raise ValueError("holding must lie in [-1, 0]")

    def features(self, spec: OptionSpec) -> np.ndarray:
        """Network input: price/strike, time-to-maturity/maturity, holding."""
        return np.array([self.s / spec.strike, self.tau / spec.maturity, self.holding])


@dataclass(frozen=True)
class RewardConfig:
    penalty_kind: str = "quadratic"
    multiplier: float = 0.005

    def __post_init__(self):
        if self.penalty_kind not in PENALTY_KINDS:
            raise ValueError(f"penalty_kind must be one of {PENALTY_KINDS}")
        if not (self.multiplier >= 0 and math.isfinite(self.multiplier)):
            raise ValueError("multiplier must be non-negative")


@dataclass(frozen=True)
class EpisodeConfig:
    """One hedging episode.

    ``horizon`` defaults to the option maturity; shorter horizons hedge only
    the first part of the option's life and end on the pricer's value.
    ``pricer`` needs ``price(s, t, sigma)`` and ``should_exercise(s, t, sigma)``.
    """

    spec: OptionSpec
    model: object
    steps_per_episode: int
    pricer: object
    reward: RewardConfig = RewardConfig()
    early_exercise: bool = True
    horizon: float | None = None

    def __post_init__(self):
        if self.steps_per_episode < 1:
            raise ValueError("steps_per_episode must be at least 1")
        h = self.spec.maturity if self.horizon is None else self.horizon
        if not 0 < h <= self.spec.maturity + 1e-12:
            raise ValueError("horizon must lie in (0, maturity]")
        object.__setattr__(self, "horizon", float(h))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps_per_episode

    def with_steps(self, n: int) -> "EpisodeConfig":
        return replace(self, steps_per_episode=n)


def tc_penalty(cfg: RewardConfig, a_new, a_prev, s):
    a_new = np.asarray(a_new, dtype=float)
    a_prev = np.asarray(a_prev, dtype=float)
    if np.any(a_new < -1 - 1e-12) or np.any(a_new > 1e-12) \
            or np.any(a_prev < -1 - 1e-12) or np.any(a_prev > 1e-12):
        raise ValueError("actions must lie in [-1, 0]")
    if np.any(np.asarray(s) <= 0):
        raise ValueError("price must be positive")
    move = a_new - a_prev
    if cfg.penalty_kind == "linear":
        out = cfg.multiplier * np.abs(move) * s
    else:
        out = cfg.multiplier * move * move * s
    return float(out) if np.ndim(out) == 0 else out


def hedge_error(c_now, c_next, action, s_now, s_next):
    """Change in (short option + stock) value over one step."""
    return -(c_next - c_now) + action * (s_next - s_now)


def check_exercise(pricer, s, sigma, t) -> bool:
    return pricer.should_exercise(s, t, sigma)


class HedgeEnv:
    """Single-episode state machine over one price path.

    Option values and exercise flags along the path do not depend on the
    agent, so ``reset`` evaluates them for the whole path in one pass.
    """

    def __init__(self, cfg: EpisodeConfig):
        self.cfg = cfg
        self._path = None
        self._k = 0
        self.done = True
        self.state: HedgeState | None = None

    def reset(self, path, vols=None) -> HedgeState:
        cfg = self.cfg
        path = np.asarray(path, dtype=float)
        n = cfg.steps_per_episode
        if path.shape != (n + 1,):
            raise ValueError(f"path must have {n + 1} prices, got {path.shape}")
        if vols is not None:
            vols = np.asarray(vols, dtype=float)
            if vols.shape != path.shape:
                raise ValueError("vol path must match the price path")
        times = np.linspace(0.0, cfg.horizon, n + 1)
        spec = cfg.spec
        values = np.asarray(cfg.pricer.price(path, times, vols), dtype=float)
        if abs(times[-1] - spec.maturity) < 1e-12:
            values[-1] = max(spec.strike - path[-1], 0.0)
        if cfg.early_exercise and spec.american:
            exercised = np.asarray(cfg.pricer.should_exercise(path, times, vols), dtype=bool)
            exercised[0] = False
        else:
            exercised = np.zeros(n + 1, dtype=bool)
        self._path, self._vols, self._times = path, vols, times
        self._values, self._exercised = values, exercised
        self._k = 0
        self.done = False
        self.state = self._make_state(0, 0.0)
        return self.state

    def _make_state(self, k, holding):
        sigma = None if self._vols is None else float(self._vols[k])
        tau = max(self.cfg.spec.maturity - self._times[k], 0.0)
        return HedgeState(float(self._path[k]), tau, float(holding), sigma)

    def option_value(self, k: int) -> float:
        return float(self._values[k])

    def step(self, action: float):
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        action = float(action)
        if not -1.0 - 1e-12 <= action <= 1e-12:
            raise ValueError("action must lie in [-1, 0]")
        action = min(max(action, -1.0), 0.0)
        k = self._k
        s_now, s_next = self._path[k], self._path[k + 1]
        c_now = self._values[k]
        exercised = bool(self._exercised[k + 1])
        if exercised:
            c_next = max(self.cfg.spec.strike - s_next, 0.0)
        else:
            c_next = self._values[k + 1]
        err = hedge_error(c_now, c_next, action, s_now, s_next)
        cost = tc_penalty(self.cfg.reward, action, self.state.holding, s_now)
        reward = -abs(err) - cost
        self._k = k + 1
        self.done = exercised or self._k == self.cfg.steps_per_episode
        self.state = self._make_state(self._k, action)
        info = {"hedge_error": err, "penalty": cost, "exercised": exercised,
                "c_now": c_now, "c_next": c_next, "step": k}
        return self.state, reward, self.done, info
