"""Hedging back-tests over path sets.

A strategy holds ``a_t`` shares (``a_t`` in [-1, 0]) against a short put
between rebalance instants.  Everything is vectorised over paths: each
rebalance instant is one array operation across the whole set.

Per path, the final P&L decomposes as::

    premium - terminal_value + gains + interest - tc

where ``premium`` is the pricer value at the start, ``terminal_value`` is the
payoff (at exercise or maturity) or the pricer value at the end of a shorter
horizon, ``gains`` is ``sum a_t (s_{t+1} - s_t)``, ``interest`` is what the
cash account earns at the risk-free rate and ``tc`` is the testing
transaction cost ``lam |a_t - a_{t-1}| s_t``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .analytic import OptionSpec, bs_put_delta, tree_delta
from .market import PathSet

STRATEGY_KINDS = ("agent", "bs_delta", "tree_delta", "constant")
RESULT_FIELDS = ("strategy", "lambda", "rebalance_steps", "n_paths", "mean_pnl", "sd_pnl", "seed")


@dataclass(frozen=True)
class Accounting:
    """Cash-account conventions for the final P&L.

    ``financing`` accrues interest on the cash balance at the risk-free rate.
    ``charge_initial`` applies the testing cost to the trade that opens the
    hedge.  ``unwind`` also charges for closing the stock position at the end.
    """

    financing: bool = True
    charge_initial: bool = True
    unwind: bool = False


@dataclass
class Strategy:
    kind: str
    payload: object = None
    name: str = ""
    r: float = 0.0

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"strategy kind must be one of {STRATEGY_KINDS}")
        if not self.name:
            self.name = self.kind
        if self.kind == "constant" and not -1.0 <= float(self.payload) <= 0.0:
            raise ValueError("constant action must lie in [-1, 0]")

    @classmethod
    def agent(cls, trained, name: str = "agent") -> "Strategy":
        return cls("agent", trained, name)

    @classmethod
    def bs_delta(cls, sigma: float, r: float, name: str = "bs_delta") -> "Strategy":
        return cls("bs_delta", float(sigma), name, float(r))

    @classmethod
    def tree_delta(cls, tree, name: str = "tree_delta") -> "Strategy":
        return cls("tree_delta", tree, name)

    @classmethod
    def constant(cls, action: float, name: str = "") -> "Strategy":
        return cls("constant", float(action), name or f"constant({action:g})")

    def actions(self, spec: OptionSpec, s, tau, holding, t) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.kind == "agent":
            a = self.payload.action(s, tau, holding)
        elif self.kind == "bs_delta":
            a = bs_delta_action(s, spec, self.payload, self.r, tau)
        elif self.kind == "tree_delta":
            a = tree_delta(self.payload, s, t)
        else:
            a = np.full(s.shape, self.payload)
        a = np.asarray(a, dtype=float).reshape(s.shape)
        if np.any(a < -1.0 - 1e-12) or np.any(a > 1e-12) or not np.all(np.isfinite(a)):
            raise RuntimeError(f"strategy {self.name!r} emitted an action outside [-1, 0]")
        return np.clip(a, -1.0, 0.0)


def bs_delta_action(s, spec: OptionSpec, sigma: float, r: float, tau):
    """Black-Scholes put delta as a holding; at expiry -1 in the money, else 0."""
    s = np.asarray(s, dtype=float)
    tau = np.broadcast_to(np.asarray(tau, dtype=float), s.shape)
    out = np.where(s < spec.strike, -1.0, 0.0)
    live = tau > 0
    if np.any(live):
        out = np.array(out, dtype=float)
        out[live] = bs_put_delta(s[live], spec, sigma, r, tau[live])
    out = np.clip(out, -1.0, 0.0)
    return float(out) if out.ndim == 0 else out


def pnl_stats(pnls) -> tuple:
    """(mean, sample standard deviation)."""
    x = np.asarray(pnls, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("no P&L values")
    sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return float(x.mean()), sd


@dataclass
class PnLRecord:
    name: str
    lam: float
    rebalance_steps: int
    pnl: np.ndarray
    exercise_time: np.ndarray
    exercised: np.ndarray
    final_holding: np.ndarray
    components: dict = field(default_factory=dict)
    actions: np.ndarray | None = None
    seed: int | None = None

    @property
    def n_paths(self) -> int:
        return self.pnl.size

    @property
    def stats(self) -> tuple:
        return pnl_stats(self.pnl)

    @property
    def mean(self) -> float:
        return self.stats[0]

    @property
    def sd(self) -> float:
        return self.stats[1]

    def row(self) -> dict:
        mean, sd = self.stats
        return {"strategy": self.name, "lambda": self.lam, "rebalance_steps": self.rebalance_steps,
                "n_paths": self.n_paths, "mean_pnl": mean, "sd_pnl": sd, "seed": self.seed}


def _model_rate(pricer) -> float:
    for owner in (pricer, getattr(pricer, "model", None)):
        r = getattr(owner, "r", None)
        if r is not None:
            return float(r)
    raise ValueError("cannot infer the risk-free rate from the pricer; pass rate=")


def run_hedge_test(strategy: Strategy, paths: PathSet, spec: OptionSpec, pricer, lam: float,
                   rebalance_steps: int | None = None, *, rate: float | None = None,
                   accounting: Accounting = Accounting(), initial_holding=0.0,
                   t0: float = 0.0, keep_actions: bool = False) -> PnLRecord:
    """Hedge every path in ``paths`` and return per-path final P&L.

    Path column ``k`` is the rebalance instant ``t0 + paths.times[k]``.  The
    counterparty exercises when the pricer says so at a rebalance instant
    after the start.  If the last instant is before maturity the option is
    marked to the pricer instead of paid out.
    """
    n = paths.n_steps
    if rebalance_steps is not None and rebalance_steps != n:
        raise ValueError(f"paths have {n} steps, expected {rebalance_steps}")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    r = _model_rate(pricer) if rate is None else float(rate)
    S = paths.prices
    V = paths.vols
    times = t0 + paths.times
    if times[-1] > spec.maturity + 1e-9:
        raise ValueError("paths extend beyond the option maturity")
    n_paths = paths.n_paths
    tgrid = np.broadcast_to(times, S.shape)
    values = np.asarray(pricer.price(S, tgrid, V), dtype=float).reshape(S.shape)
    at_maturity = abs(times[-1] - spec.maturity) < 1e-9
    intrinsic = np.maximum(spec.strike - S, 0.0)
    if at_maturity:
        values[:, -1] = intrinsic[:, -1]
    if spec.american:
        ex = np.asarray(pricer.should_exercise(S, tgrid, V), dtype=bool).reshape(S.shape).copy()
        ex[:, 0] = False
    else:
        ex = np.zeros(S.shape, dtype=bool)

    grow = math.exp(r * (times[1] - times[0])) if accounting.financing else 1.0
    holding = np.broadcast_to(np.asarray(initial_holding, dtype=float), (n_paths,)).copy()
    alive = np.ones(n_paths, dtype=bool)
    premium = values[:, 0].copy()
    # a carried position counts as start-of-segment wealth, so it is netted out here
    cash = premium - holding * S[:, 0]
    gains = np.zeros(n_paths)
    interest = np.zeros(n_paths)
    tc = np.zeros(n_paths)
    streamed = np.zeros(n_paths)
    terminal = np.zeros(n_paths)
    ex_time = np.full(n_paths, times[-1])
    exercised = np.zeros(n_paths, dtype=bool)
    acts = np.full((n_paths, n), np.nan) if keep_actions else None

    for k in range(n):
        s, s1 = S[:, k], S[:, k + 1]
        tau = spec.maturity - times[k]
        a = strategy.actions(spec, s, tau, holding, times[k])
        a = np.where(alive, a, holding)
        if keep_actions:
            acts[alive, k] = a[alive]
        cost = lam * np.abs(a - holding) * s
        if k == 0 and not accounting.charge_initial:
            cost = np.zeros(n_paths)
        cost = np.where(alive, cost, 0.0)
        cash -= np.where(alive, (a - holding) * s, 0.0) + cost
        earned = np.where(alive, cash * (grow - 1.0), 0.0)
        cash += earned
        step_gain = np.where(alive, a * (s1 - s), 0.0)
        gains += step_gain
        interest += earned
        tc += cost
        holding = a
        stop = alive & (ex[:, k + 1] | (k + 1 == n))
        exd = alive & ex[:, k + 1]
        c_next = np.where(exd, intrinsic[:, k + 1], values[:, k + 1])
        streamed += np.where(alive, -(c_next - values[:, k]) + step_gain + earned, 0.0) - cost
        if np.any(stop):
            terminal[stop] = c_next[stop]
            ex_time[exd] = times[k + 1]
            exercised |= exd
            if accounting.unwind:
                close = np.where(stop, lam * np.abs(holding) * s1, 0.0)
                cash -= close
                tc += close
                streamed -= close
            alive &= ~stop

    end_price = S[np.arange(n_paths), np.searchsorted(times, ex_time)]
    pnl = cash + holding * end_price - terminal
    components = {"premium": premium, "terminal_value": terminal, "gains": gains,
                  "interest": interest, "tc": tc, "streamed": streamed}
    return PnLRecord(strategy.name, float(lam), n, pnl, ex_time, exercised, holding,
                     components, acts, paths.seed)


def telescoped_pnl(record: PnLRecord) -> np.ndarray:
    c = record.components
    return c["premium"] - c["terminal_value"] + c["gains"] + c["interest"] - c["tc"]


def compare_report(records, baseline: str = "bs_delta", title: str = "") -> str:
    """Aligned mean/SD table, one row per strategy and one column pair per lambda.

    ``*`` marks a cell whose mean is at least and whose SD is at most the
    baseline's at the same lambda and rebalance count.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to report")
    lams = sorted({r.lam for r in records})
    rows, seen = [], set()
    for rec in records:
        key = (rec.name, rec.rebalance_steps)
        if key not in seen:
            seen.add(key)
            rows.append(key)
    cell = {(r.name, r.rebalance_steps, r.lam): r for r in records}
    header = ["strategy", "steps"]
    for lam in lams:
        header += [f"mean@{lam:g}", f"sd@{lam:g}"]
    table = [header]
    for name, steps in rows:
        line = [name, str(steps)]
        for lam in lams:
            rec = cell.get((name, steps, lam))
            if rec is None:
                line += ["-", "-"]
                continue
            mean, sd = rec.stats
            base = cell.get((baseline, steps, lam))
            mark = ""
            if base is not None and name != baseline:
                bm, bs = base.stats
                if mean >= bm and sd <= bs:
                    mark = "*"
            line += [f"{mean:.2f}{mark}", f"{sd:.2f}"]
        table.append(line)
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    out = [title] if title else []
    for i, line in enumerate(table):
        out.append("  ".join(v.rjust(w) if j > 1 else v.ljust(w)
                             for j, (v, w) in enumerate(zip(line, widths))))
        if i == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out)


def write_results_csv(rows, file, extra_fields=()) -> None:
    fields = list(RESULT_FIELDS) + [f for f in extra_fields if f not in RESULT_FIELDS]
    with open(file, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_results_csv(file) -> list:
    with open(file, newline="") as fh:
        return list(csv.DictReader(fh))


def write_pnl_dump(record: PnLRecord, file) -> None:
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "final_pnl", "exercise_time"])
        for i, (p, t) in enumerate(zip(record.pnl, record.exercise_time)):
            w.writerow([i, repr(float(p)), repr(float(t))])
