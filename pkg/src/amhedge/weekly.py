"""Weekly recalibrate-and-retrain hedging of realized price paths.

Each schedule date gets its own calibrated SABR fit, a value surface
struck at that day's spot (re-scaled per strike) and one agent per strike
trained to hedge until the next date.  The realized path is then hedged
once, end to end, with the position carried across week boundaries.
"""
from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .analytic import OptionSpec
from .calibration import (PricerSettings, build_quote_surface, calibrate, read_quotes_csv,
                          synthetic_quotes, write_quotes_csv)
from .chebyshev import StrikeScaledSurface
from .config import Config
from .ddpg import TrainedAgent, train
from .env import EpisodeConfig, HedgeEnv
from .evaluation import bs_delta_action
from .experiments import agent_config, reward_config
from .market import simulate_sabr

TRADING_DAYS = 252
STRATEGIES = ("bs_delta", "weekly_retrain", "single_train")
STRATEGY_TITLES = {"bs_delta": "Delta (Weekly Re-Cal)", "weekly_retrain": "DRL (Weekly Re-train)",
                   "single_train": "DRL (Train Once)"}


class WeeklyInputError(ValueError):
    pass


# ---------------------------------------------------------------- data

@dataclass(frozen=True)
class EmpiricalPaths:
    dates: tuple
    prices: dict            # symbol -> np.ndarray aligned with dates

    @property
    def symbols(self) -> tuple:
        return tuple(self.prices)

    def index(self, day: dt.date) -> int:
        try:
            return self.dates.index(day)
        except ValueError:
            raise WeeklyInputError(f"{day} is not a trading date in the path file") from None


def _open_data(file, name):
    if file:
        return open(file, newline="")
    return resources.files("amhedge.data").joinpath(name).open(newline="")


def load_paths(file=None) -> EmpiricalPaths:
    """Read a ``date,SYM1,SYM2,...`` CSV; the bundled realized paths by default."""
    with _open_data(file, "realized_paths.csv") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise WeeklyInputError("path file is empty")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0].lower() != "date":
        raise WeeklyInputError("path file must start with a date column and one column per symbol")
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if not body:
        raise WeeklyInputError("path file has no data rows")
    dates, cols = [], [[] for _ in header[1:]]
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise WeeklyInputError(f"row {lineno}: expected {len(header)} cells, got {len(row)}")
        try:
            dates.append(dt.date.fromisoformat(row[0].strip()))
        except ValueError:
            raise WeeklyInputError(f"row {lineno}: bad date {row[0]!r}") from None
        for j, cell in enumerate(row[1:]):
            try:
                v = float(cell)
            except ValueError:
                raise WeeklyInputError(f"row {lineno}, {header[j + 1]}: "
                                       f"non-numeric price {cell!r}") from None
            if not math.isfinite(v) or v <= 0:
                raise WeeklyInputError(f"row {lineno}, {header[j + 1]}: price must be positive")
            cols[j].append(v)
    if any(b <= a for a, b in zip(dates, dates[1:])):
        raise WeeklyInputError("path dates must increase strictly")
    return EmpiricalPaths(tuple(dates), {s: np.array(c) for s, c in zip(header[1:], cols)})


def load_strikes(file=None) -> dict:
    """``symbol,strike`` rows grouped per symbol, file order kept."""
    out = {}
    with _open_data(file, "strikes.csv") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                out.setdefault(row["symbol"].strip(), []).append(float(row["strike"]))
            except (KeyError, TypeError, ValueError):
                raise WeeklyInputError(f"strike file row {lineno} is malformed") from None
    return out


# ---------------------------------------------------------------- schedule

@dataclass(frozen=True)
class WeeklySchedule:
    symbol: str
    dates: tuple
    expiry: dt.date
    horizons: tuple                 # trading days hedged from each date
    quote_files: tuple = ()

    def __post_init__(self):
        if not self.dates:
            raise ValueError("schedule needs at least one date")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("schedule dates must increase strictly")
        if len(self.horizons) != len(self.dates) or min(self.horizons) < 1:
            raise ValueError("one positive horizon per date is required")

    @classmethod
    def build(cls, symbol, dates, expiry, paths: EmpiricalPaths, quotes_dir=None):
        dates = tuple(sorted(dates))
        stops = [paths.index(d) for d in dates] + [paths.index(expiry)]
        horizons = tuple(b - a for a, b in zip(stops, stops[1:]))
        files = ()
        if quotes_dir is not None:
            files = tuple(Path(quotes_dir) / quote_file_name(d) for d in dates)
        return cls(symbol, dates, expiry, horizons, files)

    def missing_quotes(self) -> list:
        return [str(f) for f in self.quote_files if not Path(f).exists()]


def quote_file_name(day: dt.date) -> str:
    return f"quotes_{day.isoformat()}.csv"


def write_synthetic_quotes(out_dir, paths: EmpiricalPaths, strikes: dict, dates, expiry,
                           rate: float, params=(0.3, 0.5, -0.5),
                           settings: PricerSettings = PricerSettings()) -> list:
    """One quote file per date priced by a known SABR model at each day's spot."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for day in dates:
        quotes = []
        for sym, ks in strikes.items():
            if sym not in paths.prices:
                continue
            spot = float(paths.prices[sym][paths.index(day)])
            quotes += synthetic_quotes(params, sym, day, expiry, ks, spot, rate, settings)
        file = out_dir / quote_file_name(day)
        write_quotes_csv(quotes, file)
        files.append(file)
    return files


# ---------------------------------------------------------------- pipeline

@dataclass
class WeekModel:
    day: dt.date
    spot: float
    maturity: float                 # years from this date to expiry
    calibration: object
    surface: object                 # spot-struck surface

    @property
    def sigma0(self) -> float:
        return self.calibration.params.sigma0


@dataclass
class WeeklyResult:
    symbol: str
    strike: float
    lam: float
    pnl: dict                       # strategy -> final P&L
    log: dict = field(default_factory=dict)     # strategy -> per-day rows


def _settings(cfg: Config) -> tuple:
    c, w = cfg["calibration"], cfg["weekly"]
    fit = PricerSettings(c["price_degree"], c["vol_degree"], c["time_steps"], c["mc_per_node"],
                         c["seed"])
    hedge = PricerSettings(w["surface_price_degree"], w["surface_vol_degree"], c["time_steps"],
                           w["surface_mc_per_node"], c["seed"])
    return fit, hedge


def fit_week(cfg: Config, schedule: WeeklySchedule, j: int, strikes, spot: float,
             progress=None) -> WeekModel:
    fit, hedge = _settings(cfg)
    c = cfg["calibration"]
    quotes = [q for q in read_quotes_csv(schedule.quote_files[j]) if q.symbol == schedule.symbol]
    if not quotes:
        raise WeeklyInputError(f"{schedule.quote_files[j]} has no quotes for {schedule.symbol}")
    res = calibrate(quotes, settings=fit, n_starts=c["starts"], max_iters=c["max_iters"],
                    tolerance=c["tolerance"], restarts=c["restarts"])
    day = schedule.dates[j]
    maturity = quotes[0].maturity
    x = (res.params.sigma0, res.params.nu, res.params.rho)
    surface = build_quote_surface(x, spot, quotes[0].rate, maturity, strikes, hedge)
    if progress:
        progress(f"{schedule.symbol} {day}: sigma0={x[0]:.4f} nu={x[1]:.4f} rho={x[2]:.4f} "
                 f"loss={res.objective:.3g}")
    return WeekModel(day, spot, maturity, res, surface)


def train_week_agent(cfg: Config, week: WeekModel, strike: float, days: int,
                     seed_offset: int = 0) -> TrainedAgent:
    """Agent for one strike hedging ``days`` trading days under the week's fit."""
    pricer = StrikeScaledSurface(week.surface, strike)
    spec = pricer.spec
    model = week.calibration.params.with_updates(s0=week.spot)
    local = cfg.with_overrides([f"agent.steps_per_training_episode={days}",
                                f"agent.training_paths={cfg['weekly']['training_paths']}",
                                f"agent.seed={cfg['agent']['seed'] + seed_offset}"])
    acfg = agent_config(local)
    a = local["agent"]
    env = HedgeEnv(EpisodeConfig(spec, model, days, pricer, reward_config(local), a["early_exercise"],
                                 horizon=days / TRADING_DAYS))
    n_paths = min(a["training_paths"], acfg.episodes)
    paths = simulate_sabr(model, n_paths, days, days / TRADING_DAYS,
                          a["training_data_seed"] + acfg.seed)
    agent, _ = train(env, acfg, paths, f"SABR fit {week.day} n={n_paths} days={days}")
    agent.provenance.update(local.provenance())
    return agent


def hedge_realized(prices, weeks, horizons, strike: float, lam: float, rate: float,
                   actor) -> tuple:
    """Hedge one realized path across all weeks with a single carried position.

    ``actor(j, s, tau, holding)`` returns the hedge for week ``j``.  The
    premium comes from the first week's surface; exercise is checked each
    day after the sale against that week's surface.  Returns (P&L, log).
    """
    dt_day = 1.0 / TRADING_DAYS
    grow = math.exp(rate * dt_day)
    pricers = [StrikeScaledSurface(w.surface, strike) for w in weeks]
    s0 = float(prices[0])
    premium = float(pricers[0].price(s0, 0.0, weeks[0].sigma0))
    cash, holding = premium, 0.0
    log = []
    day = 0
    payoff = None
    for j, (week, days) in enumerate(zip(weeks, horizons)):
        for k in range(days):
            s = float(prices[day])
            tau = week.maturity - k * dt_day
            a = float(actor(j, s, tau, holding))
            cost = lam * abs(a - holding) * s
            cash -= (a - holding) * s + cost
            cash *= grow
            row = {"day": day, "week": j, "spot": s, "holding_in": holding, "holding_out": a,
                   "cost": cost}
            holding = a
            day += 1
            s1 = float(prices[day])
            t_next = (k + 1) * dt_day
            last = day == len(prices) - 1
            if last:
                payoff = max(strike - s1, 0.0)
            elif k + 1 < days and bool(pricers[j].should_exercise(s1, t_next, week.sigma0)):
                payoff = max(strike - s1, 0.0)
            elif k + 1 == days and bool(pricers[j + 1].should_exercise(s1, 0.0,
                                                                     weeks[j + 1].sigma0)):
                payoff = max(strike - s1, 0.0)
            row["exercised"] = payoff is not None and not last
            log.append(row)
            if payoff is not None:
                check_holding_continuity(log)
                return cash + holding * s1 - payoff, log
    raise RuntimeError("hedge ended before the final trading date")


def check_holding_continuity(log) -> None:
    """Each day, and in particular each week's first day, starts from the previous close."""
    for prev, row in zip(log, log[1:]):
        if row["holding_in"] != prev["holding_out"]:
            raise AssertionError(f"holding jumped from {prev['holding_out']} to "
                                 f"{row['holding_in']} on day {row['day']} (week {row['week']})")


def run_weekly(cfg: Config, symbol: str, paths: EmpiricalPaths, strikes, quotes_dir,
               lambdas=None, progress=None) -> list:
    w = cfg["weekly"]
    dates = tuple(dt.date.fromisoformat(d) for d in w["dates"])
    expiry = dt.date.fromisoformat(w["expiry"])
    schedule = WeeklySchedule.build(symbol, dates, expiry, paths, quotes_dir)
    missing = schedule.missing_quotes()
    if missing:
        raise WeeklyInputError("missing quote files for the schedule:\n  " + "\n  ".join(missing))
    prices = paths.prices[symbol][paths.index(dates[0]):paths.index(expiry) + 1]
    weeks = [fit_week(cfg, schedule, j, strikes, float(paths.prices[symbol][paths.index(d)]),
                      progress)
             for j, d in enumerate(dates)]
    total_days = sum(schedule.horizons)
    results = []
    for strike in strikes:
        weekly_agents = [train_week_agent(cfg, wk, strike, h, j)
                         for j, (wk, h) in enumerate(zip(weeks, schedule.horizons))]
        single = weekly_agents[0] if len(weeks) == 1 else \
            train_week_agent(cfg, weeks[0], strike, total_days, 100)
        spec = OptionSpec(strike, weeks[0].maturity)
        actors = {
            "bs_delta": lambda j, s, tau, h: bs_delta_action(
                s, spec, weeks[j].sigma0, weeks[j].calibration.params.r, tau),
            "weekly_retrain": lambda j, s, tau, h: weekly_agents[j].action(s, tau, h)[0],
            "single_train": lambda j, s, tau, h: single.action(s, tau, h)[0],
        }
        for lam in (lambdas or w["lambdas"]):
            pnl, logs = {}, {}
            for name in STRATEGIES:
                pnl[name], logs[name] = hedge_realized(prices, weeks, schedule.horizons, strike,
                                                       lam, w["rate"], actors[name])
            results.append(WeeklyResult(symbol, strike, lam, pnl, logs))
        if progress:
            progress(f"{symbol} K={strike:g} done")
    return results


# ---------------------------------------------------------------- reports

def _money(x: float) -> str:
    return f"-${-x:.2f}" if x < 0 else f"${x:.2f}"


def weekly_table(results) -> str:
    """Strike-averaged final P&L per symbol and cost rate; best strategy starred."""
    lines = []
    widths = (8,) + (24,) * len(STRATEGIES)
    head = ["Symbol"] + [STRATEGY_TITLES[s] for s in STRATEGIES]
    for lam in sorted({r.lam for r in results}):
        lines.append(f"lambda = {lam:.0%}")
        lines.append("".join(h.ljust(w) for h, w in zip(head, widths)))
        for sym in dict.fromkeys(r.symbol for r in results):
            part = [r for r in results if r.symbol == sym and r.lam == lam]
            means = [float(np.mean([r.pnl[s] for r in part])) for s in STRATEGIES]
            best = int(np.argmax(means))
            cells = [_money(m) + ("*" if i == best else "") for i, m in enumerate(means)]
            lines.append("".join(c.ljust(w) for c, w in zip([sym] + cells, widths)))
    return "\n".join(lines)


def strike_table(results) -> str:
    """One line per option and cost rate."""
    head = ["Symbol", "TC Rate", "Strike"] + [STRATEGY_TITLES[s] for s in STRATEGIES]
    widths = (8, 9, 8) + (24,) * len(STRATEGIES)
    lines = ["".join(h.ljust(w) for h, w in zip(head, widths))]
    for r in sorted(results, key=lambda r: (r.symbol, r.lam, r.strike)):
        cells = [r.symbol, f"{r.lam:.0%}", f"{r.strike:g}"] + [_money(r.pnl[s]) for s in STRATEGIES]
        lines.append("".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines)


def write_weekly_csv(results, file) -> None:
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["symbol", "lambda", "strike"] + list(STRATEGIES))
        for r in results:
            w.writerow([r.symbol, r.lam, r.strike] + [r.pnl[s] for s in STRATEGIES])


def write_hedge_log(results, file) -> None:
    fields = ("symbol", "strike", "lambda", "strategy", "day", "week", "spot", "holding_in",
              "holding_out", "cost", "exercised")
    with open(file, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in results:
            for name, rows in r.log.items():
                for row in rows:
                    w.writerow({"symbol": r.symbol, "strike": r.strike, "lambda": r.lam,
                                "strategy": name, **row})
