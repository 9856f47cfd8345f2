"""Fitting the stochastic-volatility model to American put quotes.

The loss is the sum of squared relative pricing errors over one quote
cross-section (one symbol, one date, one expiry).  It is minimised over
(sigma0, nu, rho) with a bounded Nelder-Mead simplex.

Pricing a whole cross-section costs one surface build.  The model is
homogeneous of degree one in (price, strike), so a put struck at K is worth
``K / spot`` times a put struck at the spot evaluated at ``spot**2 / K``.
"""
from __future__ import annotations

import csv
import datetime as dt
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .analytic import OptionSpec
from .chebyshev import ChebGrid, ValueSurface, backward_induce, default_grid
from .market import STREAM_MISC, SABRParams, substream

BOUNDS = ((0.01, 2.0), (0.0, 3.0), (-0.99, 0.99))
PARAM_NAMES = ("sigma0", "nu", "rho")
TRADING_DAYS = 252
MIN_MID = 0.01
QUOTE_FIELDS = ("symbol", "quote_date", "expiry", "strike", "mid", "spot", "rate")


def year_fraction(start: dt.date, end: dt.date) -> float:
    """Trading-day year fraction (weekdays / 252)."""
    return float(np.busday_count(start, end)) / TRADING_DAYS


@dataclass(frozen=True)
class OptionQuote:
    symbol: str
    quote_date: dt.date
    expiry: dt.date
    strike: float
    mid: float
    spot: float
    rate: float

    def __post_init__(self):
        if self.spot <= 0:
            raise ValueError(f"{self.symbol} {self.strike}: spot must be positive")
        if self.strike <= 0:
            raise ValueError(f"{self.symbol} {self.strike}: strike must be positive")
        if self.mid < 0:
            raise ValueError(f"{self.symbol} {self.strike}: negative mid")
        if self.mid < max(self.strike - self.spot, 0.0) - 0.05:
            raise ValueError(f"{self.symbol} {self.strike}: mid below intrinsic value")
        if self.expiry <= self.quote_date:
            raise ValueError(f"{self.symbol} {self.strike}: expiry not after quote date")

    @property
    def maturity(self) -> float:
        return year_fraction(self.quote_date, self.expiry)


def _date(x) -> dt.date:
    return x if isinstance(x, dt.date) else dt.date.fromisoformat(str(x).strip())


def read_quotes_csv(file) -> list:
    out = []
    with open(file, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(QUOTE_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{file}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(OptionQuote(row["symbol"], _date(row["quote_date"]), _date(row["expiry"]),
                                       float(row["strike"]), float(row["mid"]),
                                       float(row["spot"]), float(row["rate"])))
            except ValueError as exc:
                raise ValueError(f"{file}:{lineno}: {exc}") from None
    return out


def write_quotes_csv(quotes, file) -> None:
    with open(file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(QUOTE_FIELDS)
        for q in quotes:
            w.writerow([q.symbol, q.quote_date.isoformat(), q.expiry.isoformat(),
                        repr(q.strike), repr(q.mid), repr(q.spot), repr(q.rate)])


@dataclass(frozen=True)
class PricerSettings:
    """Surface resolution used inside the loss; deliberately light."""

    price_degree: int = 16
    vol_degree: int = 6
    n_time_steps: int = 12
    mc_per_node: int = 300
    seed: int = 7


def _usable(quotes) -> list:
    quotes = list(quotes)
    kept = [q for q in quotes if q.mid >= MIN_MID]
    if len(kept) < len(quotes):
        dropped = ", ".join(f"{q.strike:g}" for q in quotes if q.mid < MIN_MID)
        warnings.warn(f"ignoring quotes with mid below {MIN_MID}: strikes {dropped}", stacklevel=3)
    if len(kept) < 2:
        raise ValueError("calibration needs at least two usable quotes")
    first = kept[0]
    for q in kept[1:]:
        if (q.expiry, q.spot, q.quote_date, q.rate) != (first.expiry, first.spot,
                                                        first.quote_date, first.rate):
            raise ValueError("quotes must share quote date, expiry, spot and rate")
    return kept


def _pricing_model(x, spot, rate) -> SABRParams:
    sigma0, nu, rho = x
    return SABRParams(s0=spot, sigma0=sigma0, nu=nu, rho=rho, mu=rate, r=rate)


def build_quote_surface(x, spot: float, rate: float, maturity: float, strikes,
                        settings: PricerSettings = PricerSettings()) -> ValueSurface:
    """Surface struck at ``spot`` whose price axis covers every quoted moneyness."""
    model = _pricing_model(x, spot, rate)
    spec = OptionSpec(spot, maturity)
    grid = default_grid(model, spec, settings.price_degree, settings.vol_degree)
    query = spot * spot / np.asarray(strikes, dtype=float)
    (lo, hi), vol_axis = grid.bounds
    lo = min(lo, 0.8 * query.min())
    hi = max(hi, 1.25 * query.max())
    grid = ChebGrid(((lo, hi), vol_axis), grid.degrees)
    return backward_induce(model, spec, grid, settings.n_time_steps,
                           settings.mc_per_node, settings.seed)


def model_prices(x, quotes, settings: PricerSettings = PricerSettings()):
    """Model prices for a quote cross-section under ``x = (sigma0, nu, rho)``."""
    q0 = quotes[0]
    strikes = np.array([q.strike for q in quotes])
    surface = build_quote_surface(x, q0.spot, q0.rate, q0.maturity, strikes, settings)
    s_query = q0.spot * q0.spot / strikes
    scaled = surface.price(s_query, 0.0, np.full_like(s_query, x[0]))
    return strikes / q0.spot * np.asarray(scaled), surface


def calibration_loss(params, quotes, settings: PricerSettings = PricerSettings()) -> float:
    """Sum of squared relative errors of model prices against mids."""
    quotes = _usable(quotes)
    x = _as_vector(params)
    prices, _ = model_prices(x, quotes, settings)
    mids = np.array([q.mid for q in quotes])
    return float(np.sum(((prices - mids) / mids) ** 2))


def _as_vector(params) -> tuple:
    if isinstance(params, SABRParams):
        return (params.sigma0, params.nu, params.rho)
    return tuple(float(v) for v in params)


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    iterations: int
    evaluations: int
    improvements: int
    converged: bool


def _project(x, bounds):
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return np.clip(x, lo, hi)


def simplex_search(loss, x0, bounds=BOUNDS, max_iters: int = 200, tolerance: float = 1e-4,
                   f_tolerance: float = 1e-8, step=None) -> SimplexResult:
    """Bounded Nelder-Mead; every trial point is clipped into ``bounds`` before evaluation.

    Stops when the simplex diameter falls below ``tolerance`` or the spread
    of vertex values below ``f_tolerance``.
    """
    x0 = _project(np.asarray(x0, dtype=float), bounds)
    n = x0.size
    if len(bounds) != n:
        raise ValueError("one (low, high) pair per parameter")
    widths = np.array([hi - lo for lo, hi in bounds])
    step = 0.05 * widths if step is None else np.broadcast_to(np.asarray(step, float), (n,))
    evals = 0

    def f(x):
        nonlocal evals
        evals += 1
        return float(loss(x))

    verts = [x0]
    for i in range(n):
        v = x0.copy()
        v[i] += step[i]
        if v[i] > bounds[i][1]:
            v[i] = x0[i] - step[i]
        verts.append(_project(v, bounds))
    verts = np.array(verts)
    vals = np.array([f(v) for v in verts])
    best = vals.min()
    improvements = 0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        order = np.argsort(vals, kind="stable")
        verts, vals = verts[order], vals[order]
        diameter = np.max(np.abs(verts[1:] - verts[0]))
        if diameter < tolerance or vals[-1] - vals[0] < f_tolerance:
            converged = True
            it -= 1
            break
        centroid = verts[:-1].mean(axis=0)
        xr = _project(centroid + (centroid - verts[-1]), bounds)
        fr = f(xr)
        if fr < vals[0]:
            xe = _project(centroid + 2.0 * (centroid - verts[-1]), bounds)
            fe = f(xe)
            verts[-1], vals[-1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < vals[-2]:
            verts[-1], vals[-1] = xr, fr
        else:
            if fr < vals[-1]:
                xc = _project(centroid + 0.5 * (xr - centroid), bounds)     # outside
                fc = f(xc)
                accept = fc <= fr
            else:
                xc = _project(centroid + 0.5 * (verts[-1] - centroid), bounds)  # inside
                fc = f(xc)
                accept = fc < vals[-1]
            if accept:
                verts[-1], vals[-1] = xc, fc
            else:
                for j in range(1, n + 1):
                    verts[j] = _project(verts[0] + 0.5 * (verts[j] - verts[0]), bounds)
                    vals[j] = f(verts[j])
        if vals.min() < best:
            best = vals.min()
            improvements += 1
    else:
        order = np.argsort(vals, kind="stable")
        verts, vals = verts[order], vals[order]
    return SimplexResult(verts[0].copy(), float(vals[0]), it, evals, improvements, converged)


@dataclass
class CalibrationResult:
    params: SABRParams
    objective: float
    residuals: list
    iterations: int
    converged: bool
    starts: list = field(default_factory=list)
    symbol: str = ""
    quote_date: str = ""
    surface: ValueSurface | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"symbol": self.symbol, "quote_date": self.quote_date,
                "params": asdict(self.params), "objective": self.objective,
                "residuals": self.residuals, "iterations": self.iterations,
                "converged": self.converged, "starts": self.starts}

    def save(self, file) -> None:
        with open(file, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, file) -> "CalibrationResult":
        with open(file) as fh:
            d = json.load(fh)
        return cls(SABRParams(**d["params"]), d["objective"], d["residuals"], d["iterations"],
                   d["converged"], d.get("starts", []), d.get("symbol", ""),
                   d.get("quote_date", ""))


def initial_guess(quotes) -> tuple:
    """Start at the Black-Scholes implied vol of the quote nearest the money."""
    from .analytic import bs_put_price

    q = min(quotes, key=lambda q: abs(q.strike - q.spot))
    spec = OptionSpec(q.strike, q.maturity, style="european")

    def gap(v):
        return bs_put_price(q.spot, spec, v, q.rate, q.maturity) - q.mid

    lo, hi = BOUNDS[0]
    if gap(lo) >= 0 or gap(hi) <= 0:
        sigma0 = 0.3
    else:
        sigma0 = brentq(gap, lo, hi, xtol=1e-6)
    return (sigma0, 0.2, 0.0)


def calibrate(quotes, initial=None, settings: PricerSettings = PricerSettings(),
              n_starts: int = 3, max_iters: int = 150, tolerance: float = 1e-4,
              restarts: int = 2, jitter_seed: int = 0) -> CalibrationResult:
    """Multi-start bounded simplex fit of (sigma0, nu, rho), drift pinned to the rate.

    The first start is ``initial`` (by default the ATM implied vol with a
    small vol-of-vol); the rest are jittered copies.  The best end point is
    then re-polished with fresh simplices up to ``restarts`` times, which
    frees searches that collapsed against a bound.  A non-converged best
    fit is flagged and warned about.
    """
    quotes = _usable(quotes)
    mids = np.array([q.mid for q in quotes])

    def loss(x):
        prices, _ = model_prices(x, quotes, settings)
        return float(np.sum(((prices - mids) / mids) ** 2))

    rng = substream(jitter_seed, STREAM_MISC, 99)
    x0 = _project(np.array(_as_vector(initial_guess(quotes) if initial is None else initial)),
                  BOUNDS)
    widths = np.array([hi - lo for lo, hi in BOUNDS])
    starts = [x0] + [_project(x0 + 0.1 * widths * rng.uniform(-1, 1, 3), BOUNDS)
                     for _ in range(n_starts - 1)]
    runs = [simplex_search(loss, s, BOUNDS, max_iters, tolerance) for s in starts]
    best = min(runs, key=lambda res: res.fun)
    iterations = sum(r.iterations for r in runs)
    for _ in range(restarts):
        again = simplex_search(loss, best.x, BOUNDS, max_iters, tolerance)
        iterations += again.iterations
        if again.fun >= best.fun - 1e-12:
            break
        best = again
    q0 = quotes[0]
    params = _pricing_model(best.x, q0.spot, q0.rate)
    prices, surface = model_prices(best.x, quotes, settings)
    residuals = [{"strike": q.strike, "model": float(p), "market": q.mid,
                  "rel_error": float((p - q.mid) / q.mid)} for q, p in zip(quotes, prices)]
    if not best.converged:
        warnings.warn(f"{q0.symbol} {q0.quote_date}: calibration did not converge "
                      f"in {max_iters} iterations (loss {best.fun:.3g})", stacklevel=2)
    start_log = [{"start": [float(v) for v in s], "end": [float(v) for v in r.x],
                  "loss": r.fun, "iterations": r.iterations, "converged": r.converged}
                 for s, r in zip(starts, runs)]
    return CalibrationResult(params, best.fun, residuals, iterations, best.converged,
                             start_log, q0.symbol, q0.quote_date.isoformat(), surface)


def synthetic_quotes(x, symbol: str, quote_date: dt.date, expiry: dt.date, strikes,
                     spot: float, rate: float, settings: PricerSettings = PricerSettings()) -> list:
    """Quotes priced by the model itself at ``x = (sigma0, nu, rho)``."""
    maturity = year_fraction(quote_date, expiry)
    strikes = np.asarray(strikes, dtype=float)
    surface = build_quote_surface(_as_vector(x), spot, rate, maturity, strikes, settings)
    s_query = spot * spot / strikes
    prices = strikes / spot * np.asarray(surface.price(s_query, 0.0, np.full_like(s_query, x[0])))
    return [OptionQuote(symbol, quote_date, expiry, float(k), float(p), spot, rate)
            for k, p in zip(strikes, prices)]
