import datetime as dt
import warnings

import numpy as np
import pytest

from amhedge.calibration import (BOUNDS, CalibrationResult, OptionQuote, PricerSettings, calibrate,
                                 calibration_loss, initial_guess, read_quotes_csv,
                                 simplex_search, synthetic_quotes, write_quotes_csv,
                                 year_fraction)

D0, D1 = dt.date(2021, 3, 1), dt.date(2021, 9, 1)
STRIKES = [90.0, 95.0, 100.0, 105.0, 110.0]
TRUTH = (0.2, 0.5, -0.5)


@pytest.fixture(scope="module")
def quotes():
    return synthetic_quotes(TRUTH, "XYZ", D0, D1, STRIKES, 100.0, 0.01)


def test_year_fraction_counts_weekdays():
    assert year_fraction(dt.date(2021, 3, 1), dt.date(2021, 4, 2)) == pytest.approx(24 / 252)
    assert year_fraction(dt.date(2021, 3, 5), dt.date(2021, 3, 8)) == pytest.approx(1 / 252)


def test_quote_validation():
    with pytest.raises(ValueError):
        OptionQuote("X", D0, D1, 100.0, 1.0, 0.0, 0.01)
    with pytest.raises(ValueError):
        OptionQuote("X", D0, D1, 120.0, 10.0, 100.0, 0.01)    # below intrinsic
    OptionQuote("X", D0, D1, 120.0, 19.96, 100.0, 0.01)       # inside the slack


def test_quotes_csv_round_trip(tmp_path, quotes):
    write_quotes_csv(quotes, tmp_path / "q.csv")
    assert read_quotes_csv(tmp_path / "q.csv") == quotes
    (tmp_path / "bad.csv").write_text("symbol,strike\nX,1\n")
    with pytest.raises(ValueError, match="missing columns"):
        read_quotes_csv(tmp_path / "bad.csv")


def test_bowl_recovers_minimum():
    target = np.array([0.4, 1.2, -0.3])
    res = simplex_search(lambda x: float(np.sum((x - target) ** 2)), (1.0, 2.0, 0.5),
                         max_iters=2000, tolerance=1e-7, f_tolerance=1e-14)
    assert res.converged
    assert np.allclose(res.x, target, atol=1e-4)


def test_start_at_minimum_has_no_improvements():
    target = np.array([0.4, 1.2, -0.3])
    res = simplex_search(lambda x: float(np.sum((x - target) ** 2)), target,
                         step=1e-6, f_tolerance=1e-8)
    assert res.improvements == 0 and res.converged
    assert np.array_equal(res.x, target)


def test_never_evaluates_outside_bounds():
    seen = []

    def loss(x):
        seen.append(np.array(x))
        return float(np.sum((x - np.array([-5.0, 10.0, 3.0])) ** 2))

    res = simplex_search(loss, (1.0, 1.0, 0.0), max_iters=300)
    pts = np.array(seen)
    lo = np.array([b[0] for b in BOUNDS])
    hi = np.array([b[1] for b in BOUNDS])
    assert np.all(pts >= lo) and np.all(pts <= hi)
    assert np.allclose(res.x, [0.01, 3.0, 0.99], atol=1e-3)


def test_max_iters_exhaustion():
    res = simplex_search(lambda x: float(np.sum(x ** 2)), (1.5, 2.5, 0.9), max_iters=3)
    assert not res.converged and res.iterations == 3


def test_loss_round_trip_and_monotone(quotes):
    assert calibration_loss(TRUTH, quotes) < 1e-4
    shifted = [OptionQuote(q.symbol, q.quote_date, q.expiry, q.strike, 2 * q.mid, q.spot, q.rate)
               for q in quotes]
    further = [OptionQuote(q.symbol, q.quote_date, q.expiry, q.strike, 3 * q.mid, q.spot, q.rate)
               for q in quotes]
    assert calibration_loss(TRUTH, quotes) < calibration_loss(TRUTH, shifted) < \
        calibration_loss(TRUTH, further)


def test_loss_is_deterministic(quotes):
    assert calibration_loss((0.3, 0.2, 0.1), quotes) == calibration_loss((0.3, 0.2, 0.1), quotes)


def test_loss_input_checks(quotes):
    with pytest.raises(ValueError):
        calibration_loss(TRUTH, quotes[:1])
    cheap = [OptionQuote("XYZ", D0, D1, 40.0, 0.001, 100.0, 0.01)]
    with pytest.warns(UserWarning, match="ignoring"):
        calibration_loss(TRUTH, quotes + cheap)
    other = [OptionQuote("XYZ", D0, dt.date(2021, 12, 1), 100.0, 5.0, 100.0, 0.01)]
    with pytest.raises(ValueError, match="share"):
        calibration_loss(TRUTH, quotes[:2] + other)


def test_initial_guess_is_atm_implied_vol(quotes):
    sigma0, nu, rho = initial_guess(quotes)
    assert 0.15 < sigma0 < 0.25 and (nu, rho) == (0.2, 0.0)


def test_warm_start(quotes, tmp_path):
    res = calibrate(quotes, initial=TRUTH, n_starts=1, restarts=0)
    assert res.converged and res.objective < 1e-4
    assert res.iterations <= 150
    assert res.params.mu == res.params.r == 0.01
    res.save(tmp_path / "c.json")
    back = CalibrationResult.load(tmp_path / "c.json")
    assert back.objective == res.objective and len(back.residuals) == 5
    recomputed = sum(r["rel_error"] ** 2 for r in back.residuals)
    assert recomputed == pytest.approx(back.objective, rel=1e-9, abs=1e-15)


def test_degenerate_nu_zero():
    q = synthetic_quotes((0.25, 0.0, 0.0), "XYZ", D0, D1, STRIKES, 100.0, 0.01)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = calibrate(q)
    assert res.params.nu < 0.05
    assert res.params.sigma0 == pytest.approx(0.25, abs=0.01)
    first = res.starts[0]
    assert res.objective <= first["loss"]
    lo = np.array([b[0] for b in BOUNDS])
    hi = np.array([b[1] for b in BOUNDS])
    x = np.array([res.params.sigma0, res.params.nu, res.params.rho])
    assert np.all(x >= lo) and np.all(x <= hi)


def test_settings_are_light_by_default():
    s = PricerSettings()
    assert s.price_degree <= 20 and s.mc_per_node <= 500
