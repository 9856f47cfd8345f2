"""Acceptance criteria 1 to 9.

Each test records one ``PASS`` or ``FAIL`` line, printed in the terminal
summary.  Thresholds are fixed in advance; nothing here is tuned to make
a line pass.
"""
import csv
import datetime as dt
import math
import time

import numpy as np
import pytest

from amhedge.analytic import OptionSpec, bs_put_delta, bs_put_price, build_tree
from amhedge.calibration import calibrate, synthetic_quotes
from amhedge.chebyshev import backward_induce, default_grid
from amhedge.cli import main
from amhedge.config import load_config
from amhedge.ddpg import TrainingDiverged
from amhedge.evaluation import Accounting, Strategy, run_hedge_test, telescoped_pnl
from amhedge.experiments import train_from_config
from amhedge.market import GBMParams, correlated_increments, simulate_gbm, substream
from amhedge.nn import MLP, soft_update
from conftest import EURO_ATM, EURO_ATM_DELTA, bs_put_oracle, crr_oracle

SPEC = OptionSpec(100.0, 1.0)
GBM = GBMParams(100.0, 0.05, 0.2, 0.05)
TEST_PATHS = 10_000
TEST_SEED = 2024
LINES = {}


def record(n, ok, detail):
    LINES[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


@pytest.fixture(scope="module")
def test_sets():
    return {n: simulate_gbm(GBM, TEST_PATHS, n, 1.0, TEST_SEED) for n in (52, 104, 252)}


def bs_stats(test_sets, base_tree, steps, lam):
    rec = run_hedge_test(Strategy.bs_delta(0.2, 0.05), test_sets[steps], SPEC, base_tree, lam)
    return rec.stats, rec


# ---------------------------------------------------------------- 1, 2

BS_REFERENCE = {(0.01, 52): (-2.34, 1.21), (0.01, 104): (-3.16, 1.21), (0.01, 252): (-4.71, 1.71),
                (0.03, 52): (-6.10, 2.36), (0.03, 104): (-8.59, 3.37), (0.03, 252): (-13.14, 5.49)}


def test_criterion_1_bs_delta_table(test_sets, base_tree):
    t0 = time.time()
    misses = []
    for (lam, steps), (m_ref, sd_ref) in BS_REFERENCE.items():
        (m, sd), _ = bs_stats(test_sets, base_tree, steps, lam)
        if abs(m - m_ref) > 0.35 or abs(sd - sd_ref) > 0.35:
            misses.append(f"{lam:.0%}/{steps}: {m:.2f}/{sd:.2f} vs {m_ref}/{sd_ref}")
    elapsed = time.time() - t0
    ok = not misses and elapsed < 60
    record(1, ok, f"{6 - len(misses)}/6 cells within 0.35, {elapsed:.0f}s"
           + (f"; off: {'; '.join(misses)}" if misses else ""))
    assert ok, misses


def test_criterion_2_zero_cost_unbiased(test_sets, base_tree):
    (m, sd), rec = bs_stats(test_sets, base_tree, 252, 0.0)
    se = sd / math.sqrt(rec.n_paths)
    ok = abs(m) <= 3 * se
    record(2, ok, f"mean {m:.4f}, 3 SE {3 * se:.4f}")
    assert ok


# ---------------------------------------------------------------- 3

def test_criterion_3_chebyshev_vs_tree(base_tree):
    surf = backward_induce(GBM, SPEC, default_grid(GBM, SPEC), 100, 2000, seed=0)
    rng = np.random.default_rng(3)
    s = rng.uniform(80, 120, 50)
    t = rng.uniform(0, 0.8, 50)
    errs = []
    for si, ti in zip(s, t):
        ref = build_tree(OptionSpec(100.0, 1.0 - ti), si, 0.2, 0.05, 2000).root_value
        errs.append(abs(surf.price(si, ti) / ref - 1.0))
    worst = max(errs)
    atm = abs(surf.price(100.0, 0.0) / base_tree.root_value - 1.0)
    euro = bs_put_price(100.0, SPEC, 0.2, 0.05, 1.0)
    anchors = (round(euro, 3) == round(EURO_ATM, 3) == round(bs_put_oracle(100, 100, 0.2, 0.05, 1), 3)
               and round(bs_put_delta(100.0, SPEC, 0.2, 0.05, 1.0), 3) == round(EURO_ATM_DELTA, 3)
               == -0.363 and round(euro, 2) == 5.57)
    tree_ok = abs(base_tree.root_value - crr_oracle(100, 100, 0.2, 0.05, 1.0, 2000)) < 1e-9
    ok = worst <= 0.01 and atm <= 0.005 and base_tree.root_value >= euro and anchors and tree_ok
    record(3, ok, f"max rel err {worst:.4f}, ATM {atm:.4f}, American {base_tree.root_value:.4f} "
           f">= European {euro:.4f}")
    assert ok


# ---------------------------------------------------------------- 4, 5, 6

AGENTS = {}


def agent_for(seed, *overrides):
    key = (seed,) + overrides
    if key not in AGENTS:
        cfg = load_config(overrides=[f"agent.seed={seed}", *overrides])
        try:
            AGENTS[key] = train_from_config(cfg)[0]
        except TrainingDiverged as exc:
            AGENTS[key] = exc
    return AGENTS[key]


def agent_stats(agent, test_sets, tree, lam, steps=104):
    rec = run_hedge_test(Strategy.agent(agent), test_sets[steps], SPEC, tree, lam)
    return rec.stats


def test_criterion_4_agent_beats_delta(test_sets, base_tree):
    bm, bsd = bs_stats(test_sets, base_tree, 104, 0.03)[0]
    wins, cells = 0, []
    for seed in range(5):
        t0 = time.time()
        agent = agent_for(seed)
        if isinstance(agent, TrainingDiverged):
            cells.append(f"seed {seed}: diverged")
            continue
        m, sd = agent_stats(agent, test_sets, base_tree, 0.03)
        wins += m >= bm and sd <= bsd
        cells.append(f"seed {seed}: {m:.2f}/{sd:.2f} ({time.time() - t0:.0f}s)")
    ok = wins >= 3
    record(4, ok, f"{wins}/5 seeds dominate BS Delta {bm:.2f}/{bsd:.2f} at 3%, 104 steps; "
           + "; ".join(cells))
    assert ok


def test_criterion_5_quadratic_beats_linear(test_sets, base_tree):
    fails, notes = [], []
    for seed in (0, 1):
        quad = agent_for(seed)
        lin = agent_for(seed, "agent.tc_penalty_function=linear",
                        "agent.tc_penalty_multiplier=0.03")
        if isinstance(quad, TrainingDiverged):
            fails.append(f"seed {seed}: quadratic diverged")
            continue
        if isinstance(lin, TrainingDiverged):
            notes.append(f"seed {seed}: linear diverged")
            continue
        for lam in (0.01, 0.03):
            qm, qsd = agent_stats(quad, test_sets, base_tree, lam)
            lm, lsd = agent_stats(lin, test_sets, base_tree, lam)
            notes.append(f"seed {seed} {lam:.0%}: quad {qm:.2f}/{qsd:.2f} lin {lm:.2f}/{lsd:.2f}")
            if not (qm > lm and qsd < lsd):
                fails.append(f"seed {seed} {lam:.0%}: no strict dominance")
            if lsd < 3 * qsd:
                fails.append(f"seed {seed} {lam:.0%}: linear SD below 3x")
    ok = not fails
    record(5, ok, "; ".join(notes + fails))
    assert ok, fails


def test_criterion_6_undertrained_corner(test_sets, base_tree):
    t0 = time.time()
    base = agent_for(0)
    corner = agent_for(0, "agent.actor_learning_rate=1e-6", "agent.critic_learning_rate=1e-4",
                       "agent.training_episodes=2500")
    if isinstance(base, TrainingDiverged) or isinstance(corner, TrainingDiverged):
        record(6, False, "a training run diverged")
        pytest.fail("diverged")
    _, bsd = agent_stats(base, test_sets, base_tree, 0.01)
    _, csd = agent_stats(corner, test_sets, base_tree, 0.01)
    ok = csd > bsd
    record(6, ok, f"corner SD {csd:.2f} vs base SD {bsd:.2f} at 1%, {time.time() - t0:.0f}s")
    assert ok


# ---------------------------------------------------------------- 7

def _fd_worst(arch, head, n_in, seed):
    rng = np.random.default_rng(seed)
    net = MLP.init([n_in, *arch, 1], head, rng)
    x = rng.normal(size=(4, n_in))
    up = rng.normal(size=(4, 1))
    analytic, _ = net.backward(net.forward(x)[1], up)
    h = 1e-6
    worst = 0.0
    for i in range(net.theta.size):
        keep = net.theta[i]
        net.theta[i] = keep + h
        hi = np.sum(up * net(x))
        net.theta[i] = keep - h
        lo = np.sum(up * net(x))
        net.theta[i] = keep
        fd = (hi - lo) / (2 * h)
        scale = max(abs(fd), abs(analytic[i]), 1e-4)
        worst = max(worst, abs(fd - analytic[i]) / scale)
    return worst


def test_criterion_7_gradient_and_algebra(base_tree):
    grad = max(_fd_worst(arch, head, n_in, 7)
               for arch in ((32, 32), (64, 64), (64, 64, 64))
               for head, n_in in (("neg_sigmoid", 3), ("linear", 4)))

    rng = np.random.default_rng(0)
    online = MLP.init([3, 8, 1], "linear", rng)
    target = MLP.init([3, 8, 1], "linear", rng)
    res = []
    for _ in range(50):
        res.append(np.linalg.norm(target.theta - online.theta))
        soft_update(target, online, 0.05)
    soft_ok = np.allclose(np.array(res[1:]) / np.array(res[:-1]), 0.95, atol=1e-10)

    corr_ok, corr_notes = True, []
    n = 200_000
    for rho in (-0.9, 0.0, 0.5):
        g = substream(5, 9, int((rho + 1) * 10))
        dw, db = correlated_increments(rho, 1 / 252, g.standard_normal(n), g.standard_normal(n))
        r = np.corrcoef(dw, db)[0, 1]
        se = (1 - rho * rho) / math.sqrt(n - 1)
        corr_ok &= abs(r - rho) <= 3 * max(se, 1e-12)
        corr_notes.append(f"{rho:+.1f}->{r:+.4f}")

    paths = simulate_gbm(GBM, 2000, 52, 1.0, 9)
    tele = 0.0
    for strat in (Strategy.bs_delta(0.2, 0.05), Strategy.constant(-0.5)):
        for acc in (Accounting(), Accounting(unwind=True),
                    Accounting(financing=False, charge_initial=False)):
            rec = run_hedge_test(strat, paths, SPEC, base_tree, 0.03, accounting=acc)
            tele = max(tele, np.abs(rec.pnl - telescoped_pnl(rec)).max(),
                       np.abs(rec.pnl - rec.components["streamed"]).max())
    ok = grad <= 1e-4 and soft_ok and corr_ok and tele <= 1e-9
    record(7, ok, f"max FD rel err {grad:.1e}; soft update geometric {soft_ok}; corr "
           f"{', '.join(corr_notes)}; telescoping {tele:.1e}")
    assert ok


# ---------------------------------------------------------------- 8

def test_criterion_8_calibration_round_trip():
    day, expiry = dt.date(2023, 1, 2), dt.date(2023, 7, 3)
    strikes = [80.0, 90.0, 95.0, 100.0, 105.0, 110.0, 120.0]
    q = synthetic_quotes((0.2, 0.5, -0.5), "SYN", day, expiry, strikes, 100.0, 0.05)
    fit = calibrate(q).params
    q0 = synthetic_quotes((0.2, 0.0, 0.0), "SYN", day, expiry, strikes, 100.0, 0.05)
    fit0 = calibrate(q0).params
    ok = (abs(fit.sigma0 - 0.2) <= 0.01 and abs(fit.nu - 0.5) <= 0.1
          and abs(fit.rho + 0.5) <= 0.1 and fit0.nu < 0.05)
    record(8, ok, f"fit ({fit.sigma0:.4f}, {fit.nu:.4f}, {fit.rho:.4f}); "
           f"nu=0 case nu {fit0.nu:.4f}, sigma0 {fit0.sigma0:.4f}")
    assert ok


# ---------------------------------------------------------------- 9

def test_criterion_9_weekly_pipeline(tmp_path):
    tiny = ["calibration.price_degree=12", "calibration.vol_degree=5", "calibration.time_steps=8",
            "calibration.mc_per_node=200", "calibration.starts=1", "calibration.max_iters=60",
            "calibration.restarts=1", "weekly.surface_price_degree=16",
            "weekly.surface_vol_degree=6", "weekly.surface_mc_per_node=300",
            "weekly.training_paths=100", "agent.training_episodes=100", "agent.warmup=100",
            "agent.batch_size=32", "agent.actor_nn_architecture=16x16",
            "agent.critic_nn_architecture=16x16"]
    args = ["weekly", "--symbols", "GE,TSLA", "--synthetic", "0.3,0.5,-0.5",
            "--out-dir", str(tmp_path)]
    for item in tiny:
        args += ["--set", item]
    rc = main(args)
    report = (tmp_path / "weekly_report.txt").read_text()
    with open(tmp_path / "weekly_hedge_log.csv", newline="") as fh:
        log = list(csv.DictReader(fh))
    with open(tmp_path / "weekly_results.csv", newline="") as fh:
        results = list(csv.DictReader(fh))
    head = report.splitlines()
    layout = (head[0] == "lambda = 1%" and head[1].split()[:2] == ["Symbol", "Delta"]
              and "DRL (Weekly Re-train)" in head[1] and "DRL (Train Once)" in head[1]
              and head[2].startswith("GE") and head[3].startswith("TSLA")
              and "lambda = 3%" in report)
    continuity = True
    runs = {}
    for row in log:
        runs.setdefault((row["symbol"], row["strike"], row["lambda"], row["strategy"]), []).append(row)
    for rows in runs.values():
        for prev, row in zip(rows, rows[1:]):
            continuity &= float(row["holding_in"]) == float(prev["holding_out"])
    finite = all(math.isfinite(float(r[k])) for r in results
                 for k in ("bs_delta", "weekly_retrain", "single_train"))
    ok = rc == 0 and layout and continuity and finite and len(results) == 2 * 5 * 2
    record(9, ok, f"exit {rc}, layout {layout}, continuity over {len(runs)} hedges {continuity}, "
           f"{len(results)} finite result rows {finite}")
    assert ok
