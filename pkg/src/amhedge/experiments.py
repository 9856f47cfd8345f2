"""Config-driven training and evaluation grids.

One runner covers the hyperparameter sweep, the train-step/test-step grid
and the penalty-function grid: each is a list of config overrides crossed
with seeds, evaluated on shared test paths at one or more rebalance counts.
Completed points are recorded in a manifest so an interrupted run resumes
where it stopped, and a finished run is left untouched on rerun.
"""
from __future__ import annotations

import csv
import itertools
import json
import os
from collections import namedtuple
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analytic import OptionSpec, build_tree
from .chebyshev import backward_induce, default_grid
from .config import Config, parse_arch
from .ddpg import AgentConfig, TrainingDiverged, train, write_training_log
from .env import EpisodeConfig, HedgeEnv, RewardConfig
from .evaluation import (RESULT_FIELDS, Accounting, Strategy, compare_report, run_hedge_test)
from .market import GBMParams, SABRParams, simulate_gbm, simulate_sabr

ROW_FIELDS = RESULT_FIELDS + ("experiment", "gridpoint", "status", "train_steps",
                              "test_seed", "config_hash", "version")
AXES = ("actor_learning_rate", "critic_learning_rate", "training_episodes",
        "nn_architecture", "actor_nn_architecture", "critic_nn_architecture",
        "steps_per_training_episode", "penalty")


# ---------------------------------------------------------------- builders

def build_option(cfg: Config) -> OptionSpec:
    o = cfg["option"]
    return OptionSpec(o["strike"], o["maturity"], o["style"])


def build_model(cfg: Config):
    m = cfg["market"]
    if m["model"] == "gbm":
        return GBMParams(m["s0"], m["mu"], m["sigma"], m["r"])
    if m["model"] == "sabr":
        return SABRParams(m["s0"], m["sigma0"], m["nu"], m["rho"], m["mu"], m["r"])
    raise ValueError(f"unknown model {m['model']!r}")


def pricing_model(model):
    """The same model under the pricing measure (drift = rate)."""
    if isinstance(model, GBMParams):
        return GBMParams(model.s0, model.r, model.sigma, model.r)
    return model.with_updates(mu=model.r)


def build_pricer(cfg: Config, model=None, spec: OptionSpec | None = None):
    model = build_model(cfg) if model is None else model
    spec = build_option(cfg) if spec is None else spec
    p = cfg["pricing"]
    method = p["method"]
    if isinstance(model, SABRParams) and method == "tree":
        method = "chebyshev"            # no tree for the stochastic-vol model
    if method == "tree":
        return build_tree(spec, model.s0, model.sigma, model.r, p["tree_steps"])
    if method == "chebyshev":
        pm = pricing_model(model)
        grid = default_grid(pm, spec, p["cheb_price_degree"], p["cheb_vol_degree"])
        return backward_induce(pm, spec, grid, p["cheb_time_steps"], p["cheb_mc_per_node"],
                               p["cheb_seed"])
    raise ValueError(f"unknown pricing method {method!r}")


def reward_config(cfg: Config) -> RewardConfig:
    a = cfg["agent"]
    return RewardConfig(a["tc_penalty_function"], a["tc_penalty_multiplier"])


def agent_config(cfg: Config) -> AgentConfig:
    a = cfg["agent"]
    return AgentConfig(actor_lr=a["actor_learning_rate"], critic_lr=a["critic_learning_rate"],
                       episodes=a["training_episodes"],
                       steps_per_episode=a["steps_per_training_episode"],
                       actor_arch=parse_arch(a["actor_nn_architecture"]),
                       critic_arch=parse_arch(a["critic_nn_architecture"]),
                       gamma=a["gamma"], soft_tau=a["soft_tau"],
                       buffer_capacity=a["buffer_capacity"], batch_size=a["batch_size"],
                       warmup=a["warmup"], noise_sigma=a["noise_sigma"],
                       noise_final=a["noise_final"], optimizer=a["optimizer"], seed=a["seed"])


def accounting(cfg: Config) -> Accounting:
    e = cfg["evaluation"]
    return Accounting(e["financing"], e["charge_initial"], e["unwind"])


def simulate(model, n_paths: int, n_steps: int, horizon: float, seed: int):
    if isinstance(model, GBMParams):
        return simulate_gbm(model, n_paths, n_steps, horizon, seed)
    return simulate_sabr(model, n_paths, n_steps, horizon, seed)


def train_from_config(cfg: Config, pricer=None, model=None, spec=None, progress=None):
    """Train one agent as described by ``cfg``; returns (TrainedAgent, log)."""
    model = build_model(cfg) if model is None else model
    spec = build_option(cfg) if spec is None else spec
    pricer = build_pricer(cfg, model, spec) if pricer is None else pricer
    acfg = agent_config(cfg)
    a = cfg["agent"]
    env = HedgeEnv(EpisodeConfig(spec, model, acfg.steps_per_episode, pricer,
                                 reward_config(cfg), a["early_exercise"]))
    n_paths = min(a["training_paths"], acfg.episodes)
    paths = simulate(model, n_paths, acfg.steps_per_episode, spec.maturity,
                     a["training_data_seed"] + acfg.seed)
    descriptor = (f"{type(model).__name__} paths n={n_paths} steps={acfg.steps_per_episode} "
                  f"seed={a['training_data_seed'] + acfg.seed}")
    agent, log = train(env, acfg, paths, descriptor, progress)
    agent.provenance.update(cfg.provenance())
    return agent, log


def baseline_strategy(kind: str, model, pricer) -> Strategy:
    if kind == "bs_delta":
        sigma = model.sigma if isinstance(model, GBMParams) else model.sigma0
        return Strategy.bs_delta(sigma, model.r)
    if kind == "tree_delta":
        if not hasattr(pricer, "boundary_at"):
            raise ValueError("tree delta needs a tree pricer")
        return Strategy.tree_delta(pricer)
    raise ValueError(f"unknown baseline {kind!r}")


# ---------------------------------------------------------------- grids

def point_overrides(point: dict) -> list:
    """Translate one grid point into ``section.key=value`` overrides."""
    out = []
    for name, value in point.items():
        if name == "nn_architecture":
            arch = "x".join(str(w) for w in parse_arch(value))
            out += [f"agent.actor_nn_architecture={arch}", f"agent.critic_nn_architecture={arch}"]
        elif name.endswith("nn_architecture"):
            out.append(f"agent.{name}={'x'.join(str(w) for w in parse_arch(value))}")
        elif name == "penalty":
            kind, mult = str(value).split(":")
            out += [f"agent.tc_penalty_function={kind.strip()}",
                    f"agent.tc_penalty_multiplier={mult.strip()}"]
        else:
            out.append(f"agent.{name}={value}")
    return out


def point_key(point: dict) -> str:
    if not point:
        return "base"
    return ",".join(f"{k}={v}" for k, v in point.items())


def point_slug(point: dict) -> str:
    key = point_key(point)
    return "".join(c if c.isalnum() or c in "-._=" else "_" for c in key.replace(",", "__"))


@dataclass
class SweepSpec:
    base: Config
    axes: dict = field(default_factory=dict)
    seeds: tuple = (0,)
    lambdas: tuple = (0.01, 0.03)
    test_steps: tuple = (104,)
    name: str = "sweep"

    def __post_init__(self):
        for axis in self.axes:
            if axis not in AXES:
                raise ValueError(f"unknown sweep axis {axis!r}; choose from {AXES}")

    def points(self) -> list:
        live = [(k, tuple(v)) for k, v in self.axes.items() if len(v)]
        if not live:
            return [{}]
        names = [k for k, _ in live]
        return [dict(zip(names, combo)) for combo in itertools.product(*[v for _, v in live])]

    @classmethod
    def from_config(cls, cfg: Config, name: str = "sweep") -> "SweepSpec":
        s = cfg["sweep"]
        axes = {k: s[k] for k in AXES if s[k]}
        return cls(cfg, axes, tuple(s["seeds"]), tuple(cfg["evaluation"]["lambdas"]),
                   (cfg["evaluation"]["test_steps"],), name)


class Manifest:
    """Completed (gridpoint, seed) pairs, rewritten atomically after each point."""

    def __init__(self, file):
        self.file = Path(file)
        self.done = {}
        if self.file.exists():
            self.done = json.loads(self.file.read_text())["completed"]

    def __contains__(self, key):
        return key in self.done

    def mark(self, key: str, status: str):
        self.done[key] = status
        tmp = self.file.with_suffix(".tmp")
        tmp.write_text(json.dumps({"completed": self.done}, indent=1, sort_keys=True))
        os.replace(tmp, self.file)


def _append_rows(file: Path, rows) -> None:
    new = not file.exists()
    with open(file, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ROW_FIELDS, extrasaction="ignore")
        if new:
            w.writeheader()
        for row in rows:
            w.writerow(row)


def read_rows(file) -> list:
    with open(file, newline="") as fh:
        return list(csv.DictReader(fh))


def run_sweep(spec: SweepSpec, out_dir, progress=None) -> list:
    """Train and evaluate every grid point and seed not yet in the manifest.

    Returns all result rows of the experiment (old and new).  Diverged
    training records ``status=diverged`` rows and the sweep moves on.
    """
    out_dir = Path(out_dir)
    exp_dir = out_dir / spec.name
    exp_dir.mkdir(parents=True, exist_ok=True)
    results = out_dir / f"{spec.name}_results.csv"
    manifest = Manifest(exp_dir / "manifest.json")
    base = spec.base
    model = build_model(base)
    spec_opt = build_option(base)
    acct = accounting(base)
    ev = base["evaluation"]
    prov = base.provenance()
    pricer = None
    test_sets = {}

    def get_pricer():
        nonlocal pricer
        if pricer is None:
            pricer = build_pricer(base, model, spec_opt)
        return pricer

    def get_paths(n):
        if n not in test_sets:
            test_sets[n] = simulate(model, ev["test_paths"], n, spec_opt.maturity, ev["test_seed"])
        return test_sets[n]

    def row(rec_or_none, strategy, gridpoint, seed, steps, lam, status, train_steps=""):
        mean = sd = float("nan")
        n_paths = ev["test_paths"]
        if rec_or_none is not None:
            mean, sd = rec_or_none.stats
            n_paths = rec_or_none.n_paths
        return {"strategy": strategy, "lambda": lam, "rebalance_steps": steps,
                "n_paths": n_paths, "mean_pnl": mean, "sd_pnl": sd, "seed": seed,
                "experiment": spec.name, "gridpoint": gridpoint, "status": status,
                "train_steps": train_steps, "test_seed": ev["test_seed"], **prov}

    for kind in ev["baselines"]:
        key = f"baseline:{kind}"
        if key in manifest:
            continue
        strat = baseline_strategy(kind, model, get_pricer())
        rows = [row(run_hedge_test(strat, get_paths(n), spec_opt, get_pricer(), lam,
                                   accounting=acct), kind, "baseline", "", n, lam, "ok")
                for n in spec.test_steps for lam in spec.lambdas]
        _append_rows(results, rows)
        manifest.mark(key, "ok")

    for point in spec.points():
        gp = point_key(point)
        for seed in spec.seeds:
            key = f"{gp}|seed={seed}"
            if key in manifest:
                continue
            cfg = base.with_overrides(point_overrides(point) + [f"agent.seed={seed}"])
            train_steps = cfg["agent"]["steps_per_training_episode"]
            point_dir = exp_dir / point_slug(point)
            point_dir.mkdir(parents=True, exist_ok=True)
            if progress:
                progress(f"[{spec.name}] training {gp} seed={seed}")
            try:
                agent, log = train_from_config(cfg, get_pricer(), model, spec_opt)
            except TrainingDiverged as exc:
                (point_dir / f"{seed}.diverged.json").write_text(json.dumps(exc.report, indent=1))
                rows = [row(None, "agent", gp, seed, n, lam, "diverged", train_steps)
                        for n in spec.test_steps for lam in spec.lambdas]
                _append_rows(results, rows)
                manifest.mark(key, "diverged")
                continue
            agent.save(point_dir / f"{seed}.agent.json")
            write_training_log(log, point_dir / f"{seed}.log.csv")
            strat = Strategy.agent(agent)
            rows = [row(run_hedge_test(strat, get_paths(n), spec_opt, get_pricer(), lam,
                                       accounting=acct), "agent", gp, seed, n, lam, "ok",
                        train_steps)
                    for n in spec.test_steps for lam in spec.lambdas]
            _append_rows(results, rows)
            manifest.mark(key, "ok")
    return read_rows(results)


def run_step_experiment(cfg: Config, out_dir, train_steps=None, test_steps=None,
                        lambdas=None, seeds=None, progress=None, name: str = "steps") -> list:
    s = cfg["steps"]
    spec = SweepSpec(cfg, {"steps_per_training_episode": tuple(train_steps or s["train_steps"])},
                     tuple(seeds or s["seeds"]), tuple(lambdas or cfg["evaluation"]["lambdas"]),
                     tuple(test_steps or s["test_steps"]), name)
    return run_sweep(spec, out_dir, progress)


def penalty_menu(linear, quadratic) -> tuple:
    return tuple(f"linear:{v}" for v in linear) + tuple(f"quadratic:{v}" for v in quadratic)


def run_penalty_experiment(cfg: Config, out_dir, linear=None, quadratic=None, lambdas=None,
                           seeds=None, progress=None, name: str = "penalty") -> list:
    p = cfg["penalty"]
    menu = penalty_menu(linear if linear is not None else p["linear"],
                        quadratic if quadratic is not None else p["quadratic"])
    spec = SweepSpec(cfg, {"penalty": menu}, tuple(seeds or p["seeds"]),
                     tuple(lambdas or cfg["evaluation"]["lambdas"]),
                     (cfg["evaluation"]["test_steps"],), name)
    return run_sweep(spec, out_dir, progress)


# ---------------------------------------------------------------- reports

_Summary = namedtuple("_Summary", "name lam rebalance_steps stats")


def summarize_rows(rows) -> list:
    """Average (mean, sd) over seeds for each (strategy/gridpoint, steps, lambda)."""
    groups = {}
    for r in rows:
        name = r["strategy"] if r["gridpoint"] == "baseline" else r["gridpoint"]
        key = (name, int(r["rebalance_steps"]), float(r["lambda"]))
        groups.setdefault(key, []).append((float(r["mean_pnl"]), float(r["sd_pnl"])))
    out = []
    for (name, steps, lam), vals in groups.items():
        arr = np.array(vals)
        out.append(_Summary(name, lam, steps, (float(arr[:, 0].mean()), float(arr[:, 1].mean()))))
    return out


def render_rows(rows, title: str = "", baseline: str = "bs_delta") -> str:
    summaries = summarize_rows(rows)
    blocks = []
    for steps in sorted({s.rebalance_steps for s in summaries}):
        part = [s for s in summaries if s.rebalance_steps == steps]
        head = f"{title} (test steps {steps})" if title else f"test steps {steps}"
        blocks.append(compare_report(part, baseline, head))
    return "\n\n".join(blocks)

