"""Command-line entry point: ``amhedge <command> [--config FILE] [--set section.key=value]``."""
from __future__ import annotations

import argparse
import datetime as dt
import sys
from pathlib import Path

from . import __version__
from .analytic import OptionSpec, bs_put_price, build_tree
from .calibration import CalibrationResult, PricerSettings, calibrate, read_quotes_csv
from .chebyshev import backward_induce, default_grid
from .config import load_config
from .ddpg import TrainedAgent, write_training_log
from .evaluation import Strategy, compare_report, run_hedge_test, write_results_csv
from .market import GBMParams, SABRParams, write_paths_csv
from . import experiments as ex
from . import weekly as wk


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amhedge", description="American put hedging experiments")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("simulate", help="write simulated paths to CSV")
    _common(p)
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--steps", type=int, default=None, help="default: agent steps per episode")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("price", help="price one American put")
    p.add_argument("--model", choices=("gbm", "sabr"), default="gbm")
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--sigma", type=float, required=True, help="volatility (sigma0 under sabr)")
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--t", type=float, required=True, help="maturity in years")
    p.add_argument("--nu", type=float, default=0.0)
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--method", choices=("tree", "chebyshev", "european"), default="tree")
    p.add_argument("--steps", type=int, default=2000, help="tree steps")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train one agent from the config")
    _common(p)
    p.add_argument("--out", required=True, help="agent JSON file")
    p.add_argument("--log", help="training log CSV")

    p = sub.add_parser("evaluate", help="test strategies on fresh paths")
    _common(p)
    p.add_argument("--agent", action="append", default=[], help="agent JSON (repeatable)")
    p.add_argument("--steps", type=int, default=None, help="default: evaluation.test_steps")
    p.add_argument("--out", help="results CSV")

    for name, text in (("sweep", "hyperparameter grid from [sweep]"),
                       ("steps", "train-step by test-step grid from [steps]"),
                       ("penalty", "penalty-function grid from [penalty]")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--name", help="experiment name (default: config file stem)")
        p.add_argument("--out-dir", help="default: output.dir")

    p = sub.add_parser("calibrate", help="fit SABR (sigma0, nu, rho) to put quotes")
    _common(p)
    p.add_argument("--quotes", help="quotes CSV (default: calibration.quotes)")
    p.add_argument("--symbol", help="only quotes of this symbol")
    p.add_argument("--out", help="result JSON")

    p = sub.add_parser("weekly", help="weekly recalibrate and retrain on realized paths")
    _common(p)
    p.add_argument("--symbols", help="comma-separated (default: weekly.symbols, else all)")
    p.add_argument("--quotes-dir", help="default: weekly.quotes_dir")
    p.add_argument("--synthetic", nargs="?", const="0.3,0.5,-0.5", metavar="SIGMA0,NU,RHO",
                   help="first write synthetic quote files priced by these SABR parameters")
    p.add_argument("--out-dir", help="default: output.dir")
    return parser


def _config(args):
    return load_config(args.config, args.set)


def _out_dir(args, cfg) -> Path:
    out = Path(getattr(args, "out_dir", None) or cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = _config(args)
    model = ex.build_model(cfg)
    spec = ex.build_option(cfg)
    steps = args.steps or cfg["agent"]["steps_per_training_episode"]
    write_paths_csv(ex.simulate(model, args.paths, steps, spec.maturity, args.seed), args.out)
    print(f"wrote {args.paths} paths x {steps} steps to {args.out}")
    return 0


def cmd_price(args) -> int:
    spec = OptionSpec(args.k, args.t, "european" if args.method == "european" else "american")
    if args.method == "european":
        if args.model != "gbm":
            raise ValueError("the closed form is for gbm only")
        value = bs_put_price(args.s, spec, args.sigma, args.r, args.t)
    elif args.method == "tree":
        if args.model != "gbm":
            raise ValueError("the tree is for gbm only; use --method chebyshev")
        value = build_tree(spec, args.s, args.sigma, args.r, args.steps).root_value
    else:
        if args.model == "gbm":
            model = GBMParams(args.s, args.r, args.sigma, args.r)
        else:
            model = SABRParams(args.s, args.sigma, args.nu, args.rho, args.r, args.r)
        surface = backward_induce(model, spec, default_grid(model, spec), 100, 2000, args.seed)
        value = surface.price(args.s, 0.0, args.sigma if args.model == "sabr" else None)
    print(f"{float(value):.6f}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    def report(ep, row):
        if ep % 100 == 0:
            print(f"episode {ep}: return {row['return']:.3f} critic loss {row['critic_loss']:.4g}",
                  file=sys.stderr)

    agent, log = ex.train_from_config(cfg, progress=report)
    agent.save(args.out)
    if args.log:
        write_training_log(log, args.log)
    print(f"saved agent to {args.out} (config {cfg.hash})")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    model = ex.build_model(cfg)
    spec = ex.build_option(cfg)
    pricer = ex.build_pricer(cfg, model, spec)
    ev = cfg["evaluation"]
    steps = args.steps or ev["test_steps"]
    paths = ex.simulate(model, ev["test_paths"], steps, spec.maturity, ev["test_seed"])
    strategies = [ex.baseline_strategy(k, model, pricer) for k in ev["baselines"]]
    strategies += [Strategy.agent(TrainedAgent.load(f), Path(f).stem) for f in args.agent]
    acct = ex.accounting(cfg)
    records = [run_hedge_test(s, paths, spec, pricer, lam, accounting=acct)
               for s in strategies for lam in ev["lambdas"]]
    print(compare_report(records, title=f"test steps {steps}, {ev['test_paths']} paths"))
    if args.out:
        write_results_csv([dict(r.row(), **cfg.provenance()) for r in records], args.out,
                          ("config_hash", "version"))
    return 0


def _grid_command(args, runner) -> int:
    cfg = _config(args)
    name = args.name or (Path(args.config).stem if args.config else args.command)
    out = _out_dir(args, cfg)
    log = lambda m: print(m, file=sys.stderr)
    if runner == "sweep":
        rows = ex.run_sweep(ex.SweepSpec.from_config(cfg, name), out, log)
    elif runner == "steps":
        rows = ex.run_step_experiment(cfg, out, progress=log, name=name)
    else:
        rows = ex.run_penalty_experiment(cfg, out, progress=log, name=name)
    report = ex.render_rows(rows, name)
    (out / f"{name}_report.txt").write_text(report + "\n")
    print(report)
    print(f"results in {out / (name + '_results.csv')}", file=sys.stderr)
    return 0


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    c = cfg["calibration"]
    file = args.quotes or c["quotes"]
    if not file:
        raise ValueError("no quote file given (--quotes or calibration.quotes)")
    quotes = read_quotes_csv(file)
    if args.symbol:
        quotes = [q for q in quotes if q.symbol == args.symbol]
    symbols = {q.symbol for q in quotes}
    if len(symbols) != 1:
        raise ValueError(f"quotes cover symbols {sorted(symbols)}; pick one with --symbol")
    settings = PricerSettings(c["price_degree"], c["vol_degree"], c["time_steps"],
                              c["mc_per_node"], c["seed"])
    res: CalibrationResult = calibrate(quotes, settings=settings, n_starts=c["starts"],
                                       max_iters=c["max_iters"], tolerance=c["tolerance"],
                                       restarts=c["restarts"])
    p = res.params
    print(f"{res.symbol} {res.quote_date}: sigma0={p.sigma0:.4f} nu={p.nu:.4f} rho={p.rho:.4f} "
          f"loss={res.objective:.3g} converged={res.converged}")
    for row in res.residuals:
        print(f"  K={row['strike']:<8g} model={row['model']:.4f} market={row['market']:.4f} "
              f"rel={row['rel_error']:+.2%}")
    if args.out:
        res.save(args.out)
    return 0


def cmd_weekly(args) -> int:
    cfg = _config(args)
    w = cfg["weekly"]
    out = _out_dir(args, cfg)
    paths = wk.load_paths(w["paths_file"] or None)
    strikes = wk.load_strikes(w["strikes_file"] or None)
    symbols = (args.symbols.split(",") if args.symbols else list(w["symbols"])) or \
        [s for s in paths.symbols if s in strikes]
    quotes_dir = Path(args.quotes_dir or w["quotes_dir"] or out / "quotes")
    dates = [dt.date.fromisoformat(d) for d in w["dates"]]
    expiry = dt.date.fromisoformat(w["expiry"])
    if args.synthetic:
        x = tuple(float(v) for v in args.synthetic.split(","))
        wk.write_synthetic_quotes(quotes_dir, paths, {s: strikes[s] for s in symbols}, dates,
                                  expiry, w["rate"], x)
    results = []
    for sym in symbols:
        if sym not in strikes:
            raise ValueError(f"no strikes listed for {sym}")
        results += wk.run_weekly(cfg, sym, paths, strikes[sym], quotes_dir,
                                 progress=lambda m: print(m, file=sys.stderr))
    report = wk.weekly_table(results) + "\n\n" + wk.strike_table(results)
    (out / "weekly_report.txt").write_text(report + "\n")
    wk.write_weekly_csv(results, out / "weekly_results.csv")
    wk.write_hedge_log(results, out / "weekly_hedge_log.csv")
    print(report)
    return 0


COMMANDS = {"simulate": cmd_simulate, "price": cmd_price, "train": cmd_train,
            "evaluate": cmd_evaluate, "calibrate": cmd_calibrate, "weekly": cmd_weekly}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        if args.command in ("sweep", "steps", "penalty"):
            return _grid_command(args, args.command)
        return COMMANDS[args.command](args)
    except (ValueError, OSError, wk.WeeklyInputError) as exc:
        print(f"amhedge {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
