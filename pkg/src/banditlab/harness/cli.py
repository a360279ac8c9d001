"""Command line entry point: ``banditlab <subcommand> ...``.

Exit status: 0 success, 1 validation error, 2 runtime fault.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..adversary import Environment
from ..core import ConfigError, GameConfig, StrategyId, StreamFactory, load_config, validate_config
from ..infotheory import klcheck_grid, write_klcheck_csv
from ..learners import BatchScan, batch_scan_budget, make_learner
from ..sbi import embed_one_batch, goodness, run_sbi, sbi_reduce, write_sbi_csv
from .regret import estimate_pseudo_regret
from .scaling import AXES, fit_summary, plot_series
from .sweep import ExperimentSpec, read_summary, run_sweep

log = logging.getLogger("banditlab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _learner_arg(text: str) -> dict:
    # "exp4", "uniform", "oracle", "zero", "fixed:3", "proper-exp4"
    spec = {}
    if text.startswith("proper-"):
        spec["proper"] = True
        text = text[len("proper-"):]
    if text.startswith("fixed:"):
        spec.update(learner="fixed", arm=int(text.split(":", 1)[1]))
    else:
        spec["learner"] = text
    return spec


def cmd_simulate(args) -> int:
    cfg, strategy = load_config(args.config)
    report = validate_config(cfg)
    for warning in report.warnings:
        log.warning(warning)
    report.raise_for_errors()
    learner = make_learner(_learner_arg(args.learner), strategy)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    env = Environment(cfg, strategy, args.trials, 0, record=True)
    learner.reset(cfg, args.trials, StreamFactory(cfg.seed, 0))
    env.run(learner)
    for i, trace in enumerate(env.traces):
        trace.to_csv(out / f"trace_{i}.csv")
        if args.advice_jsonl:
            trace.to_jsonl(out / f"advice_{i}.jsonl", max_rounds=args.max_advice_rounds)
    data = env.cum_loss if args.estimator == "realized" else env.cum_mean_loss
    result = {
        "config": {"K": cfg.K, "N": cfg.N, "T": cfg.T, "epsilon": cfg.epsilon, "seed": cfg.seed, "k": cfg.k, "n": cfg.n},
        "strategy": strategy.to_json(),
        "learner": args.learner,
        "warnings": report.warnings,
        "cumulative_loss": env.cum_loss.tolist(),
    }
    if args.trials >= 2:
        rep = estimate_pseudo_regret(data, strategy, cfg, args.estimator)
        result["regret"] = {
            "mean": rep.mean,
            "stderr": rep.stderr,
            "comparator": str(rep.comparator),
            "comparator_loss": rep.comparator_loss,
            "trials": rep.trials,
            "estimator": rep.estimator,
        }
    (out / "report.json").write_text(json.dumps(result, indent=2))
    print(json.dumps(result.get("regret", result["cumulative_loss"])))
    return 0


def cmd_sweep(args) -> int:
    spec = ExperimentSpec.load(args.spec)
    if args.parallelism is not None:
        spec.parallelism = args.parallelism
    result = run_sweep(spec, args.out)
    print(json.dumps({k: str(v) for k, v in result.paths.items()}))
    return 0


def cmd_klcheck(args) -> int:
    rows = klcheck_grid(range(1, args.nmax + 1), range(1, args.tmax + 1), args.eps)
    write_klcheck_csv(rows, args.out)
    failed = [r for r in rows if not r["pass"]]
    print(f"{len(rows) - len(failed)}/{len(rows)} grid points pass -> {args.out}")
    return 0 if not failed else 2


def _strategy_set(cfg: GameConfig, which: str) -> list:
    if which == "all":
        return cfg.strategies()
    return [StrategyId.null()] + [StrategyId(u, 1) for u in range(1, cfg.k + 1)]


def cmd_sbi(args) -> int:
    cfg = GameConfig(args.K, args.N, args.T_star, args.epsilon, args.seed)
    report = validate_config(cfg)
    report.raise_for_errors()
    results = []
    if args.mode == "embed":
        small = GameConfig(3, 1 + cfg.n, 1, cfg.epsilon, args.seed)
        budget = args.budget if args.budget is not None else batch_scan_budget(cfg.n, cfg.epsilon)
        for i, strategy in enumerate([StrategyId.null()] + [StrategyId(1, v) for v in range(1, cfg.n + 1)]):
            results.append(embed_one_batch(BatchScan(budget), cfg, args.u, small, strategy, args.trials, (i,)))
    else:
        for i, strategy in enumerate(_strategy_set(cfg, args.strategies)):
            if args.mode == "scan":
                budget = args.budget if args.budget is not None else batch_scan_budget(cfg.n, cfg.epsilon)
                results.append(run_sbi(BatchScan(budget), strategy, cfg, args.trials, (i,)))
            else:
                learner = make_learner(_learner_arg(args.learner), strategy)
                results.append(sbi_reduce(learner, args.T_star, strategy, cfg, args.trials, (i,)))
    write_sbi_csv(results, args.out)
    rep = goodness(results)
    summary = {
        "min_accuracy": rep.min_accuracy,
        "good_095": rep.good,
        "meets_099": rep.meets_099,
        "mean_stopping_round": {str(r.strategies[0]): float(r.stopping_round.mean()) for r in results},
    }
    print(json.dumps(summary))
    return 0


def cmd_fit(args) -> int:
    rows = read_summary(args.summary)
    fits = [f.to_json() for f in fit_summary(rows, args.axis)]
    text = json.dumps(fits, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def cmd_plot_data(args) -> int:
    series = plot_series(read_summary(args.summary))
    Path(args.out).write_text(json.dumps(series, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="banditlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run one cell and write traces plus a regret report")
    p.add_argument("--config", required=True, help="GameConfig JSON {K, N, T, epsilon, seed, strategy}")
    p.add_argument("--learner", default="exp4")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--estimator", choices=["realized", "conditional"], default="realized")
    p.add_argument("--out", default="simulate_out")
    p.add_argument("--advice-jsonl", action="store_true", help="also dump full advice snapshots")
    p.add_argument("--max-advice-rounds", type=int, default=100_000)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run an ExperimentSpec grid")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--parallelism", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("klcheck", help="verify the KL bound and Pinsker exactly on a grid")
    p.add_argument("--nmax", type=int, default=3)
    p.add_argument("--tmax", type=int, default=3)
    p.add_argument("--eps", type=float, nargs="+", default=[0.02, 0.05, 0.1])
    p.add_argument("--out", default="klcheck.csv")
    p.set_defaults(func=cmd_klcheck)

    p = sub.add_parser("sbi", help="identification experiments")
    p.add_argument("--mode", choices=["scan", "reduce", "embed"], default="scan")
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--N", type=int, default=41)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--budget", type=int, default=None, help="BatchScan rounds per batch")
    p.add_argument("--learner", default="oracle", help="regret learner for --mode reduce")
    p.add_argument("--T-star", dest="T_star", type=int, default=10_000)
    p.add_argument("--u", type=int, default=1, help="embedded batch for --mode embed")
    p.add_argument("--strategies", choices=["all", "representative"], default="representative")
    p.add_argument("--out", default="sbi.csv")
    p.set_defaults(func=cmd_sbi)

    p = sub.add_parser("fit", help="log-log regression on a summary CSV")
    p.add_argument("--summary", required=True)
    p.add_argument("--axis", choices=AXES, default="T")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("plot-data", help="reshape a summary CSV into JSON series")
    p.add_argument("--summary", required=True)
    p.add_argument("--out", default="plot_data.json")
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
