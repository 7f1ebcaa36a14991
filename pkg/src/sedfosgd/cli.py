"""Command-line entry point.

    sedfosgd run     --config cfg [--seed N] [--out path] [--override k=v]...
    sedfosgd sweep   --config cfg --seeds N [--override k=v]...
    sedfosgd ratefit --config cfg [--seeds N] [--override k=v]...

Exit codes: 0 success, 1 validation error, 2 divergence.
"""

import argparse
import sys
from dataclasses import replace

from . import harness
from .harness import ConfigError
from .optim import DivergenceError


def _add_common(parser):
    parser.add_argument("--config", required=True, help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="override the seed")
    parser.add_argument("--out", default=None, help="trace CSV output path")
    parser.add_argument("--override", action="append", default=[],
                        metavar="KEY=VALUE", help="override any config key")


def build_parser():
    parser = argparse.ArgumentParser(prog="sedfosgd")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    _add_common(p_run)

    p_sweep = sub.add_parser("sweep", help="run a multi-seed sweep")
    _add_common(p_sweep)
    p_sweep.add_argument("--seeds", type=int, default=20, help="number of seeds")

    p_rate = sub.add_parser("ratefit", help="fit the running-min convergence rate")
    _add_common(p_rate)
    p_rate.add_argument("--seeds", type=int, default=1,
                        help="seeds to average the running-min series over")
    return parser


def _load(args):
    overrides = harness.parse_overrides(args.override)
    config = harness.load_config(args.config, overrides)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.out is not None:
        config = replace(config, out=args.out)
    return config


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = _load(args)
        if args.command == "run":
            result = harness.run(config)
            for key, value in result.summary.items():
                print(f"{key} = {value}")
        elif args.command == "sweep":
            sweep = harness.seed_sweep(config, args.seeds)
            print(f"seeds = {len(sweep.seeds)}  failures = {sweep.failures}")
            for key, stats in sweep.aggregate.items():
                print(f"{key}: mean={stats['mean']:.6g} "
                      f"median={stats['median']:.6g} iqr={stats['iqr']:.6g}")
        else:
            series = None
            for i in range(args.seeds):
                sub = replace(config, seed=harness.derive_seed(config.seed, i), out=None)
                result = harness.run(sub)
                gap_col = result.header.index(
                    "gap" if "gap" in result.header else "loss")
                gaps = [row[gap_col] for row in result.rows]
                series = gaps if series is None else [a + b for a, b in zip(series, gaps)]
            series = [x / args.seeds for x in series]
            fit = harness.rate_fit(harness.running_min(series))
            print(f"slope = {fit.slope}")
            print(f"intercept = {fit.intercept}")
            print(f"r_squared = {fit.r_squared}")
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
