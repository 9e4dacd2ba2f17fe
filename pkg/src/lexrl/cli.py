"""Command-line entry point: ``lexrl run`` and ``lexrl eval``."""

from __future__ import annotations

import argparse
import csv
import sys

from .envs import ENDPOINT_PRIMARY, SCHEMES
from .harness import (
    EXPERIMENTS, WORKERS_ENV, ConfigError, ExperimentAbort, _parse_value, env_from_params,
    evaluate, load_policy, make_config, run_experiment,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lexrl", description="Thresholded lexicographic RL experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment over seeds",
                         epilog=f"Worker pool size comes from ${WORKERS_ENV} (default: CPU count).")
    run.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    run.add_argument("--config", help="INI file overriding experiment defaults")
    run.add_argument("--seeds", default="0", help="e.g. 0..9 or 1,3,5 (default 0)")
    run.add_argument("--out", default="results", help="output directory (default results)")

    ev = sub.add_parser("eval", help="evaluate a saved policy on a maze")
    ev.add_argument("--policy", required=True, help="policy JSON written by `lexrl run`")
    ev.add_argument("--env", required=True, help="maze file or built-in maze name")
    ev.add_argument("--scheme", choices=SCHEMES, default=ENDPOINT_PRIMARY)
    ev.add_argument("--gamma", type=float, default=0.99)
    ev.add_argument("--episodes", type=int, default=100)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--horizon", type=int, default=200)
    ev.add_argument("--levels", default="0.5,none",
                    help="per-objective success levels, 'none' to skip one (default 0.5,none)")
    ev.add_argument("--avoid-bad", action="store_true", help="count bad-tile visits as failures")
    return p


def _cmd_run(args) -> int:
    cfg = make_config(args.experiment, args.config, args.seeds, args.out)
    report = run_experiment(cfg)
    w = csv.writer(sys.stdout)
    w.writerow(report.header)
    w.writerows(report.rows)
    print(f"summary written to {report.summary_path}", file=sys.stderr)
    for err in report.errors:
        print(f"error: {err}", file=sys.stderr)
    return EXIT_ABORT if report.errors else EXIT_OK


def _cmd_eval(args) -> int:
    policy = load_policy(args.policy)
    m = env_from_params({"maze": args.env, "scheme": args.scheme, "gamma": args.gamma})
    levels = _parse_value(args.levels, [], "--levels")
    avoid = m.meta["bad_states"] if args.avoid_bad else None
    rate, means = evaluate(policy, m, levels, args.episodes, args.seed, args.horizon, avoid)
    w = csv.writer(sys.stdout)
    w.writerow(["seed", "success_rate"] + [f"mean_return_{i + 1}" for i in range(len(means))])
    w.writerow([args.seed, repr(rate)] + [repr(float(v)) for v in means])
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_eval(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentAbort as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
