"""Command-line entry point: ``esa <gauss-seq|gmm|knn> [options]``.

Exit status is 0 on success, 1 for an invalid configuration and 2 when an
experiment fails at run time.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from .harness.experiments import EXPERIMENTS, METHODS, ExperimentConfig, run_experiment
from .harness.records import write_csv

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 by default, which is reserved for run-time failures here
    def error(self, message):
        raise ConfigError(message)


def _floats(text: str):
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str):
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _methods(text: str):
    ms = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [m for m in ms if m not in METHODS]
    if bad or not ms:
        raise argparse.ArgumentTypeError(f"methods must come from {','.join(METHODS)}, got {text!r}")
    return ms


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="esa", description="Early-stopped aggregation experiments (ESA vs full aggregation vs selection).")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--method", type=_methods, default=METHODS, help="comma-separated subset of esa,fa,ms")
    p.add_argument("--n", type=int, default=None, help="sample size (default 4096 for gauss-seq, 500 otherwise)")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delta", type=float, default=0.0, help="promoting margin, >= 0")
    p.add_argument("--margin", choices=("mult", "add"), default="add")
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.add_argument("--no-timing", action="store_true", help="write 0 in the wall_time_ms column")
    p.add_argument("-v", "--verbose", action="store_true")

    g = p.add_argument_group("gauss-seq")
    g.add_argument("--beta-star", type=float, default=1.0)
    g.add_argument("--q-ladder", type=_floats, default=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9))
    g.add_argument("--lam", type=float, default=0.5)

    g = p.add_argument_group("gmm")
    g.add_argument("--setting", choices=("a", "b"), default="a")
    g.add_argument("--k-max", type=int, default=10)
    g.add_argument("--restarts", type=int, default=5)
    g.add_argument("--noise-var", type=float, default=None, help="setting b noise variance (default 0.15)")

    g = p.add_argument_group("knn")
    g.add_argument("--ladder", type=_ints, default=None, help="neighbor counts, e.g. 3,5,10,20")
    g.add_argument("--criterion", choices=("aicc", "val", "pen"), default="aicc")
    g.add_argument("--alpha", type=float, default=1.0)
    g.add_argument("--split", type=float, default=0.2)
    g.add_argument("--sigma", type=float, default=0.3)
    g.add_argument("--p", type=int, default=2)
    return p


def config_from_args(args) -> ExperimentConfig:
    extra = {} if args.noise_var is None else {"noise_var": args.noise_var}
    return ExperimentConfig(
        experiment=args.experiment,
        methods=args.method,
        replicates=args.replicates,
        seed=args.seed,
        delta=args.delta,
        margin_mode=args.margin,
        out_path=args.out,
        timing=not args.no_timing,
        n=args.n,
        beta_star=args.beta_star,
        q_ladder=args.q_ladder,
        lam=args.lam,
        setting=args.setting,
        k_max=args.k_max,
        restarts=args.restarts,
        ladder=args.ladder,
        criterion=args.criterion,
        alpha=args.alpha,
        split=args.split,
        sigma=args.sigma,
        p=args.p,
        **extra,
    )


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        config = config_from_args(args)
    except (ConfigError, ValueError) as exc:
        print(f"esa: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    try:
        records = run_experiment(config)
    except ValueError as exc:
        # data-dependent validation, e.g. a ladder longer than the training set
        print(f"esa: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"esa: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    try:
        write_csv(records, config.out_path if config.out_path else sys.stdout)
    except OSError as exc:
        print(f"esa: cannot write output: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
