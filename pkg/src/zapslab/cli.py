"""Command-line entry point.

Exit status: 0 on success, 1 for configuration errors, 2 for numerical
failures (divergence, non-convergence, non-finite states).
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, ExperimentConfig, load_config
from .operators import ConvergenceError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _parser():
    parser = argparse.ArgumentParser(prog="zapslab", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument("--out", default=None, help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    src = run.add_mutually_exclusive_group()
    src.add_argument("--config", help="key=value config file")
    src.add_argument("--preset", help="named desk preset")

    suite = sub.add_parser("suite", help="run an ablation suite")
    suite.add_argument("--name", required=True)
    suite.add_argument("--seeds", type=int, default=1, help="number of seeds, starting at --seed")
    suite.add_argument("--workers", type=int, default=1)

    oracle = sub.add_parser("oracle", help="compare against a dense oracle")
    oracle.add_argument("--check", required=True)
    return parser


def _run(args) -> int:
    from .experiment import preset, run_experiment

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if args.config:
        config = load_config(args.config, **overrides)
    elif args.preset:
        config = preset(args.preset, **overrides)
    else:
        config = ExperimentConfig(**overrides)
    print(f"task={config.task} method={config.method} schedule={config.schedule} "
          f"S={config.S} epochs={config.epochs} NFE={config.nfe} seed={config.seed}")
    record = run_experiment(config)
    for row in record.rows:
        print(f"epoch {row.epoch:3d}  loss {row.loss:.6g}  psnr {row.psnr:.3f}  ssim {row.ssim:.4f}")
    print(f"wrote {config.out} (NFE {record.nfe}, {record.wall_clock:.2f}s)")
    return EXIT_OK


def _suite(args) -> int:
    from .experiment import ablation_suite

    if args.seeds < 1 or args.workers < 1:
        raise ConfigError("--seeds and --workers must be positive")
    first = args.seed or 0
    rows = ablation_suite(args.name, args.out or "runs", range(first, first + args.seeds), args.workers)
    for row in rows:
        print(f"{row['run_id']:28s} nfe={row['nfe']:4d} psnr={row['final_psnr']:.3f} "
              f"loss={row['final_loss']:.6g}")
    return EXIT_OK


def _oracle(args) -> int:
    from .checks import CHECKS, run_check

    if args.check not in CHECKS:
        raise ConfigError(f"unknown check {args.check!r}; choose from {tuple(CHECKS)}")
    result = run_check(args.check)
    print(result.line())
    return EXIT_OK if result.passed else EXIT_NUMERIC


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"run": _run, "suite": _suite, "oracle": _oracle}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, ConvergenceError, RuntimeError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
