"""Command line entry point.

    lpnlab run --config <path> --out <dir> [--seed N] [--jobs N]
    lpnlab gradcheck
    lpnlab render --checkpoint <path> --out <img>

Exit codes: 0 success, 1 check or run failure, 2 configuration error.
The LPNLAB_THREADS environment variable overrides --jobs.
"""

from __future__ import annotations

import argparse
import os
import sys

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpnlab",
        description="lp-constrained softmax loss experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an experiment config")
    run.add_argument("--config", required=True, help="JSON experiment config")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None,
                     help="override the config's master seed")
    run.add_argument("--jobs", type=int, default=1,
                     help="parallel worker count for trials/sweep cells")

    sub.add_parser("gradcheck",
                   help="run the finite-difference gradient suite")

    rend = sub.add_parser("render",
                          help="rasterize a checkpoint's decision boundary")
    rend.add_argument("--checkpoint", required=True, help="model checkpoint")
    rend.add_argument("--out", required=True, help="output PGM path")

    return parser


def _jobs_from_env(requested: int) -> int:
    env = os.environ.get("LPNLAB_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            print(f"lpnlab: ignoring non-integer LPNLAB_THREADS={env!r}",
                  file=sys.stderr)
    return max(1, requested)


def _cmd_run(args) -> int:
    from .experiments import ConfigError, parse_config, run_experiment

    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    except ConfigError as exc:
        print(f"lpnlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = run_experiment(cfg, args.out,
                                  jobs=_jobs_from_env(args.jobs))
    except Exception as exc:  # noqa: BLE001 - report and signal failure
        print(f"lpnlab: run failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"wrote {len(manifest.files)} artifacts + manifest.json to {args.out}")
    for key, stat in sorted(manifest.summary.items()):
        print(f"  {key}: {stat['mean']:.4f} +/- {stat['ci95']:.4f}")
    return EXIT_OK


def _cmd_gradcheck() -> int:
    from .gradcheck import run_gradient_suite

    results = run_gradient_suite()
    failed = False
    for result in results:
        print(result)
        failed = failed or not result.passed
    return EXIT_FAILURE if failed else EXIT_OK


def _cmd_render(args) -> int:
    from .models import load_checkpoint
    from .render import decision_grid, write_pgm

    try:
        classifier = load_checkpoint(args.checkpoint)
    except (OSError, ValueError) as exc:
        print(f"lpnlab: cannot load checkpoint: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        grid = decision_grid(classifier)
        write_pgm(grid, args.out, num_classes=classifier.spec.num_classes)
    except Exception as exc:  # noqa: BLE001
        print(f"lpnlab: render failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"wrote {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "gradcheck":
        return _cmd_gradcheck()
    if args.command == "render":
        return _cmd_render(args)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
