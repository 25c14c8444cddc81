"""Command-line entry point for running experiments."""

from __future__ import annotations

import argparse
import sys

from .engine import EngineError
from .harness import (
    ConfigError,
    PRESETS,
    apply_overrides,
    load_config,
    preset,
    run_experiment,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sonata",
        description="Run a distributed-optimization experiment and write CSV traces.",
    )
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", metavar="PATH", help="experiment config file")
    source.add_argument("--preset", choices=PRESETS, help="bundled experiment")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--runs", type=int, help="Monte-Carlo run count override")
    parser.add_argument("--iters", type=int, help="iteration budget override")
    parser.add_argument("--variant", help="algorithm variant override")
    parser.add_argument("--out", help="output directory override")
    parser.add_argument("--svg", action="store_true", help="also render figure.svg")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = preset(args.preset) if args.preset else load_config(args.config)
        cfg = apply_overrides(
            cfg,
            seed=args.seed,
            runs=args.runs,
            iters=args.iters,
            variant=args.variant,
            out=args.out,
            svg=True if args.svg else None,
        )
        trace = run_experiment(cfg)
    except (ConfigError, EngineError, OSError, RuntimeError, ValueError) as exc:
        first = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {first}", file=sys.stderr)
        return 1
    print(
        f"wrote {cfg.out_dir}/aggregate.csv "
        f"({trace.run_count} runs, {trace.failed_count} failed, "
        f"final J_mean={trace.j_mean[-1]:.3e}, D_mean={trace.d_mean[-1]:.3e})"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
