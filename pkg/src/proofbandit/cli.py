"""Command line: ``proofbandit run | plot | presets``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from proofbandit.harness import (
    FAILURE_THRESHOLD,
    PRESET_NAMES,
    ConfigError,
    load_config,
    preset,
    run_experiment,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="proofbandit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=PRESET_NAMES)
    src.add_argument("--config", help="experiment JSON (a manifest.json also works)")
    run.add_argument("--seed", type=int, help="master seed")
    run.add_argument("--reps", type=int, help="number of replications")
    run.add_argument("--T", type=int, dest="T", help="number of rounds")
    run.add_argument("--out", help="output directory")
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--plot", action="store_true", help="also render regret.svg")

    pl = sub.add_parser("plot", help="plot an aggregate CSV")
    pl.add_argument("--in", dest="input", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--title")

    sub.add_parser("presets", help="list preset names")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    if args.command == "presets":
        for name in PRESET_NAMES:
            cfg = preset(name)
            kinds = ",".join(p.label for p in cfg.policies)
            print(f"{name}\tT={cfg.T}\treps={cfg.replications}\tpolicies={kinds}")
        return EXIT_OK

    if args.command == "plot":
        from proofbandit.plotting import SchemaError, plot

        try:
            plot(args.input, args.out, title=args.title)
        except (SchemaError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK

    try:
        cfg = preset(args.preset) if args.preset else load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["master_seed"] = args.seed
        if args.reps is not None:
            overrides["replications"] = args.reps
        if args.T is not None:
            overrides["T"] = args.T
        if args.workers is not None:
            overrides["workers"] = args.workers
        cfg = replace(cfg, **overrides)
        result = run_experiment(cfg, output_dir=args.out)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    print(f"wrote {result.output_dir}")
    if args.plot:
        from proofbandit.plotting import plot

        plot(result.output_dir / "aggregate.csv", result.output_dir / "regret.svg", title=cfg.name)
    for label, s in result.aggregate.items():
        print(f"{label}: avg regret at t={cfg.T}: {s['avg_regret_mean'][-1]:.5f} +- {s['avg_regret_std'][-1]:.5f}")
    if result.failure_rate > FAILURE_THRESHOLD:
        print(f"error: {len(result.failed)} of {cfg.replications} replications failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
