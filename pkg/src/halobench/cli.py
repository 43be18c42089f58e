"""Command-line entry point: ``halobench``.

Exit codes: 0 success, 2 verification failure, 3 watchdog timeout, 4 config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import kernels
from .exchange import STRATEGIES
from .harness import (BenchConfig, ConfigError, WatchdogTimeout, emit_csv, run_benchmark,
                      run_verification)

EXIT_OK, EXIT_VERIFY, EXIT_TIMEOUT, EXIT_CONFIG = 0, 2, 3, 4


def _int_tuple(sep):
    def parse(text):
        try:
            return tuple(int(x) for x in text.lower().split(sep))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected integers separated by {sep!r}: {text!r}")
    return parse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="halobench",
        description="Time halo exchanges with non-blocking, persistent and partitioned requests.")
    p.add_argument("--cells", type=_int_tuple(","), metavar="X,Y[,Z]",
                   help="global mesh extents (default: 16 cells per rank per axis)")
    p.add_argument("--ranks", type=int, default=8)
    p.add_argument("--grid", type=_int_tuple("x"), metavar="AxBxC",
                   help="process grid override")
    p.add_argument("--workers", type=int, default=4, help="packing workers per rank")
    p.add_argument("--strategy", action="append", choices=STRATEGIES + ("all",),
                   help="repeatable; default all three")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--vars", type=int, default=3)
    p.add_argument("--ghost-width", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verify", action="store_true", help="run the correctness oracles only")
    p.add_argument("--skip-verify", action="store_true",
                   help="bench without the up-front verification pass")
    p.add_argument("--csv", metavar="PATH", help="append one row per (strategy, run)")
    p.add_argument("--timeout", type=float, default=30.0, help="watchdog: abort a run after this many seconds without progress")
    p.add_argument("--sweep", metavar="FILE",
                   help="JSON list of option overrides, one benchmark per entry")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _configs(args, overrides: dict) -> list[BenchConfig]:
    opts = {
        "cells": args.cells, "ranks": args.ranks, "grid": args.grid, "workers": args.workers,
        "strategy": args.strategy, "iterations": args.iterations, "runs": args.runs,
        "vars": args.vars, "ghost_width": args.ghost_width, "seed": args.seed,
        "timeout": args.timeout,
    }
    unknown = set(overrides) - set(opts)
    if unknown:
        raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
    opts.update(overrides)
    strategies = opts["strategy"] or ["all"]
    if isinstance(strategies, str):
        strategies = [strategies]
    if "all" in strategies:
        strategies = list(STRATEGIES)
    cells, grid = opts["cells"], opts["grid"]
    return [
        BenchConfig(
            ranks=opts["ranks"],
            global_extents=tuple(cells) if cells else None,
            grid_dims=tuple(grid) if grid else None,
            n_workers=opts["workers"],
            strategy=s,
            iterations=opts["iterations"],
            runs=opts["runs"],
            num_vars=opts["vars"],
            ghost_width=opts["ghost_width"],
            seed=opts["seed"],
            mode="verify" if args.verify else "bench",
            timeout=opts["timeout"],
        )
        for s in dict.fromkeys(strategies)
    ]


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        sweep = [{}]
        if args.sweep:
            with open(args.sweep) as fh:
                sweep = json.load(fh)
            if not isinstance(sweep, list) or not all(isinstance(e, dict) for e in sweep):
                raise ConfigError("sweep file must hold a JSON list of objects")
        plans = [_configs(args, entry) for entry in sweep]
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    print(f"kernels: {kernels.BACKEND}")
    try:
        for configs in plans:
            if args.verify or not args.skip_verify:
                first = configs[0]
                report = run_verification(first, [c.strategy for c in configs])
                print(report.summary())
                if not report.passed:
                    return EXIT_VERIFY
            if args.verify:
                continue
            for cfg in configs:
                rep = run_benchmark(cfg)
                print(f"{cfg.strategy:12s} ranks={cfg.ranks} grid={cfg.grid} "
                      f"workers={cfg.n_workers} msg={rep.message_scalars} "
                      f"mean={rep.mean_seconds:.4f}s per_exchange={rep.mean_seconds_per_exchange:.3e}s")
                if args.csv:
                    emit_csv(rep, args.csv)
    except WatchdogTimeout as exc:
        print(f"watchdog: {exc}", file=sys.stderr)
        return EXIT_TIMEOUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
