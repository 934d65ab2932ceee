"""The ``bench`` command line: wordcount and join benchmark runs to CSV."""

from __future__ import annotations

import argparse
import sys

from .bench import (
    DEFAULT_NODES,
    DEFAULT_THREADS,
    BenchResult,
    run_join,
    run_wordcount,
    write_csv,
)
from .core import StreamloomError
from .join import JOIN_STRATEGY_NAMES, MatrixConfig
from .strategies import STRATEGY_NAMES


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bench",
        description="Run the wordcount-skew and stream-join benchmarks, emitting CSV.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    wc = sub.add_parser("wordcount", help="word counting over a Zipf-skewed stream")
    wc.add_argument("--strategy", required=True, choices=STRATEGY_NAMES)
    wc.add_argument("--z", type=float, required=True, help="Zipf exponent")
    wc.add_argument("--workers", type=int, default=80)
    wc.add_argument("--records", type=int, default=100_000)
    wc.add_argument("--merge", action="store_true",
                    help="merge split partial counts at quiescence")
    wc.add_argument("--work-us", type=int, default=100,
                    help="simulated work per processed record, microseconds")
    wc.add_argument("--seed", type=int, default=0)
    wc.add_argument("--runs", type=int, default=1,
                    help="repetitions with derived seeds (seed, seed+1, ...)")
    wc.add_argument("--nodes", type=int, default=DEFAULT_NODES)
    wc.add_argument("--threads", type=int, default=DEFAULT_THREADS)
    wc.add_argument("--out", default="-", help="CSV path, or - for stdout")

    jn = sub.add_parser("join", help="cascade equi-joins over synthetic tables")
    jn.add_argument("--query", required=True, choices=("q5", "q7"))
    jn.add_argument("--strategy", required=True, choices=JOIN_STRATEGY_NAMES)
    jn.add_argument("--matrix", default="4x5", help="join-matrix grid, RxC")
    jn.add_argument("--subgroups", type=int, default=None,
                    help="ContRand subgroup count (default 5)")
    jn.add_argument("--scale", type=float, default=0.01)
    jn.add_argument("--rate-region", type=int, default=None, help="records/second")
    jn.add_argument("--rate-nation", type=int, default=None, help="records/second")
    jn.add_argument("--rate-supplier", type=int, default=None, help="records/second")
    jn.add_argument("--rate-lineitems", type=int, default=None, help="records/second")
    jn.add_argument("--seed", type=int, default=0)
    jn.add_argument("--nodes", type=int, default=DEFAULT_NODES)
    jn.add_argument("--threads", type=int, default=DEFAULT_THREADS)
    jn.add_argument("--out", default="-", help="CSV path, or - for stdout")
    return parser


def _run(args: argparse.Namespace) -> list:
    if args.command == "wordcount":
        return [
            run_wordcount(
                args.strategy,
                args.z,
                args.workers,
                args.records,
                merge=args.merge,
                work_us=args.work_us,
                seed=args.seed + i,
                nodes=args.nodes,
                threads=args.threads,
            )
            for i in range(args.runs)
        ]
    rates = {
        "region": args.rate_region,
        "nation": args.rate_nation,
        "supplier": args.rate_supplier,
        "lineitem": args.rate_lineitems,
    }
    return [
        run_join(
            args.query,
            args.strategy,
            matrix=MatrixConfig.parse(args.matrix),
            subgroups=args.subgroups,
            scale=args.scale,
            rates={k: v for k, v in rates.items() if v},
            seed=args.seed,
            nodes=args.nodes,
            threads=args.threads,
        )
    ]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        results = _run(args)
    except (StreamloomError, ValueError) as exc:
        print(f"bench: error: {exc}", file=sys.stderr)
        return 2
    if args.out == "-":
        write_csv(results, sys.stdout)
    else:
        with open(args.out, "w", newline="") as fh:
            write_csv(results, fh)
    return 0


if __name__ == "__main__":
    sys.exit(main())
