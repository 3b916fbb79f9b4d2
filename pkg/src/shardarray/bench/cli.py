"""``bench`` command line entry point."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from . import analysis
from .scenarios import OPS, Scenario, emit_csv, run_scenario

log = logging.getLogger("shardarray.bench")

_KINDS = {
    "size": "size_scaling",
    "weak": "weak_scaling",
    "strong": "strong_scaling",
    "iterator": "iterator",
}


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("values must be positive")
    return values


def _shape_list(text: str) -> tuple[tuple[int, ...], ...]:
    """``1024,256x256`` -> ((1024,), (256, 256))."""
    shapes = []
    for token in text.split(","):
        try:
            shape = tuple(int(d) for d in token.lower().split("x"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad size {token!r}; use N or RxC") from None
        if not shape or any(d < 1 for d in shape):
            raise argparse.ArgumentTypeError(f"bad size {token!r}")
        shapes.append(shape)
    return tuple(shapes)


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="Scaling benchmarks on the simulated cluster.")
    p.add_argument("--scenario", required=True, choices=sorted(_KINDS))
    p.add_argument("--op", default="sum", choices=sorted(OPS), help="operation to time (ignored for iterator)")
    p.add_argument("--ranks", type=_int_list, default=(1,), help="comma-separated rank counts")
    p.add_argument("--size", type=_shape_list, required=True,
                   help="comma-separated sizes, each N (1-d) or RxC (2-d); per rank for weak scaling")
    p.add_argument("--reps", type=int, default=5, help="repetitions per configuration (>= 3)")
    p.add_argument("--chunk", type=_positive, default=None, help="iterator chunk size (default: whole shard)")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--no-checks", action="store_true", help="skip cross-rank consistency checks on creation")
    p.add_argument("--fit-a", type=float, default=None, help="per-rank cost a in t(n) = a*n + b/n")
    p.add_argument("--fit-b", type=float, default=None, help="work cost b in t(n) = a*n + b/n")
    p.add_argument("--timeout", type=float, default=60.0, help="deadlock timeout per run in seconds")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if (args.fit_a is None) != (args.fit_b is None):
        parser.error("--fit-a and --fit-b go together")
    try:
        scenario = Scenario(
            kind=_KINDS[args.scenario],
            op_name=args.op,
            sizes=args.size,
            rank_counts=args.ranks,
            repetitions=args.reps,
            chunk=args.chunk,
            checks=not args.no_checks,
            timeout=args.timeout,
        )
        rows = run_scenario(scenario)
    except ValueError as exc:
        parser.error(str(exc))
    try:
        emit_csv(rows, args.out)
    except OSError as exc:
        print(f"bench: cannot write {args.out}: {exc}", file=sys.stderr)
        return 1
    log.info("wrote %d rows to %s", len(rows), args.out)

    if scenario.kind == "strong_scaling" and len(scenario.sizes) == 1:
        times = {m.ranks: m.best_time_seconds for m in rows}
        if 1 in times and 2 in times:
            a, b = analysis.fit_strong(times)
            log.info("fitted t(n) = %.4g*n + %.4g/n", a, b)
            if args.fit_a is not None:
                a, b = args.fit_a, args.fit_b
            log.info(analysis.format_table(analysis.analyze_strong(times, a, b)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
