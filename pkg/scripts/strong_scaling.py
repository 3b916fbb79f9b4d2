"""Strong-scaling sweep of one operation plus the two-term cost model.

Prints the model's relative-performance row for the reference constants a=0.0065, b=1.57,
then times the chosen operation on the simulated cluster, fits its own
constants and prints the analysis table.  The CSV goes to ``--out``.
"""
import argparse
import warnings

from shardarray.bench import Scenario, analyze_strong, emit_csv, estimated_performance, fit_strong, run_scenario
from shardarray.bench.analysis import format_table


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--op", default="sum")
    parser.add_argument("--size", default="256x256")
    parser.add_argument("--ranks", default="1,2,4,8")
    parser.add_argument("--reps", type=int, default=5)
    parser.add_argument("--out", default="strong_scaling.csv")
    args = parser.parse_args()

    print("model with a=0.0065, b=1.57:")
    for n in (1, 4, 8, 16, 32, 64, 128, 256):
        print(f"  n={n:<4d} p_est={100 * estimated_performance(n, 0.0065, 1.57):.3g} %")

    shape = tuple(int(d) for d in args.size.split("x"))
    ranks = tuple(int(r) for r in args.ranks.split(","))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rows = run_scenario(Scenario("strong_scaling", args.op, (shape,), ranks, args.reps))
    emit_csv(rows, args.out)
    times = {m.ranks: m.best_time_seconds for m in rows}
    a, b = fit_strong(times)
    print(f"\nmeasured {args.op} on {shape}, fitted t(n) = {a:.3g}*n + {b:.3g}/n")
    print(format_table(analyze_strong(times, a, b)))


if __name__ == "__main__":
    main()
