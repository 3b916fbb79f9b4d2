"""Compare the chunked iterator with element-by-element indexing on one and two ranks."""
import argparse

from shardarray.bench import measure


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--length", type=int, default=1000)
    parser.add_argument("--reps", type=int, default=5)
    args = parser.parse_args()
    for ranks in (1, 2):
        fast = measure("iterate", (args.length,), ranks, args.reps)
        slow = measure("iterate_getitem", (args.length,), ranks, args.reps)
        print(
            f"{ranks} rank(s): iterator {fast.best_time_seconds * 1e3:.2f} ms "
            f"({fast.messages} msgs), getitem loop {slow.best_time_seconds * 1e3:.2f} ms "
            f"({slow.messages} msgs), speedup {slow.best_time_seconds / fast.best_time_seconds:.1f}x"
        )


if __name__ == "__main__":
    main()
