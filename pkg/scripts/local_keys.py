"""Two ranks ask for different pieces of the same array in one collective call."""
import numpy as np

from shardarray import DArray, run_cluster


def program(ctx):
    rank = ctx.rank
    obj = DArray(np.arange(16) * 2, comm=ctx)
    lines = [obj.get_local_data().copy()]
    lines.append(obj.get_data(key=slice(None, None, 2)).get_local_data())
    lines.append(obj.get_data(key=slice(None, None, 2 + rank), local_keys=True).get_local_data())
    keys = (DArray([1, 3, 5, 7], comm=ctx), DArray([2, 4, 6, 8], comm=ctx))
    lines.append(obj.get_data(key=keys[rank], local_keys=True).get_local_data())
    return lines


def main():
    res = run_cluster(2, program)
    titles = ["initial", "same slice everywhere", "slice step 2 + rank", "rank-specific index arrays"]
    for i, title in enumerate(titles):
        print(f"-- {title}")
        for rank, lines in enumerate(res):
            print((rank, lines[i]))


if __name__ == "__main__":
    main()
