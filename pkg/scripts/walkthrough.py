"""Four ranks read and write one 4x4 array: shards, a slice, a block write, consolidation."""
import numpy as np

from shardarray import DArray, run_cluster


def program(ctx):
    obj = DArray(np.arange(16).reshape(4, 4), comm=ctx)
    shards = obj.get_local_data().copy()
    sliced = obj[0:3:2, 1:3].get_local_data()
    obj[2:4, 1:3] = -np.arange(4).reshape(2, 2)
    return shards, sliced, obj.get_local_data().copy(), obj.get_full_data()


def main():
    out = run_cluster(4, program)
    for stage, title in enumerate(["local shards", "obj[0:3:2, 1:3] per rank", "after writing the block"]):
        print(f"-- {title}")
        for rank, res in enumerate(out):
            print((rank, res[stage]))
    print("-- consolidated on rank 0")
    print((0, out[0][3]))


if __name__ == "__main__":
    main()
