"""Reassemble a distributed array on every rank from one rank's local instance."""
import numpy as np

from shardarray import DArray, get_librarian, run_cluster


def program(ctx):
    obj = DArray(np.arange(16).reshape(4, 4), comm=ctx)
    obj_list = (obj, 2 * obj, 3 * obj, 4 * obj)
    index_list = ctx.allgather(obj_list[ctx.rank].index)
    out = []
    for index in index_list:
        current = get_librarian(ctx)[index]
        out.append((index, current[:, 2:4].get_local_data()))
    return out


def main():
    res = run_cluster(4, program)
    for i in range(4):
        print(f"Index: {res[0][i][0]}")
        for rank, blocks in enumerate(res):
            print((rank, blocks[i][1]))


if __name__ == "__main__":
    main()
