"""Show how the four distribution strategies place a 4x4 array on three ranks."""
import numpy as np

from shardarray import DArray, run_cluster


def program(ctx):
    a = np.arange(16).reshape(4, 4)
    out = [(s, DArray(a, strategy=s, comm=ctx).get_local_data()) for s in ("not", "equal", "fftw")]
    obj = DArray(local_data=a + ctx.rank, strategy="freeform", comm=ctx)
    out.append(("freeform", obj.get_local_data()))
    return out, obj.get_full_data()


def main():
    res = run_cluster(3, program)
    for i in range(4):
        for rank, (rows, _) in enumerate(res):
            name, data = rows[i]
            print((rank, name, data))
    print((0, "freeform", res[0][1]))


if __name__ == "__main__":
    main()
