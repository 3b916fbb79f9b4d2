"""Scaling scenarios timed under the simulated cluster."""
from __future__ import annotations

import csv
import dataclasses
import math
import os
import time
import warnings
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from ..darray import DArray
from ..transport import CommContext, run_cluster

KINDS = ("size_scaling", "weak_scaling", "strong_scaling", "iterator")
CSV_HEADER = ("op", "ranks", "elements", "seconds", "messages", "bytes")


@dataclasses.dataclass(frozen=True)
class Scenario:
    """One benchmark sweep.

    ``sizes`` are global shapes, except for ``weak_scaling`` where they are
    per-rank shapes and axis 0 is multiplied by the rank count.
    """

    kind: str
    op_name: str
    sizes: tuple[tuple[int, ...], ...]
    rank_counts: tuple[int, ...] = (1,)
    repetitions: int = 5
    chunk: int | None = None
    checks: bool = True
    timeout: float = 60.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.kind != "iterator" and self.op_name not in OPS:
            raise ValueError(f"unknown op {self.op_name!r}; choose from {', '.join(OPS)}")
        if self.repetitions < 3:
            raise ValueError("at least 3 repetitions are required")
        if not self.sizes or not self.rank_counts:
            raise ValueError("sizes and rank counts must be non-empty")
        if any(n < 1 for n in self.rank_counts):
            raise ValueError("rank counts must be positive")
        if any(not s or any(d < 1 for d in s) for s in self.sizes):
            raise ValueError("sizes must be non-empty shapes with positive extents")
        if self.chunk is not None and self.chunk < 1:
            raise ValueError("chunk must be positive")

    def configurations(self) -> list[tuple[tuple[int, ...], int]]:
        out = []
        for shape in self.sizes:
            for n in self.rank_counts:
                if self.kind == "weak_scaling":
                    out.append(((shape[0] * n,) + tuple(shape[1:]), n))
                else:
                    out.append((tuple(shape), n))
        return out


@dataclasses.dataclass(frozen=True)
class Measurement:
    op_name: str
    ranks: int
    global_elements: int
    best_time_seconds: float
    messages: int
    bytes: int

    def row(self) -> tuple:
        return (
            self.op_name, self.ranks, self.global_elements,
            f"{self.best_time_seconds:.9g}", self.messages, self.bytes,
        )


@dataclasses.dataclass
class _Op:
    setup: Callable[[CommContext, tuple[int, ...], bool, int | None], Any]
    run: Callable[[Any], Any]
    needs_2d: bool = False


def _float_array(ctx, shape, checks, chunk=None):
    data = np.arange(math.prod(shape), dtype=np.float64).reshape(shape)
    return DArray(data, comm=ctx, checks=checks)


def _flat_array(dtype):
    def setup(ctx, shape, checks, chunk=None):
        n = math.prod(shape)
        data = np.arange(n, dtype=dtype) % 256 if dtype == np.int64 else np.arange(n, dtype=dtype)
        x = DArray(data, comm=ctx, checks=checks)
        return x, chunk

    return setup


def _init(ctx, shape, checks, chunk=None):
    return ctx, shape, checks


def _exhaust(it: Iterable) -> None:
    for _ in it:
        pass


def _getitem_loop(state) -> None:
    x, _ = state
    for j in range(len(x)):
        x[j]


OPS: dict[str, _Op] = {
    "init": _Op(_init, lambda s: DArray(global_shape=s[1], comm=s[0], checks=s[2])),
    "copy": _Op(_float_array, lambda x: x.copy()),
    "copy_empty": _Op(_float_array, lambda x: x.copy_empty()),
    "max": _Op(_float_array, lambda x: x.max()),
    "sum": _Op(_float_array, lambda x: x.sum()),
    "sum_axis0": _Op(_float_array, lambda x: x.sum(axis=0), needs_2d=True),
    "sum_axis1": _Op(_float_array, lambda x: x.sum(axis=1), needs_2d=True),
    "slice_rev2": _Op(_float_array, lambda x: x[::-2]),
    "add_zero": _Op(_float_array, lambda x: x + 0),
    "add_obj": _Op(_float_array, lambda x: x + x),
    "iadd_obj": _Op(_float_array, lambda x: x.__iadd__(x)),
    "sqrt": _Op(_float_array, lambda x: x.sqrt()),
    "bincount": _Op(_flat_array(np.int64), lambda s: s[0].bincount()),
    "iterate": _Op(_flat_array(np.float64), lambda s: _exhaust(s[0].iterate(s[1]))),
    "iterate_getitem": _Op(_flat_array(np.float64), _getitem_loop),
}


def _bench_program(ctx: CommContext, op: _Op, shape, reps: int, checks: bool, chunk):
    state = op.setup(ctx, shape, checks, chunk)
    times = []
    first = None
    for _ in range(reps):
        ctx.barrier()
        before = ctx.counters.snapshot()
        t0 = time.perf_counter()
        op.run(state)
        elapsed = time.perf_counter() - t0
        delta = ctx.counters.snapshot() - before
        ctx.barrier()
        times.append(elapsed)
        if first is None:
            first = delta
    return times, first


def measure(op_name: str, shape: Sequence[int], ranks: int, reps: int = 5,
            checks: bool = True, chunk: int | None = None, timeout: float = 60.0) -> Measurement:
    op = OPS[op_name]
    shape = tuple(shape)
    if op.needs_2d and len(shape) < 2:
        raise ValueError(f"{op_name} needs a 2-d shape, got {shape}")
    results = run_cluster(ranks, _bench_program, op, shape, reps, checks, chunk, timeout=timeout)
    # a repetition lasts as long as its slowest rank; keep the best repetition
    per_rep = np.max([times for times, _ in results], axis=0)
    best = max(float(per_rep.min()), np.finfo(float).tiny)
    return Measurement(
        op_name, ranks, math.prod(shape), best,
        sum(c.messages_sent for _, c in results),
        sum(c.bytes_sent for _, c in results),
    )


def run_scenario(s: Scenario) -> list[Measurement]:
    cpus = os.cpu_count() or 1
    if max(s.rank_counts) > cpus:
        warnings.warn(
            f"{max(s.rank_counts)} ranks exceeds hardware parallelism ({cpus} cpus); "
            "timings are oversubscribed",
            RuntimeWarning,
            stacklevel=2,
        )
    ops = ("iterate", "iterate_getitem") if s.kind == "iterator" else (s.op_name,)
    rows = []
    for shape, n in s.configurations():
        if s.kind == "iterator":
            shape = (math.prod(shape),)
        for name in ops:
            rows.append(measure(name, shape, n, s.repetitions, s.checks, s.chunk, s.timeout))
    return rows


def emit_csv(rows: Sequence[Measurement], path: str | os.PathLike) -> None:
    if not rows:
        raise ValueError("no measurements to write")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for m in rows:
            writer.writerow(m.row())


def read_csv(path: str | os.PathLike) -> list[Measurement]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        return [
            Measurement(op, int(r), int(e), float(t), int(m), int(b))
            for op, r, e, t, m, b in reader
        ]
