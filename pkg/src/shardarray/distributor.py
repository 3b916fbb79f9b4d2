"""Distribution strategies and everything that depends on the data layout.

Slicing strategies (``equal``, ``fftw``, ``freeform``) cut the global array
along axis 0 into one contiguous, possibly empty, row interval per rank.
``not`` keeps a full replica on every rank.
"""
from __future__ import annotations

import dataclasses
import enum
import hashlib
import threading
import weakref
from typing import Any, Sequence

import numpy as np

from . import tensor
from .tensor import AxisIndex, BoolMask, FancyTuple, ScalarTuple, Slices
from .transport import CommContext


class Strategy(str, enum.Enum):
    NOT = "not"
    EQUAL = "equal"
    FFTW = "fftw"
    FREEFORM = "freeform"

    @classmethod
    def parse(cls, value: "Strategy | str") -> "Strategy":
        try:
            return cls(value)
        except ValueError:
            names = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown distribution strategy {value!r} (expected one of {names})") from None

    @property
    def slicing(self) -> bool:
        return self is not Strategy.NOT


def equal_lengths(n: int, size: int) -> tuple[int, ...]:
    base, extra = divmod(n, size)
    return tuple(base + 1 if r < extra else base for r in range(size))


def fftw_lengths(n: int, size: int) -> tuple[int, ...]:
    # blocks of ceil(n / size) rows; trailing ranks may end up empty
    block = -(-n // size)
    return tuple(min(block, max(0, n - r * block)) for r in range(size))


@dataclasses.dataclass(frozen=True)
class Layout:
    """Per-rank half-open row intervals ``[starts[r], ends[r])`` along axis 0."""

    strategy: Strategy
    global_shape: tuple[int, ...]
    starts: tuple[int, ...]
    ends: tuple[int, ...]

    def __post_init__(self):
        if self.strategy.slicing:
            n = self.global_shape[0]
            bounds = (0,) + self.ends
            if self.starts != bounds[:-1] or bounds[-1] != n or any(
                e < s for s, e in zip(self.starts, self.ends)
            ):
                raise ValueError(f"intervals {list(zip(self.starts, self.ends))} do not partition [0, {n})")

    @property
    def size(self) -> int:
        return len(self.starts)

    @property
    def lengths(self) -> tuple[int, ...]:
        return tuple(e - s for s, e in zip(self.starts, self.ends))

    def local_shape(self, rank: int) -> tuple[int, ...]:
        return (self.ends[rank] - self.starts[rank],) + self.global_shape[1:]

    def same_placement(self, other: "Layout") -> bool:
        """True when shards need no data movement to switch layouts."""
        if self.global_shape != other.global_shape:
            return False
        if not self.strategy.slicing or not other.strategy.slicing:
            return self.strategy.slicing == other.strategy.slicing
        return self.starts == other.starts


def _from_lengths(strategy: Strategy, global_shape: tuple[int, ...], lengths: Sequence[int]) -> Layout:
    ends = tuple(int(e) for e in np.cumsum(lengths, dtype=np.int64))
    starts = (0,) + ends[:-1]
    return Layout(strategy, global_shape, starts, ends)


def plan(strategy: Strategy | str, global_shape: Sequence[int], size: int) -> Layout:
    strategy = Strategy.parse(strategy)
    global_shape = tuple(int(s) for s in global_shape)
    if size < 1:
        raise ValueError("size must be >= 1")
    if not global_shape:
        raise ValueError("distributed arrays need at least one dimension")
    n = global_shape[0]
    if strategy is Strategy.NOT:
        return Layout(strategy, global_shape, (0,) * size, (n,) * size)
    if strategy is Strategy.FFTW:
        return _from_lengths(strategy, global_shape, fftw_lengths(n, size))
    # freeform without explicit lengths falls back to the balanced split
    return _from_lengths(strategy, global_shape, equal_lengths(n, size))


def plan_freeform(local_lengths: Sequence[int], trailing_shape: Sequence[int] = ()) -> Layout:
    lengths = [int(n) for n in local_lengths]
    if any(n < 0 for n in lengths):
        raise ValueError("local lengths must be non-negative")
    global_shape = (sum(lengths),) + tuple(trailing_shape)
    return _from_lengths(Strategy.FREEFORM, global_shape, lengths)


@dataclasses.dataclass
class LocalizedKey:
    """A global key translated to one rank's shard.

    ``positions`` locates this rank's selected items along axis 0 of the
    (global) result.  When ``aligned`` is true every rank's positions already
    coincide with its interval in ``result_layout``; otherwise the selection
    has to be routed to the result layout.
    """

    kind: str
    local_key: Any
    result_shape: tuple[int, ...]
    result_layout: Layout | None
    positions: Any = None
    aligned: bool = True
    owner: int | None = None


def _slice_counts(start: int, step: int, count: int, starts: np.ndarray, ends: np.ndarray):
    """For rows ``start + k*step`` (k < count), the k-range falling in each interval."""
    if step > 0:
        k0 = np.maximum(0, -((start - starts) // step))
        k1 = np.maximum(0, -((start - ends) // step))
    else:
        mag = -step
        k0 = np.maximum(0, (start - ends) // mag + 1)
        k1 = np.maximum(0, (start - starts) // mag + 1)
    k0 = np.minimum(k0, count)
    k1 = np.minimum(k1, count)
    return k0, np.maximum(k0, k1)


class Distributor:
    """Layout plus communicator; owns distribution, collection and key localization."""

    def __init__(self, layout: Layout, dtype: Any, comm: CommContext):
        if layout.size != comm.size:
            raise ValueError(f"layout has {layout.size} ranks, communicator {comm.size}")
        self.layout = layout
        self.dtype = tensor.as_dtype(dtype)
        self.comm = comm

    def __repr__(self) -> str:
        return (
            f"Distributor({self.strategy.value}, global_shape={self.global_shape}, "
            f"local_shape={self.local_shape}, dtype={self.dtype})"
        )

    @property
    def strategy(self) -> Strategy:
        return self.layout.strategy

    @property
    def global_shape(self) -> tuple[int, ...]:
        return self.layout.global_shape

    @property
    def local_shape(self) -> tuple[int, ...]:
        return self.layout.local_shape(self.comm.rank)

    @property
    def local_start(self) -> int:
        return self.layout.starts[self.comm.rank]

    @property
    def local_end(self) -> int:
        return self.layout.ends[self.comm.rank]

    def _check_shard(self, shard: np.ndarray) -> None:
        if shard.shape != self.local_shape:
            raise ValueError(f"shard shape {shard.shape} does not match layout {self.local_shape}")

    def distribute(self, data: Any, check: bool = False) -> np.ndarray:
        """Cut this rank's shard out of a globally replicated tensor; no messages."""
        data = np.asarray(data)
        if data.shape != self.global_shape:
            raise ValueError(f"data shape {data.shape} does not match {self.global_shape}")
        if check:
            self.check_replicated(data)
        if not self.strategy.slicing:
            return tensor.cast(data, self.dtype)
        return tensor.cast(data[self.local_start:self.local_end], self.dtype)

    def check_replicated(self, data: np.ndarray) -> None:
        digest = hashlib.blake2b(np.ascontiguousarray(data).tobytes(), digest_size=16).digest()
        if len(set(self.comm.allgather((data.shape, str(data.dtype), digest)))) != 1:
            raise ValueError("global data differs between ranks")

    def consolidate(self, shard: np.ndarray) -> np.ndarray:
        """Full array on every rank, assembled in rank order."""
        self._check_shard(shard)
        if not self.strategy.slicing:
            return shard.copy()
        return tensor.concat_axis0(self.comm.allgather(shard))

    def redistribute(self, shard: np.ndarray, target: "Distributor | Layout") -> np.ndarray:
        """Move shard contents so they obey ``target``'s layout."""
        self._check_shard(shard)
        dest = target.layout if isinstance(target, Distributor) else target
        return redistribute(self.comm, shard, self.layout, dest)

    def cumsum_axis0(self, shard: np.ndarray) -> np.ndarray:
        self._check_shard(shard)
        out = tensor.cumsum(shard, axis=0)
        if not self.strategy.slicing or self.comm.size == 1:
            return out
        tail = out[-1] if len(out) else np.zeros(self.global_shape[1:], dtype=out.dtype)
        offset = self.comm.exscan("sum", tail)
        out += offset
        return out

    def localize_key(self, key: Any) -> LocalizedKey:
        nkey = tensor.normalize_key(key, self.global_shape)
        return localize(nkey, self.layout, self.comm.rank)


def localize(nkey: tensor.Key, layout: Layout, rank: int) -> LocalizedKey:
    """Pure localization of a normalized global key; every rank gets a consistent view."""
    shape = layout.global_shape
    result_shape = tensor.selection_shape(nkey, shape)
    size = layout.size

    if not layout.strategy.slicing:
        if isinstance(nkey, ScalarTuple):
            return LocalizedKey("scalar", nkey, (), None, owner=rank)
        res = plan(Strategy.NOT, result_shape, size) if result_shape else None
        return LocalizedKey("local", nkey, result_shape, res, positions=slice(0, result_shape[0]) if result_shape else None)

    starts = np.asarray(layout.starts)
    ends = np.asarray(layout.ends)
    s, e = layout.starts[rank], layout.ends[rank]

    if isinstance(nkey, ScalarTuple):
        owner = int(np.searchsorted(ends, nkey.index[0], side="right"))
        local = ScalarTuple((nkey.index[0] - s,) + nkey.index[1:]) if owner == rank else None
        return LocalizedKey("scalar", local, (), None, owner=owner)

    if isinstance(nkey, AxisIndex):
        owner = int(np.searchsorted(ends, nkey.index, side="right"))
        lengths = [result_shape[0] if r == owner else 0 for r in range(size)]
        res = _from_lengths(Strategy.FREEFORM, result_shape, lengths)
        local = AxisIndex(nkey.index - s) if owner == rank else None
        return LocalizedKey("axis", local, result_shape, res, positions=slice(0, lengths[rank]), owner=owner)

    if isinstance(nkey, Slices):
        start, _, step = nkey.ranges[0]
        count = result_shape[0]
        k0, k1 = _slice_counts(start, step, count, starts, ends)
        lengths = k1 - k0
        res = _from_lengths(Strategy.FREEFORM, result_shape, lengths)
        busy = lengths > 0
        aligned = bool(np.array_equal(k0[busy], np.asarray(res.starts)[busy]))
        mine = int(lengths[rank])
        if mine:
            first = start + int(k0[rank]) * step - s
            axis0 = (first, first + mine * step, step)
        else:
            axis0 = (0, 0, 1)
        local = Slices((axis0,) + nkey.ranges[1:])
        return LocalizedKey(
            "slices", local, result_shape, res,
            positions=slice(int(k0[rank]), int(k1[rank])), aligned=aligned,
        )

    if isinstance(nkey, FancyTuple):
        rows = nkey.arrays[0]
        owners = np.searchsorted(ends, rows, side="right")
        lengths = np.bincount(owners, minlength=size)
        res = _from_lengths(Strategy.FREEFORM, result_shape, lengths)
        aligned = bool(np.all(np.diff(owners) >= 0))
        positions = np.flatnonzero(owners == rank)
        local = FancyTuple((nkey.arrays[0][positions] - s,) + tuple(a[positions] for a in nkey.arrays[1:]))
        return LocalizedKey("fancy", local, result_shape, res, positions=positions, aligned=aligned)

    if isinstance(nkey, BoolMask):
        per_row = nkey.mask.reshape(shape[0], -1).sum(axis=1) if shape[0] else np.zeros(0, int)
        csum = np.concatenate([[0], np.cumsum(per_row)])
        lengths = csum[ends] - csum[starts]
        res = _from_lengths(Strategy.FREEFORM, result_shape, lengths)
        local = BoolMask(nkey.mask[s:e])
        return LocalizedKey(
            "mask", local, result_shape, res,
            positions=slice(int(csum[s]), int(csum[e])),
        )

    raise tensor.UnsupportedKeyError(f"cannot localize {nkey!r}")


def _overlap(a0: int, a1: int, b0: int, b1: int) -> tuple[int, int]:
    lo, hi = max(a0, b0), min(a1, b1)
    return lo, max(lo, hi)


def redistribute(comm: CommContext, shard: np.ndarray, src: Layout, dst: Layout) -> np.ndarray:
    if src.global_shape != dst.global_shape:
        raise ValueError(f"global shapes differ: {src.global_shape} vs {dst.global_shape}")
    rank = comm.rank
    if src.same_placement(dst):
        return shard.copy()
    if not dst.strategy.slicing:
        return tensor.concat_axis0(comm.allgather(shard))
    d0, d1 = dst.starts[rank], dst.ends[rank]
    if not src.strategy.slicing:
        return shard[d0:d1].copy()
    s0 = src.starts[rank]
    sends = []
    for r in range(comm.size):
        lo, hi = _overlap(src.starts[rank], src.ends[rank], dst.starts[r], dst.ends[r])
        sends.append(shard[lo - s0:hi - s0])
    return tensor.concat_axis0(comm.alltoallv(sends))


def route(comm: CommContext, values: np.ndarray, positions: Any, dst: Layout) -> np.ndarray:
    """Deliver items (along axis 0) with known global result positions to ``dst``'s owners."""
    if isinstance(positions, slice):
        positions = np.arange(positions.start, positions.stop)
    positions = np.asarray(positions, dtype=np.int64)
    ends = np.asarray(dst.ends)
    owners = np.searchsorted(ends, positions, side="right")
    sends = []
    for r in range(comm.size):
        sel = owners == r
        sends.append((positions[sel], values[sel]))
    received = comm.alltoallv(sends)
    start = dst.starts[comm.rank]
    out = np.empty(dst.local_shape(comm.rank), dtype=values.dtype)
    for pos, vals in received:
        out[pos - start] = vals
    return out


class DistributorFactory:
    """Per-rank cache: equal requests return the identical distributor instance."""

    def __init__(self, comm: CommContext):
        self.comm = comm
        self._store: dict[tuple, Distributor] = {}

    def __len__(self) -> int:
        return len(self._store)

    def get(
        self,
        strategy: Strategy | str,
        global_shape: Sequence[int],
        dtype: Any,
        lengths: Sequence[int] | None = None,
    ) -> Distributor:
        strategy = Strategy.parse(strategy)
        global_shape = tuple(int(s) for s in global_shape)
        dtype = tensor.as_dtype(dtype)
        if strategy is Strategy.FREEFORM and lengths is not None:
            lengths = tuple(int(n) for n in lengths)
        else:
            lengths = None
        key = (global_shape, dtype.str, strategy, self.comm.size, lengths)
        dist = self._store.get(key)
        if dist is None:
            if lengths is not None:
                layout = plan_freeform(lengths, global_shape[1:])
                if layout.global_shape != global_shape:
                    raise ValueError(f"lengths {lengths} do not add up to {global_shape}")
            else:
                layout = plan(strategy, global_shape, self.comm.size)
            dist = self._store[key] = Distributor(layout, dtype, self.comm)
        return dist

    def for_layout(self, layout: Layout, dtype: Any) -> Distributor:
        lengths = layout.lengths if layout.strategy is Strategy.FREEFORM else None
        return self.get(layout.strategy, layout.global_shape, dtype, lengths)


_factories: "weakref.WeakKeyDictionary[CommContext, DistributorFactory]" = weakref.WeakKeyDictionary()
_factories_lock = threading.Lock()


def get_factory(comm: CommContext) -> DistributorFactory:
    with _factories_lock:
        fac = _factories.get(comm)
        if fac is None:
            fac = _factories[comm] = DistributorFactory(comm)
        return fac
