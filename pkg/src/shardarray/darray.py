"""The global-view distributed array.

A :class:`DArray` is a composed object: the rank-local shard plus a shared
:class:`~shardarray.distributor.Distributor` that knows the layout.  Every
operation on a logical array is collective; all ranks have to issue the
same calls in the same order.
"""
from __future__ import annotations

import os
from typing import Any, Iterator, Sequence

import numpy as np

from . import tensor
from .distributor import (
    Distributor,
    Layout,
    LocalizedKey,
    Strategy,
    get_factory,
    localize,
    plan,
    plan_freeform,
    redistribute,
    route,
)
from .librarian import get_librarian
from .transport import CommContext, current_context


class DArray:
    """Cluster-distributed n-dimensional array with a global-view interface.

    Construction follows a fixed precedence: an explicit ``dtype`` beats the
    dtype of ``global_data``/``local_data``, and data beats
    ``global_shape``/``local_shape``.  ``local_data``/``local_shape`` imply
    the ``freeform`` strategy; everything else defaults to ``equal``.
    """

    # make numpy defer ``ndarray <op> DArray`` to our reflected methods
    __array_ufunc__ = None

    def __init__(
        self,
        global_data: Any = None,
        *,
        global_shape: Sequence[int] | None = None,
        local_data: Any = None,
        local_shape: Sequence[int] | None = None,
        dtype: Any = None,
        strategy: Strategy | str | None = None,
        comm: CommContext | None = None,
        checks: bool = True,
    ):
        comm = comm if comm is not None else current_context()
        dist, local = _initialize(
            comm, global_data, global_shape, local_data, local_shape, dtype, strategy, checks
        )
        self._attach(dist, local)

    @classmethod
    def _from_parts(cls, dist: Distributor, local: np.ndarray) -> "DArray":
        obj = cls.__new__(cls)
        obj._attach(dist, local)
        return obj

    def _attach(self, dist: Distributor, local: np.ndarray) -> None:
        self.distributor = dist
        self.local = local
        self.index = get_librarian(dist.comm).register(self)

    # -- attributes -------------------------------------------------------

    @property
    def comm(self) -> CommContext:
        return self.distributor.comm

    @property
    def layout(self) -> Layout:
        return self.distributor.layout

    @property
    def shape(self) -> tuple[int, ...]:
        return self.distributor.global_shape

    global_shape = shape

    @property
    def local_shape(self) -> tuple[int, ...]:
        return self.local.shape

    @property
    def dtype(self) -> np.dtype:
        return self.local.dtype

    @property
    def strategy(self) -> Strategy:
        return self.distributor.strategy

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def __len__(self) -> int:
        return self.shape[0]

    def __bool__(self) -> bool:
        raise ValueError("the truth value of a distributed array is ambiguous")

    def __repr__(self) -> str:
        return (
            f"<DArray index={self.index} rank={self.comm.rank}/{self.comm.size} "
            f"strategy={self.strategy.value} shape={self.shape}>\n{self.local!r}"
        )

    # -- whole-array access -------------------------------------------------

    def get_local_data(self) -> np.ndarray:
        """This rank's shard itself (not a copy)."""
        return self.local

    def set_local_data(self, data: Any, resize: bool = False) -> None:
        """Overwrite this rank's shard in place.

        With ``resize=True`` (freeform only) the shard may change its axis-0
        length; that call is collective because the layout is re-derived.
        """
        data = tensor.asarray(data, self.dtype)
        if resize:
            if self.strategy is not Strategy.FREEFORM:
                raise ValueError("only freeform arrays can change their local length")
            self.distributor = _freeform_distributor(self.comm, data.shape, self.dtype)
            self.local = data
            return
        if data.shape != self.local.shape:
            raise ValueError(f"local data shape {data.shape} does not match {self.local.shape}")
        self.local[...] = data

    def get_full_data(self) -> np.ndarray:
        return self.distributor.consolidate(self.local)

    def set_full_data(self, data: Any) -> None:
        data = np.asarray(data)
        if data.shape != self.shape:
            raise ValueError(f"data shape {data.shape} does not match {self.shape}")
        self.local[...] = self.distributor.distribute(data)

    # -- indexing --------------------------------------------------------------

    def get_data(self, key: Any, local_keys: bool = False) -> Any:
        if local_keys:
            return self._get_local_keys(key)
        lk = self._localize(key)
        if lk.kind == "scalar":
            value = self.local[lk.local_key.index] if lk.local_key is not None else None
            if self.strategy.slicing:
                value = self.comm.broadcast(lk.owner, value)
            return value
        if lk.local_key is None:
            piece = np.empty((0,) + lk.result_shape[1:], dtype=self.dtype)
        else:
            piece = np.array(self.local[tensor.key_index(lk.local_key)], copy=True)
        if not lk.aligned:
            piece = route(self.comm, piece, lk.positions, lk.result_layout)
        dist = get_factory(self.comm).for_layout(lk.result_layout, self.dtype)
        return DArray._from_parts(dist, np.ascontiguousarray(piece))

    def set_data(self, value: Any, key: Any, local_keys: bool = False) -> None:
        if local_keys:
            return self._set_local_keys(value, key)
        lk = self._localize(key)
        if isinstance(value, DArray):
            value = value.get_full_data()
        arr = tensor.check_value(value, lk.result_shape, self.dtype)
        if lk.local_key is None:
            return
        if lk.kind == "scalar":
            self.local[lk.local_key.index] = arr
            return
        part = arr if arr.ndim == 0 else arr[lk.positions]
        self.local[tensor.key_index(lk.local_key)] = part

    def __getitem__(self, key: Any) -> Any:
        return self.get_data(key)

    def __setitem__(self, key: Any, value: Any) -> None:
        self.set_data(value, key)

    def localize_key(self, key: Any) -> LocalizedKey:
        return self._localize(key)

    def _localize(self, key: Any) -> LocalizedKey:
        if isinstance(key, DArray):
            if key.dtype == tensor.BOOL and key.shape == self.shape:
                return self._localize_mask(key)
            key = key.get_full_data()
        elif isinstance(key, tuple) and any(isinstance(k, DArray) for k in key):
            key = tuple(k.get_full_data() if isinstance(k, DArray) else k for k in key)
        nkey = tensor.normalize_key(key, self.shape)
        return localize(nkey, self.layout, self.comm.rank)

    def _localize_mask(self, mask: "DArray") -> LocalizedKey:
        local = mask.distributor.redistribute(mask.local, self.distributor)
        count = int(np.count_nonzero(local))
        if not self.strategy.slicing:
            res = plan(Strategy.NOT, (count,), self.comm.size)
            return LocalizedKey("local", tensor.BoolMask(local), (count,), res, positions=slice(0, count))
        counts = self.comm.allgather(count)
        offset = sum(counts[: self.comm.rank])
        res = plan_freeform(counts)
        return LocalizedKey(
            "mask", tensor.BoolMask(local), (sum(counts),), res,
            positions=slice(offset, offset + count),
        )

    def _get_local_keys(self, key: Any) -> "DArray":
        comm = self.comm
        mine = None
        for r in range(comm.size):
            k = _decode(comm.broadcast(r, _encode(key) if comm.rank == r else None), comm)
            sub = self.get_data(k)
            if not isinstance(sub, DArray):
                if comm.rank == r:
                    mine = np.asarray([sub], dtype=self.dtype)
                continue
            if not sub.strategy.slicing:
                if comm.rank == r:
                    mine = sub.local.copy()
                continue
            pieces = comm.gather(r, sub.local)
            if comm.rank == r:
                mine = tensor.concat_axis0(pieces)
        return DArray(local_data=mine, strategy=Strategy.FREEFORM, comm=comm, checks=False)

    def _set_local_keys(self, value: Any, key: Any) -> None:
        comm = self.comm
        for r in range(comm.size):
            payload = (_encode(key), _encode(value)) if comm.rank == r else None
            k, v = comm.broadcast(r, payload)
            self.set_data(_decode(v, comm), _decode(k, comm))

    # -- arithmetic ------------------------------------------------------------

    def _aligned_operand(self, other: Any) -> Any:
        if isinstance(other, DArray):
            if other.shape != self.shape:
                raise ValueError(f"shape mismatch: {self.shape} vs {other.shape}")
            if other.layout.same_placement(self.layout):
                return other.local
            return other.distributor.redistribute(other.local, self.distributor)
        if tensor.is_scalar(other):
            return other
        arr = np.asarray(other)
        if arr.ndim == 0:
            return arr[()]
        if arr.shape != self.shape:
            raise ValueError(f"shape mismatch: {self.shape} vs {arr.shape}")
        if not self.strategy.slicing:
            return arr
        return arr[self.distributor.local_start:self.distributor.local_end]

    def _like(self, local: np.ndarray) -> "DArray":
        dist = get_factory(self.comm).for_layout(self.layout, local.dtype)
        return DArray._from_parts(dist, local)

    def __add__(self, other):
        return ew("add", self, other)

    def __radd__(self, other):
        return ew("add", self, other, reflected=True)

    def __sub__(self, other):
        return ew("sub", self, other)

    def __rsub__(self, other):
        return ew("sub", self, other, reflected=True)

    def __mul__(self, other):
        return ew("mul", self, other)

    def __rmul__(self, other):
        return ew("mul", self, other, reflected=True)

    def __truediv__(self, other):
        return ew("div", self, other)

    def __rtruediv__(self, other):
        return ew("div", self, other, reflected=True)

    def __pow__(self, other):
        return ew("pow", self, other)

    def __rpow__(self, other):
        return ew("pow", self, other, reflected=True)

    def __eq__(self, other):  # type: ignore[override]
        return ew("eq", self, other)

    def __ne__(self, other):  # type: ignore[override]
        return ew("ne", self, other)

    def __ge__(self, other):
        return ew("ge", self, other)

    def __gt__(self, other):
        return ew("gt", self, other)

    def __le__(self, other):
        return ew("le", self, other)

    def __lt__(self, other):
        return ew("lt", self, other)

    __hash__ = None  # type: ignore[assignment]

    def __iadd__(self, other):
        return ew_inplace("add", self, other)

    def __isub__(self, other):
        return ew_inplace("sub", self, other)

    def __imul__(self, other):
        return ew_inplace("mul", self, other)

    def __itruediv__(self, other):
        return ew_inplace("div", self, other)

    def __ipow__(self, other):
        return ew_inplace("pow", self, other)

    def __neg__(self):
        return self._like(tensor.ew_unary("neg", self.local))

    def __abs__(self):
        return self._like(tensor.ew_unary("abs", self.local))

    def sqrt(self) -> "DArray":
        return self._like(tensor.ew_unary("sqrt", self.local))

    # -- reductions ------------------------------------------------------------

    def sum(self, axis: int | None = None) -> Any:
        return reduce("sum", self, axis)

    def max(self, axis: int | None = None) -> Any:
        return reduce("max", self, axis)

    def min(self, axis: int | None = None) -> Any:
        return reduce("min", self, axis)

    def cumsum(self) -> "DArray":
        """Cumulative sum along axis 0."""
        return self._like(self.distributor.cumsum_axis0(self.local))

    def bincount(self, minlength: int = 0) -> "DArray":
        return bincount(self, minlength)

    # -- copies ------------------------------------------------------------------

    def copy(self, dtype: Any = None, strategy: Strategy | str | None = None) -> "DArray":
        dt = self.dtype if dtype is None else tensor.as_dtype(dtype)
        local = tensor.cast(self.local, dt)
        factory = get_factory(self.comm)
        target = self.strategy if strategy is None else Strategy.parse(strategy)
        if target is self.strategy:
            return DArray._from_parts(factory.for_layout(self.layout, dt), local)
        if target is Strategy.FREEFORM and self.strategy.slicing:
            dist = factory.get(target, self.shape, dt, self.layout.lengths)
        else:
            dist = factory.get(target, self.shape, dt)
        local = redistribute(self.comm, local, self.layout, dist.layout)
        return DArray._from_parts(dist, local)

    def copy_empty(
        self,
        global_shape: Sequence[int] | None = None,
        local_shape: Sequence[int] | None = None,
        dtype: Any = None,
        strategy: Strategy | str | None = None,
    ) -> "DArray":
        """Uninitialized array, reusing this array's distributor where possible."""
        dt = self.dtype if dtype is None else tensor.as_dtype(dtype)
        target = self.strategy if strategy is None else Strategy.parse(strategy)
        factory = get_factory(self.comm)
        if local_shape is not None:
            if target is not Strategy.FREEFORM:
                raise ValueError("local_shape requires the freeform strategy")
            dist = _freeform_distributor(self.comm, tuple(local_shape), dt)
        elif (global_shape is None or tuple(global_shape) == self.shape) and target is self.strategy:
            dist = factory.for_layout(self.layout, dt)
        else:
            dist = factory.get(target, self.shape if global_shape is None else global_shape, dt)
        return DArray._from_parts(dist, np.empty(dist.local_shape, dtype=dt))

    # -- iteration and persistence -----------------------------------------------

    def iterate(self, chunk: int | None = None) -> Iterator[Any]:
        return iterate(self, chunk)

    def __iter__(self) -> Iterator[Any]:
        return iterate(self)

    def save(self, path: str | os.PathLike) -> None:
        save(self, path)


# ---------------------------------------------------------------------------
# construction


def create(global_data: Any = None, **kwargs: Any) -> DArray:
    """Collective constructor; see :class:`DArray` for the keyword arguments."""
    return DArray(global_data, **kwargs)


def _check_consistency(comm: CommContext, info: tuple) -> list[tuple]:
    gathered = comm.allgather(info)
    if any(g != gathered[0] for g in gathered):
        raise ValueError(f"ranks disagree on array properties: {gathered}")
    return gathered


def _freeform_distributor(comm: CommContext, shape: tuple[int, ...], dtype: np.dtype) -> Distributor:
    shapes = comm.allgather(tuple(shape))
    trailing = {s[1:] for s in shapes}
    if len(trailing) != 1 or any(len(s) == 0 for s in shapes):
        raise ValueError(f"freeform shards need equal trailing dimensions, got {shapes}")
    lengths = [s[0] for s in shapes]
    global_shape = (sum(lengths),) + shapes[0][1:]
    return get_factory(comm).get(Strategy.FREEFORM, global_shape, dtype, lengths)


def _initialize(comm, global_data, global_shape, local_data, local_shape, dtype, strategy, checks):
    local_type = global_data is None and (local_data is not None or local_shape is not None)
    if strategy is None:
        strategy = Strategy.FREEFORM if local_type else Strategy.EQUAL
    strategy = Strategy.parse(strategy)
    explicit = None if dtype is None else tensor.as_dtype(dtype)
    factory = get_factory(comm)

    if global_data is not None:
        if isinstance(global_data, DArray):
            src = global_data
            dt = explicit or src.dtype
            if strategy is Strategy.FREEFORM and src.strategy.slicing:
                dist = factory.get(strategy, src.shape, dt, src.layout.lengths)
            else:
                dist = factory.get(strategy, src.shape, dt)
            if checks:
                _check_consistency(comm, (dt.str, src.shape, strategy.value))
            local = src.distributor.redistribute(tensor.cast(src.local, dt), dist)
            return dist, local
        data = np.asarray(global_data)
        dt = explicit or tensor.as_dtype(data.dtype)
        if data.ndim == 0:
            raise ValueError("distributed arrays need at least one dimension")
        dist = factory.get(strategy, data.shape, dt)
        if checks:
            _check_consistency(comm, (dt.str, data.shape, strategy.value))
        return dist, dist.distribute(data, check=checks)

    if local_type:
        if strategy is not Strategy.FREEFORM:
            raise ValueError(f"local_data/local_shape need the freeform strategy, not {strategy.value!r}")
        if local_data is not None:
            if isinstance(local_data, DArray):
                local_data = local_data.get_full_data()
            data = np.asarray(local_data)
            dt = explicit or tensor.as_dtype(data.dtype)
            if data.ndim == 0:
                raise ValueError("local data needs at least one dimension")
            local = tensor.cast(data, dt)
        else:
            dt = explicit or tensor.FLOAT64
            local = np.empty(tuple(local_shape), dtype=dt)
        if checks:
            _check_consistency(comm, (dt.str, strategy.value))
        return _freeform_distributor(comm, local.shape, dt), np.ascontiguousarray(local)

    if global_shape is None:
        raise ValueError("no shape information: give global_data, local_data, global_shape or local_shape")
    dt = explicit or tensor.FLOAT64
    dist = factory.get(strategy, global_shape, dt)
    if checks:
        _check_consistency(comm, (dt.str, dist.global_shape, strategy.value))
    return dist, np.empty(dist.local_shape, dtype=dt)


def load(path: str | os.PathLike, **kwargs: Any) -> DArray:
    """Every rank reads a tensor dump and distributes it."""
    return DArray(tensor.load(path), **kwargs)


def save(x: DArray, path: str | os.PathLike) -> None:
    """Consolidate and write a tensor dump from rank 0."""
    full = x.get_full_data()
    if x.comm.rank == 0:
        tensor.dump(full, path)
    x.comm.barrier()


# ---------------------------------------------------------------------------
# operations


def ew(op: str, x: DArray, y: Any, reflected: bool = False) -> DArray:
    """Elementwise binary op; the result takes ``x``'s layout."""
    other = x._aligned_operand(y)
    if reflected:
        local = tensor.ew_binary(op, other, x.local)
    else:
        local = tensor.ew_binary(op, x.local, other)
    return x._like(local)


def ew_inplace(op: str, x: DArray, y: Any) -> DArray:
    tensor.ew_binary_inplace(op, x.local, x._aligned_operand(y))
    return x


def sqrt(x: DArray) -> DArray:
    return x.sqrt()


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"axis {axis} out of range for {ndim}-d array")
    return axis % ndim


def reduce(op: str, x: DArray, axis: int | None = None) -> Any:
    if op not in tensor.REDUCE_OPS:
        raise ValueError(f"unknown reduction {op!r}")
    if op != "sum" and x.dtype == tensor.COMPLEX128:
        raise TypeError(f"{op} is undefined for complex values")
    comm = x.comm
    if axis is not None:
        axis = _norm_axis(axis, x.ndim)

    if not x.strategy.slicing:
        out = tensor.reduce(op, x.local, axis)
        if isinstance(out, np.ndarray):
            dist = get_factory(comm).get(Strategy.NOT, out.shape, out.dtype)
            return DArray._from_parts(dist, out)
        return out

    if axis is None or axis == 0:
        if x.local.shape[0]:
            part = tensor.reduce(op, x.local, axis)
        else:
            part = None
        total = comm.allreduce(op, part)
        if total is None:
            if op != "sum":
                raise ValueError(f"{op} of an empty array")
            total = tensor.reduce("sum", np.zeros((0,) + x.shape[1:], dtype=x.dtype), axis)
        if axis is None or x.ndim == 1:
            return total
        dist = get_factory(comm).get(Strategy.NOT, total.shape, total.dtype)
        return DArray._from_parts(dist, np.ascontiguousarray(total))

    out = tensor.reduce(op, x.local, axis)
    new_shape = x.shape[:axis] + x.shape[axis + 1:]
    lengths = x.layout.lengths if x.strategy is Strategy.FREEFORM else None
    dist = get_factory(comm).get(x.strategy, new_shape, out.dtype, lengths)
    return DArray._from_parts(dist, out)


def cumsum(x: DArray) -> DArray:
    return x.cumsum()


def bincount(x: DArray, minlength: int = 0) -> DArray:
    if x.ndim != 1:
        raise ValueError("bincount needs a 1-d array")
    if x.dtype != tensor.INT64:
        raise TypeError(f"bincount needs int64 input, got {x.dtype}")
    comm = x.comm
    factory = get_factory(comm)
    if not x.strategy.slicing:
        out = tensor.bincount(x.local, minlength)
        return DArray._from_parts(factory.get(Strategy.NOT, out.shape, out.dtype), out)
    bounds = np.array([-x.local.min(), x.local.max()]) if x.local.size else None
    bounds = comm.allreduce("max", bounds)
    if bounds is not None and bounds[0] > 0:
        raise ValueError("bincount input must be non-negative")
    length = max(minlength, int(bounds[1]) + 1 if bounds is not None else 0)
    counts = np.bincount(x.local, minlength=length).astype(tensor.INT64)
    total = comm.allreduce("sum", counts)
    return DArray._from_parts(factory.get(Strategy.NOT, total.shape, total.dtype), total)


def iterate(x: DArray, chunk: int | None = None) -> Iterator[Any]:
    """Collective element stream in global row-major order.

    Each rank ships its shard in pieces of at most ``chunk`` elements
    (default: the whole shard), so the message count grows with the number
    of chunks rather than the number of elements.
    """
    if chunk is not None and chunk < 1:
        raise ValueError("chunk must be positive")
    comm = x.comm
    if not x.strategy.slicing or comm.size == 1:
        flat = x.local.ravel()
        step = chunk or max(flat.size, 1)
        for off in range(0, flat.size, step):
            yield from flat[off:off + step].tolist()
        return
    trailing = int(np.prod(x.shape[1:]))
    flat = x.local.ravel()
    for q, n_rows in enumerate(x.layout.lengths):
        n = n_rows * trailing
        step = chunk or max(n, 1)
        for off in range(0, n, step):
            buf = comm.broadcast(q, flat[off:off + step] if comm.rank == q else None)
            yield from buf.tolist()


# ---------------------------------------------------------------------------
# local-key payloads


class _Ref:
    __slots__ = ("index",)

    def __init__(self, index: int):
        self.index = index

    def __reduce__(self):
        return (_Ref, (self.index,))


def _encode(obj: Any) -> Any:
    if isinstance(obj, DArray):
        return _Ref(obj.index)
    if isinstance(obj, tuple):
        return tuple(_encode(o) for o in obj)
    return obj


def _decode(obj: Any, comm: CommContext) -> Any:
    if isinstance(obj, _Ref):
        return get_librarian(comm).lookup(obj.index)
    if isinstance(obj, tuple):
        return tuple(_decode(o, comm) for o in obj)
    return obj
