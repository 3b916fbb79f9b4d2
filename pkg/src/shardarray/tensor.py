"""Local dense tensors: dtype rules, key normalization, elementwise ops, dump format.

A local tensor is a C-contiguous :class:`numpy.ndarray` whose dtype is one of
``bool``, ``int64``, ``float64`` or ``complex128``.  The functions here pin
down the semantics the distributed layer composes (promotion, division by
zero, supported key shapes) and double as the serial reference for tests.
"""
from __future__ import annotations

import dataclasses
import io
import operator
import os
import struct
from typing import Any, BinaryIO, Sequence, Union

import numpy as np

BOOL = np.dtype(bool)
INT64 = np.dtype(np.int64)
FLOAT64 = np.dtype(np.float64)
COMPLEX128 = np.dtype(np.complex128)

# promotion order; position doubles as the dump-format dtype code
DTYPES = (BOOL, INT64, FLOAT64, COMPLEX128)
_RANK = {dt: i for i, dt in enumerate(DTYPES)}

_KIND_TO_DTYPE = {"b": BOOL, "i": INT64, "u": INT64, "f": FLOAT64, "c": COMPLEX128}


class UnsupportedKeyError(IndexError):
    """Raised for keys outside the supported variants, e.g. n-d fancy indices."""


def as_dtype(dtype: Any) -> np.dtype:
    """Map any numpy-compatible dtype spec onto one of the four supported dtypes."""
    dt = np.dtype(dtype)
    try:
        return _KIND_TO_DTYPE[dt.kind]
    except KeyError:
        raise TypeError(f"unsupported dtype {dt}") from None


def promote(*dtypes: np.dtype) -> np.dtype:
    return DTYPES[max(_RANK[as_dtype(d)] for d in dtypes)]


def dtype_of(value: Any) -> np.dtype:
    if isinstance(value, np.ndarray | np.generic):
        return as_dtype(value.dtype)
    if isinstance(value, bool):
        return BOOL
    if isinstance(value, int):
        return INT64
    if isinstance(value, float):
        return FLOAT64
    if isinstance(value, complex):
        return COMPLEX128
    return as_dtype(np.asarray(value).dtype)


def is_scalar(value: Any) -> bool:
    return np.ndim(value) == 0 and not isinstance(value, np.ndarray)


def asarray(values: Any, dtype: Any = None) -> np.ndarray:
    """Convert scalars, nested lists or arrays into a contiguous local tensor."""
    arr = np.asarray(values)
    target = as_dtype(arr.dtype) if dtype is None else as_dtype(dtype)
    return np.ascontiguousarray(cast(arr, target))


def make(dtype: Any, shape: Sequence[int], fill: Any = None, values: Any = None) -> np.ndarray:
    """Allocate a tensor; ``values`` are laid out row-major, ``fill`` is broadcast.

    With neither given the storage is left uninitialized.
    """
    dtype = as_dtype(dtype)
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ValueError(f"negative dimension in shape {shape}")
    if values is not None:
        flat = np.asarray(values).ravel()
        if flat.size != int(np.prod(shape)):
            raise ValueError(f"{flat.size} values do not fill shape {shape}")
        return cast(flat, dtype).reshape(shape)
    if fill is not None:
        return np.full(shape, cast(np.asarray(fill), dtype))
    return np.empty(shape, dtype=dtype)


def cast(t: np.ndarray, dtype: Any) -> np.ndarray:
    """Copy ``t`` as ``dtype``; float to int truncates toward zero, complex to real fails."""
    dtype = as_dtype(dtype)
    t = np.asarray(t)
    if t.dtype.kind == "c" and dtype.kind != "c":
        raise TypeError(f"cannot cast complex values to {dtype}")
    if t.dtype.kind in "OUS":
        raise TypeError(f"cannot cast {t.dtype} to {dtype}")
    return t.astype(dtype, copy=True)


def reshape(t: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    shape = tuple(shape)
    if int(np.prod(shape)) != t.size:
        raise ValueError(f"cannot reshape size {t.size} into {shape}")
    return t.reshape(shape).copy()


def concat_axis0(parts: Sequence[np.ndarray]) -> np.ndarray:
    if not parts:
        raise ValueError("nothing to concatenate")
    trailing = {p.shape[1:] for p in parts}
    if len(trailing) != 1:
        raise ValueError(f"trailing dimensions differ: {sorted(trailing)}")
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# keys


@dataclasses.dataclass(frozen=True)
class AxisIndex:
    index: int


@dataclasses.dataclass(frozen=True)
class ScalarTuple:
    index: tuple[int, ...]


@dataclasses.dataclass(frozen=True)
class Slices:
    # one (start, stop, step) per axis, as produced by ``slice.indices``
    ranges: tuple[tuple[int, int, int], ...]

    def as_index(self) -> tuple[slice, ...]:
        return tuple(_to_slice(*r) for r in self.ranges)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(range(*r)) for r in self.ranges)


@dataclasses.dataclass(frozen=True, eq=False)
class FancyTuple:
    arrays: tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.arrays[0])


@dataclasses.dataclass(frozen=True, eq=False)
class BoolMask:
    mask: np.ndarray


Key = Union[AxisIndex, ScalarTuple, Slices, FancyTuple, BoolMask]


def _to_slice(start: int, stop: int, step: int) -> slice:
    # slice.indices() yields stop=-1 for "run down past 0", which a literal
    # slice would read as "last element"; the same goes for start in empty ranges
    if not len(range(start, stop, step)):
        return slice(0, 0, 1)
    return slice(start, None if stop < 0 else stop, step)


def _norm_index(i: Any, n: int, axis: int) -> int:
    i = operator.index(i)
    if not -n <= i < n:
        raise IndexError(f"index {i} out of bounds for axis {axis} with size {n}")
    return i + n if i < 0 else i


def _is_int(x: Any) -> bool:
    return isinstance(x, int | np.integer) and not isinstance(x, bool | np.bool_)


def normalize_key(key: Any, shape: Sequence[int]) -> Key:
    """Classify a numpy-style key against ``shape`` and bounds-check it."""
    shape = tuple(shape)
    ndim = len(shape)
    if isinstance(key, Key.__args__):
        return key
    if ndim == 0:
        raise UnsupportedKeyError("zero-dimensional tensors cannot be indexed")

    if _is_int(key):
        i = _norm_index(key, shape[0], 0)
        return ScalarTuple((i,)) if ndim == 1 else AxisIndex(i)
    if isinstance(key, slice):
        key = (key,)
    if isinstance(key, list):
        key = np.asarray(key)
    if isinstance(key, np.ndarray):
        if key.dtype == bool:
            if key.shape != shape:
                raise IndexError(f"boolean mask of shape {key.shape} does not match {shape}")
            return BoolMask(key)
        key = (key,)
    if not isinstance(key, tuple) or not key:
        raise UnsupportedKeyError(f"unsupported key {key!r}")
    if len(key) > ndim:
        raise IndexError(f"too many indices ({len(key)}) for {ndim}-d tensor")

    if all(_is_int(k) for k in key):
        if len(key) != ndim:
            raise UnsupportedKeyError("integer tuples must address every axis")
        return ScalarTuple(tuple(_norm_index(k, n, ax) for ax, (k, n) in enumerate(zip(key, shape))))
    if all(isinstance(k, slice) for k in key):
        full = key + (slice(None),) * (ndim - len(key))
        ranges = []
        for s, n in zip(full, shape):
            if s.step == 0:
                raise ValueError("slice step cannot be zero")
            ranges.append(s.indices(n))
        return Slices(tuple(ranges))
    if all(isinstance(k, list | tuple | np.ndarray) for k in key):
        arrays = [np.asarray(k) for k in key]
        if any(a.ndim != 1 for a in arrays):
            raise UnsupportedKeyError("multidimensional advanced indexing is not supported")
        if len(arrays) != ndim:
            raise UnsupportedKeyError("advanced indexing needs one index sequence per axis")
        if len({len(a) for a in arrays}) != 1:
            raise IndexError("index sequences have different lengths")
        out = []
        for ax, (a, n) in enumerate(zip(arrays, shape)):
            if a.size and a.dtype.kind not in "iu":
                raise IndexError("advanced indices must be integers")
            a = a.astype(np.int64)
            if a.size and (a.min() < -n or a.max() >= n):
                raise IndexError(f"index out of bounds for axis {ax} with size {n}")
            out.append(np.where(a < 0, a + n, a))
        return FancyTuple(tuple(out))
    raise UnsupportedKeyError(f"unsupported key {key!r}")


def key_index(key: Key) -> Any:
    """The numpy index expression equivalent to a normalized key."""
    if isinstance(key, AxisIndex):
        return key.index
    if isinstance(key, ScalarTuple):
        return key.index
    if isinstance(key, Slices):
        return key.as_index()
    if isinstance(key, FancyTuple):
        return key.arrays
    return key.mask


def selection_shape(key: Key, shape: Sequence[int]) -> tuple[int, ...]:
    if isinstance(key, ScalarTuple):
        return ()
    if isinstance(key, AxisIndex):
        return tuple(shape[1:])
    if isinstance(key, Slices):
        return key.shape
    if isinstance(key, FancyTuple):
        return (len(key),)
    return (int(np.count_nonzero(key.mask)),)


def get(t: np.ndarray, key: Any) -> Any:
    """Read a selection; always copies.  Scalar keys return a numpy scalar."""
    nkey = normalize_key(key, t.shape)
    out = t[key_index(nkey)]
    if isinstance(nkey, ScalarTuple):
        return out
    return np.array(out, copy=True)


def check_value(value: Any, shape: tuple[int, ...], dtype: np.dtype) -> np.ndarray:
    """Coerce a write value to ``dtype``; must be a scalar or exactly ``shape``."""
    arr = np.asarray(value)
    if arr.ndim != 0 and arr.shape != shape:
        raise ValueError(f"value of shape {arr.shape} cannot be written to selection {shape}")
    return cast(arr, dtype)


def set(t: np.ndarray, key: Any, value: Any) -> None:  # noqa: A001 - mirrors get
    nkey = normalize_key(key, t.shape)
    t[key_index(nkey)] = check_value(value, selection_shape(nkey, t.shape), t.dtype)


# ---------------------------------------------------------------------------
# elementwise


BINARY_OPS = ("add", "sub", "mul", "div", "pow", "eq", "ge", "gt", "le", "lt", "ne")
COMPARISONS = ("eq", "ge", "gt", "le", "lt", "ne")
UNARY_OPS = ("neg", "abs", "sqrt")

_UFUNC = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.true_divide,
    "pow": np.power,
    "eq": np.equal,
    "ge": np.greater_equal,
    "gt": np.greater,
    "le": np.less_equal,
    "lt": np.less,
    "ne": np.not_equal,
}


def result_dtype(op: str, a_dtype: np.dtype, b_dtype: np.dtype) -> np.dtype:
    if op in COMPARISONS:
        return BOOL
    dt = promote(a_dtype, b_dtype)
    if op == "div":
        return promote(dt, FLOAT64)
    # arithmetic on two booleans counts, like a sum does
    return INT64 if dt == BOOL else dt


def _operands(op: str, a: Any, b: Any) -> tuple[np.ndarray, np.ndarray, np.dtype]:
    if op not in _UFUNC:
        raise ValueError(f"unknown binary op {op!r}")
    a_dt, b_dt = dtype_of(a), dtype_of(b)
    if op in ("ge", "gt", "le", "lt") and COMPLEX128 in (a_dt, b_dt):
        raise TypeError("complex values have no ordering")
    a_arr, b_arr = np.asarray(a), np.asarray(b)
    if a_arr.ndim and b_arr.ndim and a_arr.shape != b_arr.shape:
        raise ValueError(f"shape mismatch: {a_arr.shape} vs {b_arr.shape}")
    out_dt = result_dtype(op, a_dt, b_dt)
    work = promote(a_dt, b_dt) if op in COMPARISONS else out_dt
    a_arr, b_arr = a_arr.astype(work, copy=False), b_arr.astype(work, copy=False)
    if op == "div" and a_dt.kind in "bi" and b_dt.kind in "bi" and np.any(b_arr == 0):
        raise ZeroDivisionError("integer division by zero")
    if op == "pow" and out_dt == INT64 and np.any(b_arr < 0):
        raise ValueError("integers to negative integer powers are not allowed")
    return a_arr, b_arr, out_dt


def ew_binary(op: str, a: Any, b: Any) -> np.ndarray:
    """Elementwise ``a op b``; at least one operand should be a tensor."""
    a_arr, b_arr, out_dt = _operands(op, a, b)
    with np.errstate(all="ignore"):
        out = _UFUNC[op](a_arr, b_arr)
    return np.asarray(out, dtype=out_dt)


def ew_binary_inplace(op: str, a: np.ndarray, b: Any) -> np.ndarray:
    """``a op= b`` written into ``a``'s existing buffer."""
    if op in COMPARISONS:
        raise ValueError(f"{op} has no in-place form")
    # the dtype rule is checked before any data-dependent error
    if op in _UFUNC and (out_dt := result_dtype(op, dtype_of(a), dtype_of(b))) != a.dtype:
        raise TypeError(f"in-place {op} would change dtype {a.dtype} to {out_dt}")
    a_arr, b_arr, out_dt = _operands(op, a, b)
    with np.errstate(all="ignore"):
        _UFUNC[op](a_arr, b_arr, out=a)
    return a


def ew_unary(op: str, a: Any) -> np.ndarray:
    a = np.asarray(a)
    dt = as_dtype(a.dtype)
    if op == "neg":
        if dt == BOOL:
            raise TypeError("cannot negate a boolean tensor")
        return np.negative(a)
    if op == "abs":
        out = np.abs(a)
        return out.astype(FLOAT64 if dt == COMPLEX128 else (INT64 if dt == BOOL else dt))
    if op == "sqrt":
        work = COMPLEX128 if dt == COMPLEX128 else FLOAT64
        with np.errstate(invalid="ignore"):
            return np.sqrt(a.astype(work))
    raise ValueError(f"unknown unary op {op!r}")


def ew_unary_inplace(op: str, a: np.ndarray) -> np.ndarray:
    out = ew_unary(op, a)
    if out.dtype != a.dtype:
        raise TypeError(f"in-place {op} would change dtype {a.dtype} to {out.dtype}")
    a[...] = out
    return a


# ---------------------------------------------------------------------------
# reductions


REDUCE_OPS = ("sum", "max", "min")


def reduce(op: str, a: np.ndarray, axis: int | None = None) -> Any:
    if op not in REDUCE_OPS:
        raise ValueError(f"unknown reduction {op!r}")
    if op != "sum" and a.dtype == COMPLEX128:
        raise TypeError(f"{op} is undefined for complex values")
    if axis is not None:
        if not -max(a.ndim, 1) <= axis < max(a.ndim, 1):
            raise ValueError(f"axis {axis} out of range for {a.ndim}-d tensor")
        axis = axis % max(a.ndim, 1)
    fn = {"sum": np.sum, "max": np.max, "min": np.min}[op]
    if op != "sum" and (a.size == 0 and (axis is None or a.shape[axis] == 0)):
        raise ValueError(f"{op} of an empty selection")
    out = fn(a, axis=axis)
    if op == "sum" and a.dtype == BOOL:
        out = np.asarray(out, dtype=INT64)
    if np.ndim(out) == 0:
        return np.asarray(out)[()]
    return np.ascontiguousarray(out)


def cumsum(a: np.ndarray, axis: int = 0) -> np.ndarray:
    if a.dtype == BOOL:
        raise TypeError("cumulative sum of a boolean tensor")
    return np.cumsum(a, axis=axis)


def bincount(a: np.ndarray, minlength: int = 0) -> np.ndarray:
    if a.ndim != 1:
        raise ValueError("bincount needs a 1-d tensor")
    if a.dtype != INT64:
        raise TypeError(f"bincount needs int64 input, got {a.dtype}")
    if a.size and a.min() < 0:
        raise ValueError("bincount input must be non-negative")
    return np.bincount(a, minlength=minlength).astype(INT64)


# ---------------------------------------------------------------------------
# binary dump format


MAGIC = b"SHRD"


def dumps(t: np.ndarray) -> bytes:
    t = np.asarray(t)
    code = _RANK[as_dtype(t.dtype)]
    if t.ndim > 255:
        raise ValueError("too many dimensions for the dump format")
    header = MAGIC + struct.pack("<BB", code, t.ndim) + struct.pack(f"<{t.ndim}q", *t.shape)
    payload = np.ascontiguousarray(t, dtype=DTYPES[code].newbyteorder("<")).tobytes()
    return header + payload


def loads(data: bytes) -> np.ndarray:
    if data[:4] != MAGIC:
        raise ValueError("not a tensor dump (bad magic)")
    code, ndim = struct.unpack_from("<BB", data, 4)
    if code >= len(DTYPES):
        raise ValueError(f"unknown dtype code {code}")
    shape = struct.unpack_from(f"<{ndim}q", data, 6)
    offset = 6 + 8 * ndim
    dtype = DTYPES[code]
    count = int(np.prod(shape))
    if len(data) - offset != count * dtype.itemsize:
        raise ValueError("payload length does not match header")
    arr = np.frombuffer(data, dtype=dtype.newbyteorder("<"), count=count, offset=offset)
    return arr.astype(dtype).reshape(shape)


def dump(t: np.ndarray, file: Union[str, os.PathLike, BinaryIO]) -> None:
    data = dumps(t)
    if isinstance(file, io.IOBase) or hasattr(file, "write"):
        file.write(data)
    else:
        with open(file, "wb") as fh:
            fh.write(data)


def load(file: Union[str, os.PathLike, BinaryIO]) -> np.ndarray:
    if hasattr(file, "read"):
        return loads(file.read())
    with open(file, "rb") as fh:
        return loads(fh.read())
