import io

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from shardarray import tensor
from shardarray.tensor import (
    BOOL,
    COMPLEX128,
    FLOAT64,
    INT64,
    AxisIndex,
    BoolMask,
    FancyTuple,
    ScalarTuple,
    Slices,
    UnsupportedKeyError,
)

DTYPES = [BOOL, INT64, FLOAT64, COMPLEX128]


def test_as_dtype_maps_kinds():
    assert tensor.as_dtype(np.int32) == INT64
    assert tensor.as_dtype(np.uint8) == INT64
    assert tensor.as_dtype(np.float32) == FLOAT64
    assert tensor.as_dtype(np.complex64) == COMPLEX128
    assert tensor.as_dtype(bool) == BOOL
    with pytest.raises(TypeError):
        tensor.as_dtype("U3")


@pytest.mark.parametrize(
    "a, b, expected",
    [
        (BOOL, BOOL, BOOL),
        (BOOL, INT64, INT64),
        (INT64, FLOAT64, FLOAT64),
        (FLOAT64, COMPLEX128, COMPLEX128),
        (INT64, COMPLEX128, COMPLEX128),
    ],
)
def test_promotion_is_a_total_order(a, b, expected):
    assert tensor.promote(a, b) == expected == tensor.promote(b, a)


def test_python_scalar_dtypes():
    assert tensor.dtype_of(True) == BOOL
    assert tensor.dtype_of(3) == INT64
    assert tensor.dtype_of(3.0) == FLOAT64
    assert tensor.dtype_of(1j) == COMPLEX128


def test_make_fill_values_and_empty():
    np.testing.assert_array_equal(tensor.make(INT64, (2, 2), values=[1, 2, 3, 4]), [[1, 2], [3, 4]])
    np.testing.assert_array_equal(tensor.make(FLOAT64, (3,), fill=1.5), [1.5] * 3)
    assert tensor.make(BOOL, (0, 4)).shape == (0, 4)
    with pytest.raises(ValueError):
        tensor.make(INT64, (2, 2), values=[1, 2, 3])
    with pytest.raises(ValueError):
        tensor.make(INT64, (-1,))


def test_cast_truncates_toward_zero():
    np.testing.assert_array_equal(tensor.cast(np.array([-2.7, -0.5, 0.5, 2.7]), INT64), [-2, 0, 0, 2])


def test_cast_complex_to_real_fails():
    with pytest.raises(TypeError):
        tensor.cast(np.array([1 + 1j]), FLOAT64)


def test_cast_copies():
    a = np.arange(3)
    b = tensor.cast(a, INT64)
    b[0] = 99
    assert a[0] == 0


def test_concat_axis0_checks_trailing():
    with pytest.raises(ValueError):
        tensor.concat_axis0([np.zeros((1, 2)), np.zeros((1, 3))])
    assert tensor.concat_axis0([np.zeros((0, 2)), np.ones((2, 2))]).shape == (2, 2)


# -- keys --------------------------------------------------------------------


def test_normalize_key_variants():
    shape = (3, 4)
    assert tensor.normalize_key(1, shape) == AxisIndex(1)
    assert tensor.normalize_key(-1, shape) == AxisIndex(2)
    assert tensor.normalize_key((2, 1), shape) == ScalarTuple((2, 1))
    assert tensor.normalize_key(2, (5,)) == ScalarTuple((2,))
    assert tensor.normalize_key(slice(None, None, -2), shape) == Slices(((2, -1, -2), (0, 4, 1)))
    assert isinstance(tensor.normalize_key(np.ones(shape, bool), shape), BoolMask)
    fancy = tensor.normalize_key(([1, -1], [0, 3]), shape)
    assert isinstance(fancy, FancyTuple)
    np.testing.assert_array_equal(fancy.arrays[0], [1, 2])


@pytest.mark.parametrize(
    "key",
    [5, -4, (0, 4), ([0, 3], [0, 0])],
)
def test_out_of_bounds_keys(key):
    with pytest.raises(IndexError):
        tensor.normalize_key(key, (3, 4))


def test_multidimensional_fancy_index_unsupported():
    key = (np.array([[1, 2], [0, 1]]), np.array([[0, 1], [2, 3]]))
    with pytest.raises(UnsupportedKeyError):
        tensor.normalize_key(key, (3, 4))
    # still an IndexError for callers that only know numpy
    assert issubclass(UnsupportedKeyError, IndexError)


def test_mask_shape_must_match():
    with pytest.raises(IndexError):
        tensor.normalize_key(np.ones((2, 4), bool), (3, 4))


def test_zero_step_rejected():
    with pytest.raises(ValueError):
        tensor.normalize_key(slice(None, None, 0), (3,))


def test_slice_running_past_zero():
    a = np.arange(5)
    np.testing.assert_array_equal(tensor.get(a, slice(None, None, -1)), a[::-1])
    np.testing.assert_array_equal(tensor.get(a, slice(3, None, -2)), a[3::-2])


def test_indexing_printout():
    a = np.arange(12).reshape(3, 4)
    assert tensor.get(a, (2, 1)) == 9
    np.testing.assert_array_equal(
        tensor.get(a, (np.array([1, 1, 2, 2, 2, 2]), np.array([2, 3, 0, 1, 2, 3]))),
        [6, 7, 8, 9, 10, 11],
    )
    np.testing.assert_array_equal(tensor.get(a, (slice(None), slice(None, None, -2))), [[3, 1], [7, 5], [11, 9]])
    np.testing.assert_array_equal(tensor.get(a, a > 5), [6, 7, 8, 9, 10, 11])
    tensor.set(a, a > 5, [11, 22, 33, 44, 55, 66])
    np.testing.assert_array_equal(a, [[0, 1, 2, 3], [4, 5, 11, 22], [33, 44, 55, 66]])


def test_get_copies():
    a = np.arange(6).reshape(2, 3)
    view = tensor.get(a, slice(0, 1))
    view[...] = -1
    assert a.min() == 0


def test_set_value_shape_checked():
    a = np.zeros((3, 4))
    with pytest.raises(ValueError):
        tensor.set(a, slice(0, 2), np.ones((3, 4)))
    tensor.set(a, slice(0, 2), 7)
    assert a[:2].sum() == 56


def _keys(shape):
    """Strategy over every supported key variant for ``shape``."""
    n0 = shape[0]
    bound = st.integers(-n0 - 2, n0 + 2) | st.none()
    step = st.integers(-3, 3).filter(bool) | st.none()
    sl = st.builds(slice, bound, bound, step)
    variants = [sl, st.tuples(*[st.builds(slice, st.none(), st.none(), step) for _ in shape])]
    if n0:
        variants.append(st.integers(-n0, n0 - 1))
        variants.append(
            st.integers(1, 6).flatmap(
                lambda k: st.tuples(*[st.lists(st.integers(0, n - 1), min_size=k, max_size=k) for n in shape])
            )
            if all(shape)
            else st.nothing()
        )
    variants.append(hnp.arrays(bool, shape))
    return st.one_of(*variants)


@st.composite
def array_and_key(draw):
    shape = draw(st.sampled_from([(0,), (1,), (5,), (7,), (3, 4), (7, 5), (0, 3), (4, 1)]))
    a = draw(hnp.arrays(np.int64, shape, elements=st.integers(-100, 100)))
    return a, draw(_keys(shape))


@settings(max_examples=300, deadline=None)
@given(array_and_key())
def test_set_of_get_is_identity(case):
    a, key = case
    before = a.copy()
    try:
        got = tensor.get(a, key)
    except (IndexError, ValueError):
        return
    tensor.set(a, key, got)
    np.testing.assert_array_equal(a, before)


@settings(max_examples=300, deadline=None)
@given(array_and_key())
def test_get_matches_numpy(case):
    a, key = case
    try:
        expected = a[key if not isinstance(key, list) else tuple(key)]
    except IndexError:
        with pytest.raises(IndexError):
            tensor.get(a, key)
        return
    try:
        got = tensor.get(a, key)
    except UnsupportedKeyError:
        assume(False)
    np.testing.assert_array_equal(got, expected)


# -- elementwise ---------------------------------------------------------------


def test_true_division_of_integers():
    out = tensor.ew_binary("div", np.array([1, 2, 3]), 2)
    assert out.dtype == FLOAT64
    np.testing.assert_array_equal(out, [0.5, 1.0, 1.5])


def test_integer_division_by_zero_raises():
    with pytest.raises(ZeroDivisionError):
        tensor.ew_binary("div", np.array([1, 2]), np.array([1, 0]))


def test_float_division_by_zero_gives_inf():
    out = tensor.ew_binary("div", np.array([1.0, -1.0]), 0.0)
    assert np.isinf(out).all()


def test_negative_integer_power_rejected():
    with pytest.raises(ValueError):
        tensor.ew_binary("pow", np.array([2]), -1)
    assert tensor.ew_binary("pow", np.array([2.0]), -1)[0] == 0.5


def test_bool_arithmetic_counts():
    out = tensor.ew_binary("add", np.array([True, True]), np.array([True, False]))
    assert out.dtype == INT64
    np.testing.assert_array_equal(out, [2, 1])
    assert tensor.ew_binary("eq", np.array([True]), True).dtype == BOOL


def test_complex_ordering_rejected():
    with pytest.raises(TypeError):
        tensor.ew_binary("lt", np.array([1j]), 0)
    assert tensor.ew_binary("eq", np.array([1j]), 1j)[0]


def test_inplace_keeps_dtype():
    a = np.arange(3)
    tensor.ew_binary_inplace("add", a, 2)
    np.testing.assert_array_equal(a, [2, 3, 4])
    with pytest.raises(TypeError):
        tensor.ew_binary_inplace("add", a, 0.5)
    with pytest.raises(TypeError):
        tensor.ew_binary_inplace("div", a, 1)


def test_unary_ops():
    with pytest.raises(TypeError):
        tensor.ew_unary("neg", np.array([True]))
    assert tensor.ew_unary("abs", np.array([3 + 4j]))[0] == 5.0
    s = tensor.ew_unary("sqrt", np.array([4, -1]))
    assert s[0] == 2.0 and np.isnan(s[1])
    assert tensor.ew_unary("sqrt", np.array([-4 + 0j]))[0] == 2j


def test_shape_mismatch():
    with pytest.raises(ValueError):
        tensor.ew_binary("add", np.zeros(3), np.zeros(4))


# -- reductions ----------------------------------------------------------------


def test_reductions():
    a = np.arange(12).reshape(3, 4)
    assert tensor.reduce("sum", a) == 66
    np.testing.assert_array_equal(tensor.reduce("max", a, axis=0), [8, 9, 10, 11])
    np.testing.assert_array_equal(tensor.reduce("min", a, axis=-1), [0, 4, 8])
    assert tensor.reduce("sum", np.array([True, True, False])) == 2
    assert tensor.reduce("sum", np.zeros((0, 3))) == 0.0


def test_reduction_errors():
    with pytest.raises(TypeError):
        tensor.reduce("max", np.array([1j]))
    with pytest.raises(ValueError):
        tensor.reduce("max", np.zeros(0))
    with pytest.raises(ValueError):
        tensor.reduce("sum", np.zeros((2, 2)), axis=2)


def test_cumsum_and_bincount():
    np.testing.assert_array_equal(tensor.cumsum(np.array([[1, 2], [3, 4]])), [[1, 2], [4, 6]])
    with pytest.raises(TypeError):
        tensor.cumsum(np.array([True]))
    np.testing.assert_array_equal(tensor.bincount(np.array([0, 2, 2])), [1, 0, 2])
    with pytest.raises(ValueError):
        tensor.bincount(np.array([-1]))
    with pytest.raises(TypeError):
        tensor.bincount(np.array([1.0]))


# -- dump format -------------------------------------------------------------------


def test_dump_layout_is_fixed():
    data = tensor.dumps(np.array([[1, 2]], dtype=np.int64))
    assert data[:4] == b"SHRD"
    assert data[4:6] == bytes([1, 2])
    assert data[6:22] == (1).to_bytes(8, "little") + (2).to_bytes(8, "little")
    assert data[22:] == (1).to_bytes(8, "little") + (2).to_bytes(8, "little")


@settings(max_examples=100, deadline=None)
@given(
    st.sampled_from(DTYPES).flatmap(
        lambda dt: hnp.arrays(dt, hnp.array_shapes(min_dims=0, max_dims=3, min_side=0, max_side=4))
    )
)
def test_dump_roundtrip(a):
    buf = io.BytesIO()
    tensor.dump(a, buf)
    buf.seek(0)
    b = tensor.load(buf)
    assert b.dtype == a.dtype and b.shape == a.shape
    assert b.tobytes() == a.tobytes()


def test_load_rejects_garbage():
    with pytest.raises(ValueError):
        tensor.loads(b"XXXX\x00\x00")
    good = tensor.dumps(np.arange(3))
    with pytest.raises(ValueError):
        tensor.loads(good[:-1])
