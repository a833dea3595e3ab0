import numpy as np
import pytest
from conftest import ref_srs, ref_wrap
from hypothesis import given, settings
from hypothesis import strategies as st

from aiemap.device import IntDType
from aiemap.fixedpoint import quantize_float, round_shift, srs, srs_array, wrap, wrap_array


@pytest.mark.parametrize("args,expected", [
    ((256, 4, IntDType.i8, False), 16),
    ((70000, 0, IntDType.i8, False), 127),
    ((-3, 1, IntDType.i8, False), -2),
    ((-1, 1, IntDType.i8, True), 0),
    ((-70000, 0, IntDType.i8, False), -128),
    ((5, 1, IntDType.i16, False), 2),      # 2.5 -> 2
    ((7, 1, IntDType.i16, False), 4),      # 3.5 -> 4
])
def test_srs_examples(args, expected):
    assert srs(*args) == expected


def test_rounding_modes():
    assert round_shift(5, 1, "half_up") == 3
    assert round_shift(-5, 1, "half_up") == -2
    assert round_shift(-5, 1, "floor") == -3
    with pytest.raises(ValueError):
        round_shift(1, 1, "nearest")
    with pytest.raises(ValueError):
        round_shift(1, -1)


@settings(max_examples=400, deadline=None)
@given(v=st.integers(-(1 << 40), 1 << 40), shift=st.integers(0, 20), relu=st.booleans(),
       out=st.sampled_from(["i8", "i16"]), mode=st.sampled_from(["half_even", "half_up", "floor"]))
def test_srs_matches_rational_oracle(v, shift, relu, out, mode):
    d = IntDType.parse(out)
    expected = ref_srs(v, shift, out, relu, mode)
    assert srs(v, shift, d, relu, mode) == expected
    assert int(srs_array(np.array([v]), shift, d, relu, mode)[0]) == expected


@settings(max_examples=300, deadline=None)
@given(v=st.integers(-(1 << 62), 1 << 62), bits=st.sampled_from(["i8", "i16", "i32"]))
def test_wrap_matches_modular_oracle(v, bits):
    d = IntDType.parse(bits)
    assert wrap(v, d) == ref_wrap(v, bits)
    assert int(wrap_array(np.array([v]), d)[0]) == ref_wrap(v, bits)


def test_wrap_i64_is_identity_on_int64():
    x = np.array([-(1 << 63), (1 << 63) - 1], dtype=np.int64)
    assert np.array_equal(wrap_array(x, IntDType.i64), x)


def test_large_shift_array():
    acc = np.array([-(1 << 62), -1, 0, 1, 1 << 62], dtype=np.int64)
    assert srs_array(acc, 64, IntDType.i8).tolist() == [0] * 5
    assert srs_array(acc, 64, IntDType.i8, rounding="floor").tolist() == [-1, -1, 0, 0, 0]


def test_quantize_float_half_even_and_saturation():
    q = quantize_float([0.5, 1.5, 2.5, -0.5, 100.0, -100.0], IntDType.i8, 0)
    assert q.tolist() == [0, 2, 2, 0, 100, -100]
    assert quantize_float([0.5], IntDType.i8, 1).tolist() == [1]
    assert quantize_float([1e30, -1e30], IntDType.i8, 3).tolist() == [127, -128]
