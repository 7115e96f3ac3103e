import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fennet import fent
from fennet.errors import FormatError


def test_tensor_layout_by_hand():
    T = np.array([[1.0, 2.0], [3.0, 4.0]])
    data = fent.encode_tensor(T)
    expected = (b"FENT" + struct.pack("<IB", 1, 2) + struct.pack("<QQ", 2, 2)
                + struct.pack("<4d", 1.0, 2.0, 3.0, 4.0))
    assert data == expected


def test_mask_bit_order_by_hand():
    # first index slowest, bit 0 of each byte = earliest index
    mask = np.array([True, False, True, True, False, False, False, False, True, False])
    data = fent.encode_mask(mask)
    header = b"FENT" + struct.pack("<IB", 1, 1) + struct.pack("<Q", 10)
    assert data == header + bytes([0b00001101, 0b00000001])


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(*[st.integers(1, 3)] * 4),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_tensor_round_trip_is_bit_identical(T):
    data = fent.encode_tensor(T)
    back = fent.decode(data)
    assert back.tobytes() == T.tobytes()
    assert fent.encode_tensor(back) == data


@settings(max_examples=30, deadline=None)
@given(arrays(np.bool_, st.tuples(*[st.integers(1, 5)] * 4)))
def test_mask_round_trip(mask):
    back = fent.decode(fent.encode_mask(mask))
    assert back.dtype == bool
    np.testing.assert_array_equal(back, mask)


def test_files(tmp_path):
    T = np.random.default_rng(0).standard_normal((2, 3, 4, 5))
    fent.write_tensor(tmp_path / "t.fent", T)
    fent.write_mask(tmp_path / "m.fent", T > 0)
    assert fent.read_tensor(tmp_path / "t.fent").tobytes() == T.tobytes()
    np.testing.assert_array_equal(fent.read_mask(tmp_path / "m.fent"), T > 0)
    with pytest.raises(FormatError):
        fent.read_tensor(tmp_path / "m.fent")
    with pytest.raises(FormatError):
        fent.read_mask(tmp_path / "t.fent")
    assert [p.name for p in tmp_path.iterdir() if p.name.startswith(".")] == []


@pytest.mark.parametrize("data", [b"", b"NOPE" + bytes(10),
                                  b"FENT" + struct.pack("<IB", 2, 1) + struct.pack("<Q", 1) + bytes(8),
                                  b"FENT" + struct.pack("<IB", 1, 1) + struct.pack("<Q", 2) + bytes(9)])
def test_malformed(data):
    with pytest.raises(FormatError):
        fent.decode(data)
