import pathlib
import struct
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sagefuse.tensorio import MAGIC, TensorFormatError, load_tensor, save_tensor


def test_round_trip_matrix(tmp_path):
    path = tmp_path / "m.gtsr"
    arr = np.arange(12, dtype=np.float32).reshape(3, 4)
    save_tensor(path, arr)
    assert np.array_equal(load_tensor(path), arr)


def test_round_trip_preserves_row_major_order(tmp_path):
    path = tmp_path / "m.gtsr"
    save_tensor(path, np.array([[1.0, 2.0], [3.0, 4.0]]))
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    rank = struct.unpack("<I", raw[4:8])[0]
    assert rank == 2
    assert struct.unpack("<2Q", raw[8:24]) == (2, 2)
    assert struct.unpack("<4f", raw[24:]) == (1.0, 2.0, 3.0, 4.0)


def test_load_as_float64(tmp_path):
    path = tmp_path / "m.gtsr"
    save_tensor(path, np.ones((2, 2)))
    out = load_tensor(path, dtype=np.float64)
    assert out.dtype == np.float64


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.gtsr"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(TensorFormatError, match="magic"):
        load_tensor(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "t.gtsr"
    save_tensor(path, np.ones((4, 4)))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(TensorFormatError, match="truncated"):
        load_tensor(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "t.gtsr"
    save_tensor(path, np.ones(3))
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(TensorFormatError, match="trailing"):
        load_tensor(path)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=4),
       st.integers(0, 2 ** 31 - 1))
def test_round_trip_arbitrary_shapes(shape, seed):
    path = pathlib.Path(tempfile.mkdtemp()) / "x.gtsr"
    arr = np.random.default_rng(seed).normal(0, 1, shape).astype(np.float32)
    save_tensor(path, arr)
    out = load_tensor(path)
    assert out.shape == tuple(shape)
    assert np.array_equal(out, arr)
