import struct

import numpy as np
import pytest

from bmistab.errors import ShapeError
from bmistab.ntsr import MAGIC, read_ntsr, read_single, write_ntsr


def test_roundtrip_single(tmp_path):
    arr = np.arange(12.0).reshape(3, 4)
    path = tmp_path / "a.ntsr"
    write_ntsr(path, arr)
    back = read_single(path)
    assert np.array_equal(back, arr)
    assert back.dtype == np.float64


def test_roundtrip_bundle(tmp_path):
    tensors = [np.zeros(3), np.ones((2, 2)), np.arange(24.0).reshape(2, 3, 4)]
    path = tmp_path / "bundle.ntsr"
    write_ntsr(path, tensors)
    back = read_ntsr(path)
    assert len(back) == 3
    for a, b in zip(tensors, back):
        assert np.array_equal(a, b)


def test_header_layout(tmp_path):
    path = tmp_path / "t.ntsr"
    write_ntsr(path, np.array([[1.0, 2.0]]))
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    version, rank = struct.unpack_from("<HH", raw, 4)
    assert version == 1 and rank == 2
    dims = struct.unpack_from("<2Q", raw, 8)
    assert dims == (1, 2)
    assert struct.unpack_from("<2d", raw, 24) == (1.0, 2.0)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.ntsr"
    path.write_bytes(b"XXXX" + b"\x00" * 20)
    with pytest.raises(ShapeError):
        read_ntsr(path)


def test_read_single_rejects_bundle(tmp_path):
    path = tmp_path / "two.ntsr"
    write_ntsr(path, [np.zeros(2), np.zeros(2)])
    with pytest.raises(ShapeError):
        read_single(path)
