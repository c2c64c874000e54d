"""NTSR binary tensor files.

One record per tensor, records concatenated back to back:

    magic   4 bytes  b"NTSR"
    version u16 LE   currently 1
    rank    u16 LE
    dims    rank * u64 LE
    payload prod(dims) * f64 LE, row-major

A file may hold any number of records; readers consume records until
end of file. Tensor names, when needed, live in a JSON manifest next to
the file and refer to records by position.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ShapeError

MAGIC = b"NTSR"
VERSION = 1


def write_ntsr(path, arrays) -> None:
    """Write one or more float arrays as consecutive NTSR records."""
    if isinstance(arrays, np.ndarray):
        arrays = [arrays]
    path = Path(path)
    with path.open("wb") as fh:
        for arr in arrays:
            arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
            fh.write(MAGIC)
            fh.write(struct.pack("<HH", VERSION, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def read_ntsr(path) -> list[np.ndarray]:
    """Read all NTSR records from a file, in order."""
    data = Path(path).read_bytes()
    out: list[np.ndarray] = []
    offset = 0
    while offset < len(data):
        if data[offset : offset + 4] != MAGIC:
            raise ShapeError(f"{path}: bad magic at byte {offset}")
        offset += 4
        version, rank = struct.unpack_from("<HH", data, offset)
        if version != VERSION:
            raise ShapeError(f"{path}: unsupported NTSR version {version}")
        offset += 4
        dims = struct.unpack_from(f"<{rank}Q", data, offset)
        offset += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        payload = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        out.append(payload.reshape(dims).astype(np.float64))
    return out


def read_single(path) -> np.ndarray:
    """Read a file expected to hold exactly one tensor."""
    records = read_ntsr(path)
    if len(records) != 1:
        raise ShapeError(f"{path}: expected 1 record, found {len(records)}")
    return records[0]
