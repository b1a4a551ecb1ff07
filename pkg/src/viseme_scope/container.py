"""EMB1 binary matrix container.

Layout, all little-endian::

    b"EMB1"  u32 version=1  u32 rows  u32 cols  rows*cols binary32 (row-major)

Used for per-layer frame embeddings and for probe parameter blobs.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from viseme_scope.errors import BadMagic, NonFiniteValue, ShapeMismatch

MAGIC = b"EMB1"
VERSION = 1
_HEADER = struct.Struct("<4sIII")
_DTYPE = np.dtype("<f4")


def write_matrix(stream: BinaryIO, matrix: np.ndarray) -> None:
    """Write a 2-D array as one EMB1 record. 1-D arrays are stored as 1×D."""
    array = np.asarray(matrix)
    if array.ndim == 1:
        array = array[np.newaxis, :]
    if array.ndim != 2:
        raise ValueError(f"EMB1 stores 2-D matrices, got shape {array.shape}")
    rows, cols = array.shape
    stream.write(_HEADER.pack(MAGIC, VERSION, rows, cols))
    stream.write(np.ascontiguousarray(array, dtype=_DTYPE).tobytes(order="C"))


def read_matrix(stream: BinaryIO, *, check_finite: bool = True) -> np.ndarray:
    """Read one EMB1 record from the current stream position.

    Raises:
        BadMagic: the record does not start with ``EMB1`` or has another version.
        ShapeMismatch: the payload is shorter than the header promises.
        NonFiniteValue: a NaN or infinity is present (when ``check_finite``).
    """
    header = stream.read(_HEADER.size)
    if len(header) < _HEADER.size or header[:4] != MAGIC:
        raise BadMagic(header[:4])
    _, version, rows, cols = _HEADER.unpack(header)
    if version != VERSION:
        raise BadMagic(header[:4] + f" v{version}".encode())
    n_bytes = rows * cols * _DTYPE.itemsize
    payload = stream.read(n_bytes)
    if len(payload) != n_bytes:
        raise ShapeMismatch("payload bytes", n_bytes, len(payload))
    matrix = np.frombuffer(payload, dtype=_DTYPE).reshape(rows, cols)
    if check_finite:
        bad = ~np.isfinite(matrix)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise NonFiniteValue(int(row), int(col))
    return matrix


def save_matrix(path: str | Path, matrix: np.ndarray) -> None:
    with open(path, "wb") as f:
        write_matrix(f, matrix)


def load_matrix(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_matrix(f)
