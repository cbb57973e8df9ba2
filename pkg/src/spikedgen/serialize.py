"""Matrix container formats: a small binary format (bit-exact) and CSV."""

from __future__ import annotations

import struct

import numpy as np

_MAGIC = b"SPKD"
_VERSION = 1


def save_matrix(path, arr: np.ndarray) -> None:
    """Binary container: magic, version, dims, row-major float64 (little endian)."""
    a = np.ascontiguousarray(arr, dtype="<f8")
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ValueError("only 1-D or 2-D arrays are supported")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQQ", _VERSION, a.shape[0], a.shape[1]))
        fh.write(a.tobytes(order="C"))


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a matrix container (magic {magic!r})")
        version, rows, cols = struct.unpack("<IQQ", fh.read(struct.calcsize("<IQQ")))
        if version != _VERSION:
            raise ValueError(f"unsupported container version {version}")
        data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
    if data.size != rows * cols:
        raise ValueError("truncated matrix container")
    return data.reshape(rows, cols).copy()


def save_matrix_csv(path, arr: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(arr), delimiter=",", fmt="%.17g")


def load_matrix_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))


def load_any_matrix(path) -> np.ndarray:
    """Binary container if the magic matches, CSV otherwise."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == _MAGIC:
        return load_matrix(path)
    return load_matrix_csv(path)
