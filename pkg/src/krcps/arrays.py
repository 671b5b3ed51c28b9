"""On-disk array formats.

CSV: a header row ``x_0,...,x_{d-1}`` followed by one row per record, each
value written with ``repr`` so it reads back bit-exactly.

Binary (little-endian): the 8-byte magic ``b"KRCPSARR"``, ``u32`` rows,
``u32`` cols, then ``rows * cols`` ``f64`` values in row-major order.
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"KRCPSARR"
_HEADER = struct.Struct("<8sII")


def _as_matrix(a) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"expected a 1-D or 2-D array, got {arr.ndim} dimensions")
    return arr


def to_csv_text(a) -> str:
    arr = _as_matrix(a)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x_{j}" for j in range(arr.shape[1])])
    for row in arr:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def write_csv(path, a) -> None:
    Path(path).write_text(to_csv_text(a))


def read_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    if header != [f"x_{j}" for j in range(len(header))]:
        raise ValueError(f"{path}: header must be x_0..x_{{d-1}}")
    body = [[float(v) for v in r] for r in rows[1:] if r]
    if any(len(r) != len(header) for r in body):
        raise ValueError(f"{path}: ragged rows")
    return np.array(body, dtype=float).reshape(len(body), len(header))


def to_bytes(a) -> bytes:
    arr = _as_matrix(a)
    rows, cols = arr.shape
    return _HEADER.pack(MAGIC, rows, cols) + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def from_bytes(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise ValueError("truncated array header")
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    expected = _HEADER.size + 8 * rows * cols
    if len(data) != expected:
        raise ValueError(f"expected {expected} bytes for a {rows}x{cols} array, got {len(data)}")
    return np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(rows, cols).astype(float)


def write_binary(path, a) -> None:
    Path(path).write_bytes(to_bytes(a))


def read_binary(path) -> np.ndarray:
    return from_bytes(Path(path).read_bytes())


def read_array(path) -> np.ndarray:
    """Dispatch on content: binary if the magic matches, CSV otherwise."""
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
    return read_binary(path) if head == MAGIC else read_csv(path)
