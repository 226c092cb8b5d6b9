"""
A module defining the binary record file of one dataset shape.

Layout (little-endian):

    header  "<4sIII"  magic b"MFDS", version, floats per record, record count
    records  count × width float32: x[3], occ, sdf, escf[(L+1)²], cdd

Functions:
    encode_records: Serialize sample arrays into a record file.
    decode_records: Parse and validate a record file.
    record_width: Floats per record for a harmonic degree L.
"""

from __future__ import annotations

import struct
from typing import NamedTuple

import numpy as np

from .errors import CorruptFile, ShapeMismatch

MAGIC = b"MFDS"
VERSION = 1
HEADER_FMT = "<4sIII"  # magic, version, width, count
HEADER_LEN = struct.calcsize(HEADER_FMT)


class RecordArrays(NamedTuple):
    """Column view of a record file."""

    x: np.ndarray  # (N, 3)
    occ: np.ndarray  # (N,)
    sdf: np.ndarray  # (N,)
    escf: np.ndarray  # (N, (L+1)²)
    cdd: np.ndarray  # (N,)


def record_width(degree: int) -> int:
    return 3 + 1 + 1 + (degree + 1) ** 2 + 1


def encode_records(arrays: RecordArrays) -> bytes:
    """
    Serialize sample columns.

    Args:
        arrays (RecordArrays): Columns sharing the leading dimension.

    Returns:
        bytes: Header followed by float32 records.

    Raises:
        ShapeMismatch: if the columns disagree in length or width.
        CorruptFile: on a count or width beyond u32, or non-finite values.
    """
    n = len(arrays.x)
    escf = np.asarray(arrays.escf, dtype=np.float64).reshape(n, -1)
    cols = [
        np.asarray(arrays.x, dtype=np.float64).reshape(n, 3),
        np.asarray(arrays.occ, dtype=np.float64).reshape(n, 1),
        np.asarray(arrays.sdf, dtype=np.float64).reshape(n, 1),
        escf,
        np.asarray(arrays.cdd, dtype=np.float64).reshape(n, 1),
    ]
    if any(len(c) != n for c in cols):
        raise ShapeMismatch("record columns differ in length")
    width = 6 + escf.shape[1]
    _u32("width", width)
    _u32("count", n)
    table = np.hstack(cols)
    if not np.all(np.isfinite(table)):
        raise CorruptFile("records must be finite")
    if not np.all((table[:, 3] == 0) | (table[:, 3] == 1)):
        raise CorruptFile("occ must be 0 or 1")
    header = struct.pack(HEADER_FMT, MAGIC, VERSION, width, n)
    return header + table.astype("<f4").tobytes()


def decode_records(buf: bytes, degree: int) -> RecordArrays:
    """
    Parse a record file and validate it against the expected degree.

    Args:
        buf (bytes): File contents.
        degree (int): Harmonic degree L recorded in the manifest.

    Returns:
        RecordArrays: float64 columns.

    Raises:
        CorruptFile: on a bad magic, version, width, length or value.
    """
    _require_at_least(buf, 0, HEADER_LEN, "header")
    magic, version, width, count = struct.unpack(HEADER_FMT, buf[:HEADER_LEN])
    if magic != MAGIC:
        raise CorruptFile(f"bad magic: {magic!r}")
    if version != VERSION:
        raise CorruptFile(f"unsupported record version: {version}")
    expected = record_width(degree)
    if width != expected:
        raise CorruptFile(f"record width {width} != {expected} for L={degree}")
    need = count * width * 4
    _require_at_least(buf, HEADER_LEN, need, "records")
    if len(buf) != HEADER_LEN + need:
        raise CorruptFile(
            f"length mismatch: header count={count}, "
            f"total expected={HEADER_LEN + need}, actual={len(buf)}"
        )
    table = np.frombuffer(buf, dtype="<f4", offset=HEADER_LEN).reshape(count, width)
    table = table.astype(np.float64)
    if not np.all(np.isfinite(table)):
        raise CorruptFile("non-finite record value")
    occ = table[:, 3]
    if not np.all((occ == 0) | (occ == 1)):
        raise CorruptFile("occ must be 0 or 1")
    cdd = table[:, -1]
    if np.any(np.abs(cdd) > 1):
        raise CorruptFile("cdd outside [-1, 1]")
    return RecordArrays(
        x=table[:, 0:3].copy(),
        occ=occ.astype(np.int64),
        sdf=table[:, 4].copy(),
        escf=table[:, 5:-1].copy(),
        cdd=cdd.copy(),
    )


def _require_at_least(buf: bytes, start: int, need: int, what: str) -> None:
    """
    Ensure that buf[start:] has at least `need` bytes.

    Raises:
        CorruptFile: if there are not enough bytes.
    """
    if len(buf) - start < need:
        raise CorruptFile(f"truncated {what}: need {need}, have {len(buf) - start}")


def _u32(name: str, v: int) -> None:
    """
    Ensure that `v` fits in an unsigned 32-bit integer.

    Raises:
        CorruptFile: if `v` is out of range.
    """
    if not (0 <= v <= 0xFFFFFFFF):
        raise CorruptFile(f"{name} out of range for u32: {v}")
