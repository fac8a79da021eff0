"""FieldFile: a small fixed-header binary format for grid fields.

Layout (little-endian):

    magic    8 bytes   b"NNFIELD\\0"
    version  uint32
    d        uint32
    n        uint32
    rank     uint32    tensor rank (0 scalar, 1 vector, 2 matrix)
    time     float64
    delta    float64
    payload  d**rank * n**d float64, row-major, component index first
    crc32    uint32    over everything before it
"""
from __future__ import annotations

import os
import struct
import zlib

import numpy as np

from .torus import TorusField, TorusGrid

__all__ = ["FieldFileError", "save_field", "load_field", "encode_field", "decode_field"]

MAGIC = b"NNFIELD\0"
VERSION = 1
_HEADER = struct.Struct("<8sIIIIdd")


class FieldFileError(ValueError):
    pass


def encode_field(u: TorusField, time: float = 0.0, delta: float = 0.0) -> bytes:
    g = u.grid
    if u.values.size == 0 or u.rank > 2:
        raise FieldFileError("refusing to write an empty or unsupported-rank field")
    head = _HEADER.pack(MAGIC, VERSION, g.d, g.n, u.rank, float(time), float(delta))
    body = np.ascontiguousarray(u.values, dtype="<f8").tobytes()
    blob = head + body
    return blob + struct.pack("<I", zlib.crc32(blob))


def decode_field(blob: bytes):
    """Inverse of :func:`encode_field`; returns ``(field, time, delta)``."""
    if len(blob) < _HEADER.size + 4:
        raise FieldFileError("file is truncated (incomplete header)")
    magic, version, d, n, rank, time, delta = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FieldFileError("not a FieldFile (bad magic)")
    if version != VERSION:
        raise FieldFileError(f"unsupported FieldFile version {version} (expected {VERSION})")
    if rank > 2:
        raise FieldFileError(f"invalid tensor rank {rank}")
    if d not in (1, 2, 3) or n < 4 or n % 2:
        raise FieldFileError(f"invalid grid d={d}, n={n}")
    count = d**rank * n**d
    expected = _HEADER.size + 8 * count + 4
    if len(blob) != expected:
        raise FieldFileError(f"file is truncated or padded: {len(blob)} bytes, expected {expected}")
    (crc,) = struct.unpack_from("<I", blob, expected - 4)
    if zlib.crc32(blob[: expected - 4]) != crc:
        raise FieldFileError("checksum mismatch")
    vals = np.frombuffer(blob, dtype="<f8", count=count, offset=_HEADER.size).astype(float)
    grid = TorusGrid(d, n)
    shape = (d,) * rank + grid.shape
    return TorusField(grid, vals.reshape(shape)), time, delta


def save_field(path, u: TorusField, time: float = 0.0, delta: float = 0.0):
    blob = encode_field(u, time, delta)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_field(path):
    with open(path, "rb") as fh:
        return decode_field(fh.read())
