"""Versioned binary container for model and session files.

Layout (all little-endian):

    magic       4 bytes
    version     u32
    meta_len    u64, followed by meta_len bytes of UTF-8 JSON (sorted keys)
    n_arrays    u32
    per array:  u16 name length + name bytes
                u8 dtype string length + dtype bytes (numpy dtype str)
                u8 ndim, then ndim x u64 dims
                raw C-order payload

Encoding is byte-deterministic for identical inputs, which the pipeline
relies on for reproducibility checks.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    """Raised on a malformed or mismatched binary container."""


def encode_blocks(magic: bytes, version: int, meta: dict, arrays: dict) -> bytes:
    """Serialize ``meta`` (JSON-serializable) and named numpy ``arrays``."""
    if len(magic) != 4:
        raise ValueError("magic must be exactly 4 bytes")
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    out = bytearray()
    out += magic
    out += struct.pack("<I", version)
    out += struct.pack("<Q", len(meta_bytes))
    out += meta_bytes
    out += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        name_b = name.encode()
        dtype_b = arr.dtype.str.encode()
        out += struct.pack("<H", len(name_b)) + name_b
        out += struct.pack("<B", len(dtype_b)) + dtype_b
        out += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            out += struct.pack("<Q", d)
        out += arr.tobytes()
    return bytes(out)


def decode_blocks(buf: bytes, magic: bytes):
    """Decode a container produced by :func:`encode_blocks`.

    Returns ``(version, meta, arrays)``. Raises :class:`FormatError` on a bad
    magic, truncated payload, or trailing garbage.
    """
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError("truncated container")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4) != magic:
        raise FormatError(f"bad magic, expected {magic!r}")
    version, = struct.unpack("<I", take(4))
    meta_len, = struct.unpack("<Q", take(8))
    try:
        meta = json.loads(take(meta_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad metadata block: {exc}") from exc
    n_arrays, = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(n_arrays):
        nlen, = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        dlen, = struct.unpack("<B", take(1))
        dtype = np.dtype(take(dlen).decode())
        ndim, = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = take(count * dtype.itemsize)
        arrays[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    if pos != len(buf):
        raise FormatError("trailing bytes after last array")
    return version, meta, arrays


def write_blocks(path, magic: bytes, version: int, meta: dict, arrays: dict) -> None:
    Path(path).write_bytes(encode_blocks(magic, version, meta, arrays))


def read_blocks(path, magic: bytes):
    return decode_blocks(Path(path).read_bytes(), magic)
