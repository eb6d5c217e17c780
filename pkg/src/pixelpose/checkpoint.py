"""Named-array checkpoint container with an atomic on-disk exchange protocol.

Byte layout (stable across versions; all integers little-endian):

    offset  size  content
    0       4     magic b"PPNA"
    4       4     format version, uint32 (currently 1)
    8       4     header length in bytes, uint32
    12      n     header, UTF-8 JSON (see below)
    12+n    m     payload: raw array bytes, C-order, little-endian,
                  concatenated in header order
    12+n+m  4     CRC-32 of the payload, uint32

The header is a JSON object::

    {"byte_order": "<",
     "meta": {...},                      # small JSON-safe metadata
     "arrays": [{"name": str, "dtype": str, "shape": [int, ...],
                 "offset": int, "nbytes": int}, ...]}

Array offsets are relative to the start of the payload. Writers always
write to a temporary file in the destination directory and publish it with
an atomic rename, so a concurrent reader either sees the previous complete
file or the new complete file, never a partial write. Readers validate the
magic, version, header, payload length, and CRC and raise CheckpointError
on any mismatch.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from typing import Mapping

import numpy as np

MAGIC = b"PPNA"
VERSION = 1


class CheckpointError(IOError):
    """The file is missing, truncated, corrupt, or of an unknown version."""


def save_arrays(
    path: str | os.PathLike,
    arrays: Mapping[str, np.ndarray],
    meta: dict | None = None,
) -> None:
    """Atomically write named arrays (plus small JSON metadata) to `path`."""
    entries = []
    chunks = []
    offset = 0
    for name, a in arrays.items():
        a = np.ascontiguousarray(a)
        if a.dtype.byteorder == ">":
            a = a.astype(a.dtype.newbyteorder("<"))
        raw = a.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": a.dtype.str.lstrip("<=|>"),
                "shape": list(a.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"byte_order": "<", "meta": meta or {}, "arrays": entries}
    ).encode("utf-8")
    payload = b"".join(chunks)
    blob = b"".join(
        [
            MAGIC,
            struct.pack("<I", VERSION),
            struct.pack("<I", len(header)),
            header,
            payload,
            struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF),
        ]
    )
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_arrays(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container written by save_arrays; returns (arrays, meta)."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(str(e)) from e
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic or truncated file")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header_len = struct.unpack("<I", blob[8:12])[0]
    if len(blob) < 12 + header_len + 4:
        raise CheckpointError(f"{path}: truncated header or payload")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header") from e
    payload = blob[12 + header_len : -4]
    crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: payload CRC mismatch")
    arrays = {}
    for entry in header["arrays"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(payload):
            raise CheckpointError(f"{path}: array {entry['name']!r} out of bounds")
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        arrays[entry["name"]] = (
            np.frombuffer(payload[start : start + n], dtype=dtype)
            .reshape(entry["shape"])
            .copy()
        )
    return arrays, header.get("meta", {})
