"""Single-file binary checkpoints.

Layout (all little-endian):

    magic   "SGPC"
    u32     format version (1)
    u64     header length, then that many bytes of UTF-8 JSON
    u32     tensor count
    repeat: u16 name length + name bytes
            u8  ndim, then ndim * u32 dims
            float32 payload (row-major)
    u32     crc32 of every preceding byte

The JSON header carries the full config text, its digest, the iteration
counter, every RNG stream state and the optimizer step counts.  A wrong
magic, version, or checksum refuses to load anything.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"SGPC"
VERSION = 1


def save_checkpoint(path, header: dict, tensors: dict):
    """Atomically write header + named float32 tensors."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob += struct.pack("<Q", len(header_bytes))
    blob += header_bytes
    names = sorted(tensors)
    blob += struct.pack("<I", len(names))
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        nb = name.encode("utf-8")
        blob += struct.pack("<H", len(nb))
        blob += nb
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(blob)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Read and verify a checkpoint; returns (header, tensors)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version} (want {VERSION})")
    if len(raw) < 4:
        raise CheckpointError(f"{path}: truncated checkpoint")
    body, (crc_stored,) = raw[:-4], struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")

    off = 8
    (hlen,) = struct.unpack_from("<Q", body, off)
    off += 8
    try:
        header = json.loads(body[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: bad header json: {e}") from None
    off += hlen
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    tensors = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", body, off)
            off += 1
            dims = struct.unpack_from(f"<{ndim}I", body, off)
            off += 4 * ndim
            n = int(np.prod(dims)) if ndim else 1
            arr = np.frombuffer(body, dtype="<f4", count=n, offset=off)
            off += 4 * n
            tensors[name] = arr.reshape(dims).copy()
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path}: truncated tensor table: {e}") from None
    if off != len(body):
        raise CheckpointError(f"{path}: trailing bytes after tensor table")
    return header, tensors
