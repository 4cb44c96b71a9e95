"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"EGFE"  u32 version  u32 config_len  config JSON (UTF-8)
    repeated: u32 name_len  name  u32 rank  u64 dims[rank]  f32 values[prod(dims)]
    u32 CRC-32 of every preceding byte
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .prototype_io import dumps_canonical

MAGIC = b"EGFE"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


class CheckpointIntegrityError(CheckpointFormatError):
    pass


@dataclass
class Checkpoint:
    config: dict
    params: dict  # name -> float32 ndarray
    meta: dict = field(default_factory=dict)
    version: int = VERSION


def to_bytes(ckpt: Checkpoint) -> bytes:
    header = dumps_canonical({"config": ckpt.config, "meta": ckpt.meta}).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", ckpt.version, len(header)), header]
    for name in sorted(ckpt.params):
        arr = np.asarray(ckpt.params[name], dtype="<f4", order="C")  # keeps rank 0
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def from_bytes(data: bytes) -> Checkpoint:
    if len(data) < 16:
        raise CheckpointIntegrityError("checkpoint is truncated")
    if data[:4] != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != crc:
        raise CheckpointIntegrityError("checksum mismatch: file is truncated or corrupted")
    version, hlen = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    pos = 12
    try:
        header = json.loads(body[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        params = {}
        while pos < len(body):
            (nlen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", body, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", body, pos)
            pos += 8 * rank
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            end = pos + 4 * count
            if end > len(body):
                raise CheckpointIntegrityError(f"parameter {name!r} runs past the end of the file")
            if name in params:
                raise CheckpointFormatError(f"parameter {name!r} appears twice")
            params[name] = np.frombuffer(body, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32)
            pos = end
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"malformed checkpoint: {exc}") from exc
    return Checkpoint(header.get("config", {}), params, header.get("meta", {}), version)


def save_checkpoint(ckpt, path):
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
