"""Binary checkpoint format.

Layout (all little-endian)::

    magic      8 bytes   b"URFGSCK\\0"
    major      u16
    minor      u16
    meta_len   u32       length of the UTF-8 JSON metadata block
    count      u64       number of primitives N
    sh_k       u32       colour coefficients per channel
    reserved   u32       zero
    meta       meta_len bytes
    arrays     float64, in order: means (N,3), quats (N,4), log_scales (N,3),
               logit_opacity (N), sh (N,sh_k,3), raw_normals (N,3),
               logit_albedo (N,3), logit_metallic (N), logit_roughness (N)
    crc32      u32       of every preceding byte

The stored arrays are the unconstrained parameters, so a load reproduces the
optimizer state bit for bit.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..core import Gaussians

MAGIC = b"URFGSCK\0"
VERSION = (1, 0)
_HEADER = struct.Struct("<8sHHIQII")


class CheckpointError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    gaussians: Gaussians
    meta: dict = field(default_factory=dict)    # config_hash, iteration, seed, ...
    version: tuple = VERSION


def _layout(n, k):
    return [("means", (n, 3)), ("quats", (n, 4)), ("log_scales", (n, 3)), ("logit_opacity", (n,)),
            ("sh", (n, k, 3)), ("raw_normals", (n, 3)), ("logit_albedo", (n, 3)),
            ("logit_metallic", (n,)), ("logit_roughness", (n,))]


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    g = ckpt.gaussians
    n = len(g)
    k = g.sh.shape[1]
    meta = json.dumps(ckpt.meta, sort_keys=True, allow_nan=False).encode("utf-8")
    parts = [_HEADER.pack(MAGIC, ckpt.version[0], ckpt.version[1], len(meta), n, k, 0), meta]
    for name, shape in _layout(n, k):
        arr = getattr(g, name).detach().numpy()
        parts.append(np.ascontiguousarray(arr.reshape(shape), dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < _HEADER.size:
        raise CheckpointError(f"truncated header: {len(data)} of {_HEADER.size} bytes", len(data))
    magic, major, minor, meta_len, n, k, _ = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError("bad magic", 0)
    if major != VERSION[0]:
        kind = "newer" if major > VERSION[0] else "older"
        raise CheckpointVersionError(f"checkpoint major version {major} is {kind} than supported {VERSION[0]}", 8)
    off = _HEADER.size
    need = off + meta_len + 8 * sum(int(np.prod(s)) for _, s in _layout(n, k)) + 4
    if len(data) < need:
        raise CheckpointError(f"truncated file: {len(data)} bytes, expected {need}", len(data))
    if len(data) > need:
        raise CheckpointError(f"{len(data) - need} trailing bytes", need)
    (crc,) = struct.unpack_from("<I", data, need - 4)
    if zlib.crc32(data[:need - 4]) != crc:
        raise CheckpointError("checksum mismatch", need - 4)
    try:
        meta = json.loads(data[off:off + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"invalid metadata block: {e}", off) from None
    off += meta_len
    arrays = {}
    for name, shape in _layout(n, k):
        size = 8 * int(np.prod(shape))
        arrays[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=off).reshape(shape).astype(np.float64)
        off += size
    return Checkpoint(Gaussians(**arrays), meta, (major, minor))


def save_checkpoint(path, ckpt: Checkpoint | Gaussians, meta: dict | None = None) -> None:
    if isinstance(ckpt, Gaussians):
        ckpt = Checkpoint(ckpt, meta or {})
    data = encode_checkpoint(ckpt)
    with open(path, "wb") as f:
        f.write(data)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())
