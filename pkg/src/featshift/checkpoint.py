"""Binary checkpoint container: magic, version, JSON config, named float64 blocks.

Layout (little-endian)::

    magic        4 bytes
    version      u32
    config_len   u32, followed by that many bytes of UTF-8 JSON
    n_blocks     u32
    per block:   u16 name_len, name bytes, u32 ndim, ndim x u32 dims, float64 payload
"""
from __future__ import annotations

import json
import struct

import numpy as np

from . import _io
from .errors import FormatError, MagicError, SizeError, VersionError

VERSION = 1


def encode(magic: bytes, config: dict, blocks: dict[str, np.ndarray]) -> bytes:
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    parts = [magic, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(blocks))]
    for name, arr in blocks.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise SizeError(f"{self.source}: truncated checkpoint (need {n} bytes at offset {self.pos})")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(data: bytes, magic: bytes, source: str = "<checkpoint>") -> tuple[dict, dict[str, np.ndarray]]:
    r = _Reader(data, source)
    got = r.take(4)
    if got != magic:
        raise MagicError(f"{source}: expected magic {magic!r}, found {got!r}")
    version, cfg_len = r.unpack("<II")
    if version != VERSION:
        raise VersionError(f"{source}: unsupported checkpoint version {version}")
    try:
        config = json.loads(r.take(cfg_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{source}: corrupt embedded config ({exc})") from exc
    (n_blocks,) = r.unpack("<I")
    blocks = {}
    for _ in range(n_blocks):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape, dtype=np.int64))
        blocks[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).copy()
    if r.pos != len(data):
        raise SizeError(f"{source}: {len(data) - r.pos} trailing bytes after last block")
    return config, blocks


def save(path, magic: bytes, config: dict, blocks: dict[str, np.ndarray]) -> None:
    _io.write_bytes(path, encode(magic, config, blocks))


def load(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return decode(fh.read(), magic, str(path))
