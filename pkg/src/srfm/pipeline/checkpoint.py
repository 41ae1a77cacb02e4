"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SRFM" | u32 version | u32 n | n bytes ModelConfig JSON
    | u32 n | n bytes metadata JSON | u32 tensor count
    | per tensor: u16 n, name | u8 level | u8 frozen | u8 ndim | u32 * ndim shape | <f8 data
    | u32 crc32 of everything above
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import ModelConfig
from ..model import Foundation
from ..params import LEVELS, ParameterStore

MAGIC = b"SRFM"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    model: Foundation
    meta: dict = field(default_factory=dict)

    @property
    def config(self):
        return self.model.config

    @property
    def store(self):
        return self.model.store


def _json_bytes(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def to_bytes(ckpt: Checkpoint) -> bytes:
    model = ckpt.model
    meta = dict(ckpt.meta)
    meta["query_vocab"] = model.query_vocab
    meta["domains"] = list(model.domains)
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for blob in (_json_bytes(model.config.to_dict()), _json_bytes(meta)):
        parts += [struct.pack("<I", len(blob)), blob]
    parts.append(struct.pack("<I", len(model.store)))
    for name, p in model.store.items():
        raw = name.encode("utf-8")
        parts += [struct.pack("<H", len(raw)), raw,
                  struct.pack("<BBB", LEVELS.index(p.level), int(p.frozen), p.value.ndim),
                  struct.pack(f"<{p.value.ndim}I", *p.value.shape),
                  np.ascontiguousarray(p.value, dtype="<f8").tobytes()]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(buf: bytes) -> Checkpoint:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise CheckpointError("not an SRFM checkpoint (bad magic)")
    (version,) = struct.unpack("<I", buf[4:8])
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {VERSION}")
    if len(buf) < 12:
        raise CheckpointError("checkpoint truncated")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint corrupt or truncated (checksum mismatch)")
    r = _Reader(body)
    r.take(8)
    try:
        config = ModelConfig.from_dict(json.loads(r.take(r.unpack("<I")[0]).decode("utf-8")))
        meta = json.loads(r.take(r.unpack("<I")[0]).decode("utf-8"))
        store = ParameterStore()
        (count,) = r.unpack("<I")
        for _ in range(count):
            name = r.take(r.unpack("<H")[0]).decode("utf-8")
            level, frozen, ndim = r.unpack("<BBB")
            shape = r.unpack(f"<{ndim}I")
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
            store.add(name, data, LEVELS[level], bool(frozen))
    except (ValueError, KeyError, IndexError, UnicodeDecodeError) as err:
        if isinstance(err, CheckpointError):
            raise
        raise CheckpointError(f"checkpoint corrupt: {err}") from None
    if r.pos != len(body):
        raise CheckpointError("checkpoint has trailing bytes")
    query_vocab = meta.pop("query_vocab", {})
    domains = meta.pop("domains", None)
    return Checkpoint(Foundation(config, store, query_vocab, domains), meta)


def save_checkpoint(ckpt: Checkpoint, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(to_bytes(ckpt))
    except OSError as err:
        raise OSError(f"cannot write checkpoint to {path}: {err.strerror}") from err
    return path


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
