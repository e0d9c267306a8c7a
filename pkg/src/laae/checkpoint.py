"""Binary checkpoint format.

Layout (all integers little-endian unsigned 32-bit)::

    b"LAAE" | version | kind_len | kind | 32-byte architecture hash | count
    then per parameter:
    name_len | name (utf-8) | rank | dims[rank] | float64 LE payload
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import MODEL_CONFIGS, ParameterSet, architecture_hash

MAGIC = b"LAAE"
VERSION = 1
_U32 = struct.Struct("<I")


class CheckpointError(ValueError):
    """Malformed or mismatched checkpoint."""


@dataclass
class Checkpoint:
    kind: str
    config_hash: bytes
    params: ParameterSet


def encode(kind: str, params: ParameterSet) -> bytes:
    config = MODEL_CONFIGS[kind]()
    kind_b = kind.encode("ascii")
    out = [MAGIC, _U32.pack(VERSION), _U32.pack(len(kind_b)), kind_b,
           architecture_hash(config), _U32.pack(len(params))]
    for name, value in params.items():
        nb = name.encode("utf-8")
        out += [_U32.pack(len(nb)), nb, _U32.pack(value.ndim)]
        out += [_U32.pack(d) for d in value.shape]
        out.append(value.astype("<f8", copy=False).tobytes())
    return b"".join(out)


def save_checkpoint(path: str | Path, kind: str, params: ParameterSet) -> None:
    Path(path).write_bytes(encode(kind, params))


class _Reader:
    def __init__(self, raw: bytes, source: str):
        self.raw, self.pos, self.source = raw, 0, source

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.raw):
            raise CheckpointError(
                f"{self.source}: truncated reading {what} at offset {self.pos}: "
                f"expected length >= {end} bytes, actual {len(self.raw)}")
        chunk = self.raw[self.pos:end]
        self.pos = end
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def decode(raw: bytes, source: str = "<bytes>", expect_kind: str | None = None) -> Checkpoint:
    r = _Reader(raw, source)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported version {version} at offset 4")
    kind = r.take(r.u32("kind length"), "model kind").decode("ascii", "replace")
    if kind not in MODEL_CONFIGS:
        raise CheckpointError(f"{source}: unknown model kind {kind!r}")
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(f"{source}: checkpoint holds a {kind} model, expected {expect_kind}")
    h_off = r.pos
    config_hash = r.take(32, "config hash")
    if config_hash != architecture_hash(MODEL_CONFIGS[kind]()):
        raise CheckpointError(f"{source}: config hash at offset {h_off} does not match the {kind} architecture")
    count = r.u32("parameter count")
    items = []
    for _ in range(count):
        name = r.take(r.u32("name length"), "name").decode("utf-8")
        rank = r.u32(f"{name} rank")
        dims = tuple(r.u32(f"{name} dims") for _ in range(rank))
        nbytes = 8 * int(np.prod(dims, dtype=np.int64))
        payload = r.take(nbytes, f"{name} payload")
        items.append((name, np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)))
    if r.pos != len(raw):
        raise CheckpointError(f"{source}: {len(raw) - r.pos} trailing bytes after offset {r.pos}")
    params = ParameterSet(items)
    expected = [(n, s) for n, s, _ in MODEL_CONFIGS[kind]().param_shapes()]
    actual = [(n, params[n].shape) for n in params]
    if expected != actual:
        raise CheckpointError(f"{source}: parameter layout does not match the {kind} architecture")
    return Checkpoint(kind, config_hash, params)


def load_checkpoint(path: str | Path, expect_kind: str | None = None) -> Checkpoint:
    return decode(Path(path).read_bytes(), str(path), expect_kind)
