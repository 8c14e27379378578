"""Versioned little-endian binary checkpoints.

Layout: magic, format version, preset tag, step/epoch counters, a
canonical-JSON RNG state blob, then length-prefixed records for
parameters, buffers and Adam moments. Loading a checkpoint and saving it
again reproduces the bytes exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"LSEGCKP1"
VERSION = 1


class CheckpointError(ValueError):
    """Raised on malformed or version-incompatible checkpoint files."""


@dataclass
class Checkpoint:
    preset: str
    fusion_mode: str
    step: int
    epoch: int
    rng_state: dict
    params: dict[str, np.ndarray] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_step: int = 0


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    dims = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}q",
                                                     *arr.shape)
    return _pack_str(name) + dims + payload


def _pack_section(arrays: dict[str, np.ndarray]) -> bytes:
    out = [struct.pack("<I", len(arrays))]
    out += [_pack_array(name, arr) for name, arr in arrays.items()]
    return b"".join(out)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise CheckpointError("truncated checkpoint")
        chunk = self.blob[self.off:self.off + n]
        self.off += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def array(self) -> tuple[str, np.ndarray]:
        name = self.string()
        ndim = self.u32()
        shape = struct.unpack(f"<{ndim}q", self.take(8 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(self.take(8 * count), dtype="<f8")
        return name, data.reshape(shape).astype(np.float64)

    def section(self) -> dict[str, np.ndarray]:
        return dict(self.array() for _ in range(self.u32()))


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    rng_blob = json.dumps(ckpt.rng_state, sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        _pack_str(ckpt.preset),
        _pack_str(ckpt.fusion_mode),
        struct.pack("<QQQ", ckpt.step, ckpt.epoch, ckpt.adam_step),
        struct.pack("<I", len(rng_blob)), rng_blob,
        _pack_section(ckpt.params),
        _pack_section(ckpt.buffers),
        _pack_section(ckpt.adam_m),
        _pack_section(ckpt.adam_v),
    ]
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> Checkpoint:
    reader = _Reader(Path(path).read_bytes())
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError(
            f"{path}: format version {version} unsupported (expected "
            f"{VERSION})")
    preset = reader.string()
    fusion_mode = reader.string()
    step, epoch, adam_step = (reader.u64(), reader.u64(), reader.u64())
    rng_state = json.loads(reader.take(reader.u32()).decode("utf-8"))
    params = reader.section()
    buffers = reader.section()
    adam_m = reader.section()
    adam_v = reader.section()
    if reader.off != len(reader.blob):
        raise CheckpointError(f"{path}: trailing bytes after checkpoint")
    return Checkpoint(preset=preset, fusion_mode=fusion_mode, step=step,
                      epoch=epoch, rng_state=rng_state, params=params,
                      buffers=buffers, adam_m=adam_m, adam_v=adam_v,
                      adam_step=adam_step)
