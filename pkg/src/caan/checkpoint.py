"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    b"CAANCKPT"                 8-byte magic
    uint32 version              currently 1
    uint32 n, n bytes           UTF-8 JSON echo of the TrainingConfig (sorted keys)
    uint32 count                number of tensors
    count x:
        uint16 n, n bytes       UTF-8 tensor name ("gen.*" or "disc.*")
        uint8 ndim
        ndim x uint32           shape
        prod(shape) x float32   row-major data
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .discriminator import DiscriminatorParams
from .errors import CaanError
from .generator import GeneratorParams
from .tensor import Tensor

MAGIC = b"CAANCKPT"
VERSION = 1


class CheckpointError(CaanError, ValueError):
    pass


def _write_tensor(buf: list, name: str, t: Tensor):
    raw = name.encode()
    buf.append(struct.pack("<H", len(raw)) + raw)
    buf.append(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
    buf.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def checkpoint_bytes(gen: GeneratorParams, config, disc: DiscriminatorParams | None = None) -> bytes:
    cfg = json.dumps(config.to_dict(), sort_keys=True).encode()
    named = [(f"gen.{k}", v) for k, v in gen.tensors.items()]
    if disc is not None:
        named += [(f"disc.{k}", v) for k, v in disc.tensors.items()]
    buf = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(named))]
    for name, t in named:
        _write_tensor(buf, name, t)
    return b"".join(buf)


def save_checkpoint(path, gen: GeneratorParams, config, disc: DiscriminatorParams | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(gen, config, disc))
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos} (needed {n} more)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """Return ``(generator, config, discriminator_or_None)``.

    Every tensor's shape is checked against the layout implied by the
    embedded config.
    """
    from .training import TrainingConfig

    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (n,) = r.unpack("<I")
    config = TrainingConfig.from_dict(json.loads(r.take(n).decode()))
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
        tensors[name] = arr
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")

    gen = GeneratorParams(config.d, config.channels, config.score_hidden)
    gen.tensors = _restore(tensors, "gen.", GeneratorParams.layout(config.d, config.channels, config.score_hidden), path)
    disc = None
    if any(k.startswith("disc.") for k in tensors):
        disc = DiscriminatorParams(config.d, config.hidden)
        disc.tensors = _restore(tensors, "disc.", DiscriminatorParams.layout(config.d, config.hidden), path)
    return gen, config, disc


def _restore(tensors: dict, prefix: str, layout, path) -> dict:
    out = {}
    expected = {name for name, *_ in layout}
    present = {k[len(prefix) :] for k in tensors if k.startswith(prefix)}
    if present != expected:
        missing, extra = sorted(expected - present), sorted(present - expected)
        raise CheckpointError(f"{path}: parameter names differ from config (missing {missing}, extra {extra})")
    for name, shape, *_ in layout:
        arr = tensors[prefix + name]
        if tuple(arr.shape) != tuple(shape):
            raise CheckpointError(f"{path}: {prefix}{name} has shape {arr.shape}, config implies {shape}")
        out[name] = Tensor(arr.astype(np.float32), requires_grad=True)
    return out
