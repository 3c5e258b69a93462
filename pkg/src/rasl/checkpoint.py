"""Binary checkpoints: model parameters, optimizer state and the config they came from.

Layout (little-endian)::

    b"RASLCKPT"  u32 version
    u32 len + utf-8 config text      (TrainConfig.to_text)
    u64 step
    f64 lr, f64 alpha, f64 eps
    u32 count, then per parameter:   u16 len + name, u8 ndim, u32 dims..., f32 data
    u32 count, then per accumulator: same record scheme

Parameters are stored as 32-bit floats, which is the working precision of
training, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .errors import FormatError, StateError
from .model import HighlightModel
from .trainer import RMSprop

MAGIC = b"RASLCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    config: TrainConfig
    model: HighlightModel
    optimizer: RMSprop
    step: int


def _write_records(fh, arrays: dict[str, np.ndarray]) -> None:
    fh.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, buf: bytes, source):
        self.buf = buf
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.source}: truncated checkpoint")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def records(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (length,) = self.unpack("<H")
            name = self.take(length).decode("utf-8")
            (ndim,) = self.unpack("<B")
            shape = self.unpack(f"<{ndim}I")
            size = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(self.take(4 * size), dtype="<f4").astype(np.float32).reshape(shape)
            out[name] = data
        return out


def checkpoint_save(model: HighlightModel, optimizer: RMSprop, path, config: TrainConfig, step: int = 0) -> None:
    params = model.registry()
    if optimizer.accumulators.keys() != params.keys():
        raise StateError("optimizer state does not match the model registry")
    fh = io.BytesIO()
    fh.write(MAGIC)
    fh.write(struct.pack("<I", VERSION))
    text = config.to_text().encode("utf-8")
    fh.write(struct.pack("<I", len(text)))
    fh.write(text)
    fh.write(struct.pack("<Q", step))
    fh.write(struct.pack("<3d", optimizer.lr, optimizer.alpha, optimizer.eps))
    _write_records(fh, {name: p.data for name, p in params.items()})
    _write_records(fh, optimizer.accumulators)
    Path(path).write_bytes(fh.getvalue())


def checkpoint_load(path) -> Checkpoint:
    """Read a checkpoint and rebuild the model and optimizer it describes."""
    rd = _Reader(Path(path).read_bytes(), path)
    magic = rd.take(len(MAGIC))
    if magic != MAGIC:
        raise FormatError(f"{path}: not a checkpoint of a supported version (bad magic {magic!r})")
    (version,) = rd.unpack("<I")
    if version != VERSION:
        raise FormatError(f"{path}: checkpoint version {version} is not supported (expected {VERSION})")
    (length,) = rd.unpack("<I")
    config = TrainConfig.from_text(rd.take(length).decode("utf-8"))
    (step,) = rd.unpack("<Q")
    lr, alpha, eps = rd.unpack("<3d")
    params = rd.records()
    accumulators = rd.records()
    if rd.pos != len(rd.buf):
        raise FormatError(f"{path}: {len(rd.buf) - rd.pos} trailing bytes")

    model = HighlightModel(config.d_v, config.d_a, config.channels, config.gamma0, config.seed)
    load_parameters(model, params)
    optimizer = RMSprop(model.registry(), lr, alpha, eps)
    if accumulators.keys() != params.keys():
        raise StateError(f"{path}: optimizer records do not match parameter records")
    for name, acc in accumulators.items():
        if acc.shape != optimizer.accumulators[name].shape:
            raise StateError(f"{name}: accumulator shape {acc.shape} differs from parameter")
        optimizer.accumulators[name] = acc.copy()
    return Checkpoint(config, model, optimizer, step)


def load_parameters(model: HighlightModel, arrays: dict[str, np.ndarray]) -> None:
    """Copy named arrays into the model; names and shapes must match its registry exactly."""
    params = model.registry()
    missing = params.keys() - arrays.keys()
    extra = arrays.keys() - params.keys()
    if missing or extra:
        raise StateError(f"registry mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, p in params.items():
        arr = arrays[name]
        if arr.shape != p.shape:
            raise StateError(f"{name}: stored shape {arr.shape} differs from model {p.shape}")
        p.data = arr.astype(p.dtype, copy=True)
