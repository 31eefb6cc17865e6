"""Weight checkpoints: a flat named-tensor container.

Layout (all integers little-endian, documented in docs/checkpoint-format.md):

    magic   8 bytes  b"TABMARK1"
    config  u32 length + UTF-8 key=value text (the ModelConfig)
    count   u32 number of tensors
    tensor  u32 name length + UTF-8 name
            u32 rank + rank * u32 dims
            float64 raw values, C order

Tensors appear in registry order.  Loading rebuilds the model from the
embedded config and refuses name or shape mismatches, so a checkpoint can
never half-apply.
"""

from __future__ import annotations

import struct

import numpy as np

from .model import ModelConfig, TableModel

MAGIC = b"TABMARK1"


def save(path: str, model: TableModel) -> None:
    cfg_text = model.cfg.to_text().encode("utf-8")
    items = list(model.params.items())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(cfg_text)))
        fh.write(cfg_text)
        fh.write(struct.pack("<I", len(items)))
        for name, tensor in items:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            shape = tensor.data.shape
            fh.write(struct.pack("<I", len(shape)))
            for dim in shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())


def _read(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise ValueError("checkpoint truncated")
    return raw


def _read_u32(fh) -> int:
    return struct.unpack("<I", _read(fh, 4))[0]


def load(path: str) -> TableModel:
    """Rebuild a model from a checkpoint; every stored tensor must match."""
    with open(path, "rb") as fh:
        if _read(fh, len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic)")
        cfg = ModelConfig.from_text(_read(fh, _read_u32(fh)).decode("utf-8"))
        model = TableModel(cfg)
        expected = dict(model.params.items())
        seen: set[str] = set()
        for _ in range(_read_u32(fh)):
            name = _read(fh, _read_u32(fh)).decode("utf-8")
            rank = _read_u32(fh)
            shape = tuple(_read_u32(fh) for _ in range(rank))
            data = np.frombuffer(
                _read(fh, 8 * int(np.prod(shape, dtype=np.int64))), dtype="<f8"
            ).reshape(shape)
            if name in seen:
                raise ValueError(f"{path}: duplicate tensor {name!r}")
            if name not in expected:
                raise ValueError(f"{path}: unknown tensor {name!r}")
            if expected[name].data.shape != shape:
                raise ValueError(
                    f"{path}: tensor {name!r} has shape {shape}, "
                    f"model expects {expected[name].data.shape}"
                )
            expected[name].data = data.astype(np.float64).copy()
            seen.add(name)
        missing = sorted(set(expected) - seen)
        if missing:
            raise ValueError(f"{path}: missing tensors {missing[:3]}")
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after last tensor")
    return model
