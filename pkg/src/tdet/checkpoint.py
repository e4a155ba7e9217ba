"""Binary checkpoint container.

Layout: magic ``TDET``, format version (u32 LE), tensor count (u32 LE),
then per tensor: name length (u16 LE), UTF-8 name, rank (u8), dims
(u32 LE each), raw float32 LE data. Model configuration rides along as
reserved ``config.*`` scalar tensors, so the format stays homogeneous.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig

MAGIC = b"TDET"
VERSION = 1
_CONFIG_PREFIX = "config."


class CheckpointError(ValueError):
    """Raised for unreadable or corrupt checkpoint files."""


def _config_tensors(config: ModelConfig) -> dict:
    return {
        "config.num_classes": np.array([config.num_classes], dtype=np.float32),
        "config.deformable": np.array([1.0 if config.deformable else 0.0], dtype=np.float32),
        "config.fpn": np.array([1.0 if config.fpn else 0.0], dtype=np.float32),
        "config.ratios": np.asarray(config.ratios, dtype=np.float32),
    }


def save_checkpoint(path, params: dict, config: ModelConfig) -> None:
    entries = dict(params)
    entries.update(_config_tensors(config))
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<I", len(entries))
    for name, tensor in entries.items():
        tensor = np.ascontiguousarray(tensor, dtype=np.float32)
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", tensor.ndim)
        for dim in tensor.shape:
            blob += struct.pack("<I", dim)
        blob += tensor.tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path):
    """Returns (params, ModelConfig)."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from None
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("bad magic; not a TDET checkpoint")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        size = int(np.prod(dims)) if dims else 1
        tensor = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims).copy()
        tensors[name] = tensor
    if pos != len(data):
        raise CheckpointError("trailing bytes after last tensor")

    try:
        config = ModelConfig(
            num_classes=int(tensors.pop("config.num_classes")[0]),
            deformable=bool(tensors.pop("config.deformable")[0]),
            fpn=bool(tensors.pop("config.fpn")[0]),
            ratios=tuple(float(r) for r in tensors.pop("config.ratios")),
        )
    except KeyError as exc:
        raise CheckpointError(f"checkpoint missing {exc} entry") from None
    params = {k: v for k, v in tensors.items() if not k.startswith(_CONFIG_PREFIX)}
    return params, config
