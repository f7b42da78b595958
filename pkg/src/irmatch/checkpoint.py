"""Versioned binary checkpoints.

Layout of `irmatch-ckpt v1` (documented for external readers):

    line 1: b"irmatch-ckpt v1\\n"
    line 2: model config as one JSON object + b"\\n"
    uint32 LE: tensor count
    per tensor, in ascending name order:
        uint16 LE  name length in bytes
        bytes      utf-8 name
        uint8      ndim
        uint32 LE  * ndim: dims
        float32 LE * prod(dims): row-major values

Values are stored as little-endian float32 regardless of the in-memory
dtype. The checkpoint fingerprint is the sha256 hex digest of the whole
file; embedding indexes carry it so stale indexes are rejected.
"""

from __future__ import annotations

import hashlib
import io
import struct
from pathlib import Path

import numpy as np

from .encoder import EncoderModel, ModelConfig

CKPT_MAGIC = b"irmatch-ckpt v1\n"


def checkpoint_bytes(model: EncoderModel) -> bytes:
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(model.config.to_json().encode("utf-8") + b"\n")
    names = model.param_names()
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        tensor = np.ascontiguousarray(model.params[name])
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", tensor.ndim))
        for dim in tensor.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(tensor.astype("<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(path: str | Path, model: EncoderModel) -> str:
    """Write the checkpoint and return its fingerprint."""
    data = checkpoint_bytes(model)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path: str | Path) -> tuple[EncoderModel, str]:
    """Read a checkpoint; returns (model, fingerprint)."""
    data = Path(path).read_bytes()
    fingerprint = hashlib.sha256(data).hexdigest()
    buf = io.BytesIO(data)
    magic = buf.readline()
    if magic != CKPT_MAGIC:
        raise ValueError(f"{path}: not an irmatch checkpoint (header {magic!r})")
    config = ModelConfig.from_json(buf.readline().decode("utf-8"))
    (count,) = struct.unpack("<I", buf.read(4))
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", buf.read(2))
        name = buf.read(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", buf.read(1))
        shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        raw = buf.read(4 * size)
        params[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
    return EncoderModel(config, params), fingerprint


def file_fingerprint(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
