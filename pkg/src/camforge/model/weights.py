"""Binary tensor-record files (``CAMW``) for weights, embeddings and features.

Layout, all little-endian::

    b"CAMW" | version:u32 | record*
    record = name_len:u32 | name:utf-8 | ndim:u32 | dims:u32[ndim] | data:f32[prod(dims)]

Records run to end of file.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

from camforge.errors import (
    DimensionMismatchError,
    FormatError,
    MagicMismatchError,
    MissingTensorError,
    UnknownTensorError,
)
from camforge.model.campp import CAMPPlus, build_model
from camforge.model.config import ModelConfig

MAGIC = b"CAMW"
VERSION = 1


def write_tensor_records(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_tensor_records(path: str | Path) -> "OrderedDict[str, np.ndarray]":
    buf = Path(path).read_bytes()
    if len(buf) < 8:
        raise FormatError(f"{path}: truncated header")
    if buf[:4] != MAGIC:
        raise MagicMismatchError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos = 8
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"{path}: truncated record at byte {pos}")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        (name_len,) = struct.unpack("<I", take(4))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{path}: tensor name is not UTF-8") from None
        (ndim,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims)
        if name in out:
            raise FormatError(f"{path}: duplicate tensor {name!r}")
        out[name] = data.astype(np.float32)
    return out


def model_state(model: CAMPPlus) -> "OrderedDict[str, np.ndarray]":
    state: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, p in model.named_parameters():
        state[name] = p.data
    for name, b in model.named_buffers():
        state[name] = b
    return state


def save_weights(model: CAMPPlus, path: str | Path) -> None:
    write_tensor_records(path, model_state(model))


def load_weights(path: str | Path, preset: str | ModelConfig = "campp") -> CAMPPlus:
    """Build ``preset`` and fill every parameter and buffer from ``path``."""
    records = read_tensor_records(path)
    model = build_model(preset, seed=0)
    state = model_state(model)
    unknown = [n for n in records if n not in state]
    if unknown:
        raise UnknownTensorError(f"{path}: unknown tensor(s): {', '.join(unknown)}")
    missing = [n for n in state if n not in records]
    if missing:
        raise MissingTensorError(f"{path}: missing tensor(s): {', '.join(missing[:5])}")
    for name, target in state.items():
        src = records[name]
        if src.shape != target.shape:
            raise DimensionMismatchError(
                f"{path}: {name} has shape {src.shape}, model expects {target.shape}"
            )
        target[...] = src
    return model
