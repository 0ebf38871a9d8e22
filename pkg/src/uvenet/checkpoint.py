"""Binary weight container.

Layout (all integers little-endian)::

    b"UVEW" | u32 version=1 | u32 tensor_count | u32 config_len | config JSON (UTF-8)
    per tensor: u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] | f32 payload
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"UVEW"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(tensors: Mapping[str, np.ndarray], config: dict | None = None) -> bytes:
    blob = json.dumps(config or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<III", VERSION, len(tensors), len(blob)), blob]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    view = memoryview(buf)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes at offset {pos}, have {len(view) - pos}")
        out = view[pos : pos + n]
        pos += n
        return out

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("bad magic, not a UVEW checkpoint")
    version, count, cfg_len = struct.unpack("<III", take(12))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        config = json.loads(bytes(take(cfg_len)).decode("utf-8")) if cfg_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt config blob: {exc}") from exc
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        numel = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(bytes(take(4 * numel)), dtype="<f4").astype(np.float32).reshape(dims)
        tensors[name] = data
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after last tensor")
    return tensors, config


def expected_size(shapes: Mapping[str, tuple], config: dict | None = None) -> int:
    blob = json.dumps(config or {}, sort_keys=True).encode("utf-8")
    size = 4 + 12 + len(blob)
    for name, shape in shapes.items():
        size += 2 + len(name.encode("utf-8")) + 1 + 4 * len(shape) + 4 * int(np.prod(shape, dtype=np.int64))
    return size


def save(path, tensors: Mapping[str, np.ndarray], config: dict | None = None) -> None:
    Path(path).write_bytes(encode(tensors, config))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode(Path(path).read_bytes())
