"""Checkpoint files: ``TNCK`` magic, u32 header length, JSON header, float32 blob.

The blob holds every parameter, then every buffer, in declaration order as
little-endian float32.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .layers import Module

MAGIC = b"TNCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _arrays(model: Module) -> list[tuple[str, np.ndarray]]:
    return [(n, p.data) for n, p in model.named_parameters()] + list(model.named_buffers())


def state_hash(model: Module) -> str:
    h = hashlib.sha256()
    for name, arr in _arrays(model):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return h.hexdigest()


def save_checkpoint(path, model: Module, metadata: dict | None = None) -> str:
    arrays = _arrays(model)
    header = {
        "format": "tensor-nn",
        "version": FORMAT_VERSION,
        "graph": model.describe(),
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        "metadata": metadata or {},
    }
    head = json.dumps(header, sort_keys=True).encode()
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in arrays)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(MAGIC + len(head).to_bytes(4, "little") + head + blob)
    return state_hash(model)


def read_header(path) -> dict:
    data = Path(path).read_bytes()
    return _split(data)[0]


def _split(data: bytes) -> tuple[dict, bytes]:
    if data[:4] != MAGIC or len(data) < 8:
        raise CheckpointError("not a tensor-nn checkpoint")
    n = int.from_bytes(data[4:8], "little")
    try:
        header = json.loads(data[8 : 8 + n])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    return header, data[8 + n :]


def load_checkpoint(path, model: Module) -> dict:
    """Fill ``model`` in place; returns the stored metadata."""
    header, blob = _split(Path(path).read_bytes())
    expected = [(n, list(a.shape)) for n, a in _arrays(model)]
    stored = [(t["name"], t["shape"]) for t in header["tensors"]]
    if expected != stored:
        raise CheckpointError("checkpoint tensors do not match the model's layer graph")
    need = sum(int(np.prod(s)) for _, s in stored) * 4
    if len(blob) != need:
        raise CheckpointError(f"checkpoint blob has {len(blob)} bytes, expected {need}")
    params = dict(model.named_parameters())
    off = 0
    for name, shape in stored:
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        if name in params:
            p = params[name]
            p.data = arr.astype(p.data.dtype)
        else:
            model.set_buffer(name, arr.astype(np.float32).copy())
    return header.get("metadata", {})
