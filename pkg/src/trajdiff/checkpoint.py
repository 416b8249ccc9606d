"""Self-describing binary checkpoint container.

Layout: magic ``TDCK``, format version (u32 LE), a UTF-8 JSON manifest
(u32 length prefix) carrying architecture hyperparameters and optimizer
state, then a record count and one record per array:

    name (u16 length + UTF-8 bytes), dtype tag (u8), ndim (u8),
    dims (u32 each), raw little-endian payload.

Loading validates the manifest against the caller's expectations before any
parameter is bound, so architecture mismatches fail fast.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .engine import EngineError
from .optim import ParameterStore

MAGIC = b"TDCK"
FORMAT_VERSION = 1

_DTYPE_TAGS = {0: "<f8", 1: "<f4"}


class CheckpointError(EngineError):
    """Malformed or incompatible checkpoint file."""


def _write_record(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    if arr.dtype == np.float64:
        tag = 0
    elif arr.dtype == np.float32:
        tag = 1
    else:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
    fh.write(struct.pack("<BB", tag, arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[tag]).tobytes())


def save_checkpoint(path: str | Path, store: ParameterStore, manifest: dict) -> None:
    """Write parameters, AdamW moments, and a manifest to ``path``."""
    manifest = dict(manifest)
    manifest["step_count"] = store.step_count
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    records: list[tuple[str, np.ndarray]] = []
    for name in sorted(store.values):
        records.append((name, store.values[name]))
        records.append((f"{name}.adam_m", store.m[name]))
        records.append((f"{name}.adam_v", store.v[name]))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(records)))
        for name, arr in records:
            _write_record(fh, name, arr)


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint file")
    return data


def load_checkpoint(path: str | Path) -> tuple[ParameterStore, dict]:
    """Read a checkpoint back into a fresh ParameterStore plus its manifest."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4))
        manifest = json.loads(_read_exact(fh, blob_len).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            tag, ndim = struct.unpack("<BB", _read_exact(fh, 2))
            if tag not in _DTYPE_TAGS:
                raise CheckpointError(f"{path}: unknown dtype tag {tag} for {name!r}")
            shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim))
            n_bytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(_DTYPE_TAGS[tag]).itemsize
            arrays[name] = np.frombuffer(_read_exact(fh, n_bytes), dtype=_DTYPE_TAGS[tag]).reshape(shape).astype(np.float64)

    store = ParameterStore()
    for name, arr in arrays.items():
        if name.endswith(".adam_m") or name.endswith(".adam_v"):
            continue
        store.values[name] = arr
        store.m[name] = arrays.get(f"{name}.adam_m", np.zeros_like(arr))
        store.v[name] = arrays.get(f"{name}.adam_v", np.zeros_like(arr))
    store.step_count = int(manifest.get("step_count", 0))
    return store, manifest


def validate_manifest(manifest: dict, expected: dict, path: str = "checkpoint") -> None:
    """Reject a checkpoint whose recorded hyperparameters differ from ``expected``."""
    mismatches = []
    for key, want in expected.items():
        have = manifest.get(key)
        if have != want:
            mismatches.append(f"{key}: checkpoint has {have!r}, run config wants {want!r}")
    if mismatches:
        raise CheckpointError(f"{path}: architecture mismatch: " + "; ".join(mismatches))
