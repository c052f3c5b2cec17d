"""Checkpoint serialization: a little-endian binary tensor file plus a JSON sidecar.

Binary layout (all integers little-endian):

    magic   8 bytes  b"DMAE2CKP"
    version u32      format version, currently 1
    count   u32      number of tensors
    then per tensor, in file order:
    name_len u32, name (UTF-8), rank u32, dims (rank x u64), payload (float32 LE)

The sidecar `<file>.json` lists every tensor name and shape in file order and
carries free-form metadata (step counters, config hash, ...). Optimizer moment
buffers ride along as ordinary tensors under "optim/m/<param>" and
"optim/v/<param>", with the step count in the metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DMAE2CKP"
VERSION = 1


class CheckpointError(RuntimeError):
    """Malformed or mismatched checkpoint file."""


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray], metadata: dict | None = None) -> None:
    """Write named float arrays to `path` and the sidecar to `path + '.json'`."""
    path = Path(path)
    names = list(tensors)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(names)))
        for name in names:
            # np.asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
            arr = np.asarray(tensors[name], dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())
    sidecar = {
        "format": MAGIC.decode("ascii"),
        "version": VERSION,
        "tensors": [{"name": n, "shape": list(np.asarray(tensors[n]).shape)} for n in names],
        "metadata": metadata or {},
    }
    with open(path.with_name(path.name + ".json"), "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns ({name: float32 array}, metadata)."""
    path = Path(path)
    with open(path, "rb") as f:
        if _read_exact(f, len(MAGIC), "magic") != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        version, count = struct.unpack("<II", _read_exact(f, 8, "header"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, "rank"))
            shape = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank, "dims")) if rank else ()
            n_elem = int(np.prod(shape, dtype=np.int64)) if rank else 1
            payload = _read_exact(f, 4 * n_elem, f"payload of '{name}'")
            if name in tensors:
                raise CheckpointError(f"duplicate tensor name '{name}'")
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        if f.read(1):
            raise CheckpointError("trailing bytes after last tensor")
    metadata: dict = {}
    sidecar_path = path.with_name(path.name + ".json")
    if sidecar_path.exists():
        with open(sidecar_path) as f:
            metadata = json.load(f).get("metadata", {})
    return tensors, metadata


def save_training_state(path: str | Path, params: dict, optimizer=None, metadata: dict | None = None) -> None:
    """Checkpoint model parameters and (optionally) optimizer moments together.

    `params` maps name -> Tensor (or ndarray). The optimizer, when given, must
    expose `m`, `v` dicts keyed by the same names and a `step_count`.
    """
    flat: dict[str, np.ndarray] = {}
    for name, p in params.items():
        flat[name] = p.data if hasattr(p, "data") else np.asarray(p)
    meta = dict(metadata or {})
    if optimizer is not None:
        for name, buf in optimizer.m.items():
            flat[f"optim/m/{name}"] = buf
        for name, buf in optimizer.v.items():
            flat[f"optim/v/{name}"] = buf
        meta["optimizer_step_count"] = optimizer.step_count
    save_tensors(path, flat, meta)


def load_training_state(path: str | Path, params: dict, optimizer=None) -> dict:
    """Restore parameters (and optimizer moments) in place; returns metadata.

    Every parameter name must be present with a matching shape. Optimizer
    restoration additionally requires the moment tensors and step count.
    """
    tensors, metadata = load_tensors(path)
    for name, p in params.items():
        if name not in tensors:
            raise CheckpointError(f"checkpoint missing parameter '{name}'")
        arr = tensors[name]
        if arr.shape != tuple(p.data.shape):
            raise CheckpointError(f"parameter '{name}' shape {arr.shape} != expected {tuple(p.data.shape)}")
        p.data[...] = arr.astype(p.data.dtype, copy=False)
        p.grad = None
    if optimizer is not None:
        if "optimizer_step_count" not in metadata:
            raise CheckpointError("checkpoint has no optimizer state")
        state = {
            "step_count": metadata["optimizer_step_count"],
            "m": {},
            "v": {},
        }
        for name in params:
            for kind in ("m", "v"):
                key = f"optim/{kind}/{name}"
                if key not in tensors:
                    raise CheckpointError(f"checkpoint missing optimizer moment '{key}'")
                state[kind][name] = tensors[key]
        optimizer.load_state_dict(state)
    return metadata
