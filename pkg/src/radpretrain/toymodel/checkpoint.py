"""Flat binary checkpoints: magic, version, JSON manifest, float64 data."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RPCKPT\x00\x01"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save(path: str | Path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    manifest = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(manifest)))
        fh.write(manifest)
        for name in sorted(params):
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    head = len(MAGIC)
    version, mlen = struct.unpack_from("<IQ", blob, head)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    head += struct.calcsize("<IQ")
    manifest = json.loads(blob[head : head + mlen])
    data = memoryview(blob)[head + mlen :]
    params = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=e["offset"]).astype(np.float64)
        params[e["name"]] = arr.reshape(e["shape"])
    return params, manifest.get("meta", {})
