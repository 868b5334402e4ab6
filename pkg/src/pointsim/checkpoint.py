"""Checkpoint blob: JSON manifest + flat little-endian parameter payloads.

Layout: 8-byte magic, u64-LE manifest length, manifest JSON (utf-8),
then the concatenated raw payloads in manifest order.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np

MAGIC = b"PTSCKPT1"

_DTYPE_TAGS = {"float32": "<f4", "float64": "<f8"}


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(path, params: dict, config: dict, extra: dict | None = None):
    """Write named arrays and their model config atomically."""
    entries, payloads, offset = [], [], 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name])
        tag = _DTYPE_TAGS[str(arr.dtype)]
        raw = arr.astype(tag).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": tag,
                        "offset": offset, "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    manifest = {
        "format": 1,
        "precision": sorted({e["dtype"] for e in entries}),
        "config": config,
        "config_hash": config_hash(config),
        "params": entries,
    }
    if extra:
        manifest["extra"] = extra
    blob = json.dumps(manifest, sort_keys=True).encode()

    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(len(blob).to_bytes(8, "little"))
            f.write(blob)
            for raw in payloads:
                f.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Returns (config, params dict, manifest)."""
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise ValueError("not a checkpoint file")
        n = int.from_bytes(f.read(8), "little")
        manifest = json.loads(f.read(n).decode())
        body = f.read()
    params = {}
    for e in manifest["params"]:
        raw = body[e["offset"]:e["offset"] + e["nbytes"]]
        params[e["name"]] = np.frombuffer(raw, dtype=e["dtype"]).reshape(e["shape"]).copy()
    if config_hash(manifest["config"]) != manifest["config_hash"]:
        raise ValueError("config hash mismatch")
    return manifest["config"], params, manifest
