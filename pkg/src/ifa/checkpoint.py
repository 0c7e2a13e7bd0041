"""Checkpoints: a JSON manifest plus one little-endian raw float blob."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FORMAT = "ifa-checkpoint/1"


class CheckpointError(ValueError):
    pass


def _blob_path(manifest: Path) -> Path:
    return manifest.with_suffix(".bin")


def params_blob(arrays: dict[str, np.ndarray], dtype: str) -> tuple[bytes, list[dict]]:
    code = {"float64": "<f8", "float32": "<f4"}[dtype]
    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        raw = np.ascontiguousarray(arrays[name], dtype=code).tobytes()
        entries.append({"name": name, "shape": list(arrays[name].shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    return b"".join(chunks), entries


def content_hash(arrays: dict[str, np.ndarray], dtype: str = "float64") -> str:
    blob, entries = params_blob(arrays, dtype)
    h = hashlib.sha1(blob)
    h.update(json.dumps(entries, sort_keys=True).encode())
    return h.hexdigest()


def save(path, arrays: dict[str, np.ndarray], dtype: str = "float64",
         meta: dict | None = None) -> tuple[Path, Path]:
    """Write ``path`` (manifest) and its ``.bin`` sibling; returns both paths."""
    path = Path(path)
    blob, entries = params_blob(arrays, dtype)
    bin_path = _blob_path(path)
    manifest = {
        "format": FORMAT,
        "dtype": dtype,
        "blob": bin_path.name,
        "byte_length": len(blob),
        "params": entries,
        "meta": meta or {},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    bin_path.write_bytes(blob)
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path, bin_path


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns (name -> array, meta)."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a JSON manifest ({exc})") from exc
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unknown format {manifest.get('format')!r}")
    blob = (path.parent / manifest["blob"]).read_bytes()
    if len(blob) != manifest["byte_length"]:
        raise CheckpointError(
            f"{path}: blob holds {len(blob)} bytes, manifest says {manifest['byte_length']}")
    code = {"float64": "<f8", "float32": "<f4"}[manifest["dtype"]]
    itemsize = np.dtype(code).itemsize
    arrays = {}
    for e in manifest["params"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        if e["nbytes"] != count * itemsize or e["offset"] + e["nbytes"] > len(blob):
            raise CheckpointError(f"{path}: bad extent for {e['name']}")
        arr = np.frombuffer(blob, dtype=code, count=count, offset=e["offset"])
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return arrays, manifest.get("meta", {})
