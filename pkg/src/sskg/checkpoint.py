"""Parameter checkpoints: a JSON manifest plus one raw float64 blob.

Layout of a checkpoint directory::

    manifest.json   {"format": "sskg-checkpoint", "version": 1,
                     "meta": {...},                       # seeds, vocabularies, sizes
                     "tensors": [{"name": str, "shape": [int, ...],
                                  "offset": int, "nbytes": int}, ...]}
    tensors.bin     tensors concatenated in manifest order, each row-major,
                    IEEE-754 binary64 little-endian, no padding

Tensors are written in ascending name order, so a set of parameters always
serialises to the same bytes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

FORMAT = "sskg-checkpoint"
VERSION = 1
MANIFEST = "manifest.json"
BLOB = "tensors.bin"


class CheckpointError(ValueError):
    pass


def tensor_bytes(tensors: Mapping[str, np.ndarray]) -> bytes:
    """The exact blob bytes that :func:`save_checkpoint` would write."""
    return b"".join(
        np.ascontiguousarray(tensors[name], dtype="<f8").tobytes() for name in sorted(tensors)
    )


def save_checkpoint(path: str | Path, tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        nbytes = arr.size * 8
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    manifest = {"format": FORMAT, "version": VERSION, "meta": dict(meta or {}), "tensors": entries}
    (path / BLOB).write_bytes(tensor_bytes(tensors))
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
        blob = (path / BLOB).read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"missing checkpoint file: {exc.filename}") from exc
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format")
    tensors = {}
    for entry in manifest["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(blob):
            raise CheckpointError(f"{path}: tensor {entry['name']!r} overruns blob")
        arr = np.frombuffer(blob[start:start + n], dtype="<f8").astype(np.float64)
        tensors[entry["name"]] = arr.reshape(entry["shape"])
    return tensors, manifest["meta"]
