"""Checkpoint I/O: a JSON manifest plus one little-endian float64 blob.

Manifest layout::

    {"format": "vtspot-checkpoint", "version": 1, "blob": "<name>.bin",
     "parameters": [{"name", "shape", "dtype": "f64", "offset", "length"}, ...],
     ...extra keys (model config, seed, optimizer state)...}

``offset``/``length`` are in bytes into the blob.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "vtspot-checkpoint"


class CheckpointError(ValueError):
    pass


def save_arrays(manifest_path, arrays: dict[str, np.ndarray], extra: dict | None = None) -> Path:
    manifest_path = Path(manifest_path)
    blob_path = manifest_path.with_suffix(".bin")
    entries = []
    offset = 0
    with open(blob_path, "wb") as fh:
        for name, arr in arrays.items():
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            fh.write(raw)
            entries.append({"name": name, "shape": list(np.shape(arr)), "dtype": "f64",
                            "offset": offset, "length": len(raw)})
            offset += len(raw)
    manifest = {"format": FORMAT, "version": 1, "blob": blob_path.name, "parameters": entries}
    manifest.update(extra or {})
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=False) + "\n")
    return manifest_path


def load_arrays(manifest_path) -> tuple[dict[str, np.ndarray], dict]:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{manifest_path}: not a {FORMAT} manifest")
    blob = (manifest_path.parent / manifest["blob"]).read_bytes()
    arrays = {}
    for e in manifest["parameters"]:
        if e["dtype"] != "f64":
            raise CheckpointError(f"unsupported dtype {e['dtype']!r} for {e['name']}")
        chunk = blob[e["offset"]:e["offset"] + e["length"]]
        if len(chunk) != e["length"]:
            raise CheckpointError(f"blob truncated at parameter {e['name']}")
        arrays[e["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return arrays, manifest
