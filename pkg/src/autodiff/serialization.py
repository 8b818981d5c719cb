"""Weight files: a JSON manifest plus one raw little-endian float buffer.

Layout for a stem ``path/checkpoint``:
- ``checkpoint.json``: format version, per-entry name/shape/dtype/byte offset/length,
  and free-form metadata (architecture descriptor, step, metric, config fingerprint).
- ``checkpoint.bin``: entries concatenated in manifest order, row-major, little-endian.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from src.utils.errors import CheckpointError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def _stem(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".json", ".bin") else path


def save_weights(
    path: Union[str, Path],
    arrays: Mapping[str, np.ndarray],
    metadata: Optional[Mapping[str, Any]] = None,
) -> Path:
    """Write ``arrays`` to ``<stem>.json`` + ``<stem>.bin``; returns the manifest path."""
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    for name, array in arrays.items():
        dtype_name = np.dtype(array.dtype).name
        if dtype_name not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype_name} for '{name}'")
        raw = np.ascontiguousarray(array, dtype=_DTYPES[dtype_name]).tobytes()
        entries.append(
            {"name": name, "shape": list(array.shape), "dtype": dtype_name, "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)

    manifest = {
        "format_version": FORMAT_VERSION,
        "byte_order": "little",
        "buffer": stem.name + ".bin",
        "total_bytes": offset,
        "entries": entries,
        "metadata": dict(metadata or {}),
    }
    stem.with_suffix(".bin").write_bytes(b"".join(chunks))
    manifest_path = stem.with_suffix(".json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.debug("wrote %d arrays (%d bytes) to %s", len(entries), offset, manifest_path)
    return manifest_path


def load_weights(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Read a weight file written by ``save_weights``; returns (arrays, metadata)."""
    stem = _stem(path)
    manifest_path = stem.with_suffix(".json")
    if not manifest_path.exists():
        raise CheckpointError(f"checkpoint manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"unreadable checkpoint manifest {manifest_path}: {e}") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format_version')!r}")

    buffer_path = manifest_path.parent / manifest["buffer"]
    raw = buffer_path.read_bytes()
    if len(raw) != manifest["total_bytes"]:
        raise CheckpointError(f"{buffer_path} holds {len(raw)} bytes, manifest expects {manifest['total_bytes']}")

    arrays: Dict[str, np.ndarray] = {}
    for entry in manifest["entries"]:
        dtype = np.dtype(_DTYPES[entry["dtype"]])
        chunk = raw[entry["offset"] : entry["offset"] + entry["nbytes"]]
        values = np.frombuffer(chunk, dtype=dtype).astype(entry["dtype"])
        arrays[entry["name"]] = values.reshape(entry["shape"])
    return arrays, manifest["metadata"]


__all__ = ["FORMAT_VERSION", "save_weights", "load_weights"]
