"""Neutral tensor container: manifest.json + raw little-endian float32 payload.

manifest.json:
    {"format_version": 1, "dtype": "f32", "byte_order": "little",
     "config": {...}, "tensors": [{"name", "shape", "offset"}, ...]}
weights.bin:
    row-major little-endian float32 payloads, concatenated without padding
    at the stated byte offsets, in manifest order.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.bin"


class CheckpointError(Exception):
    """A checkpoint is missing, malformed, or inconsistent."""


def payload_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def tensors_digest(tensors: dict[str, np.ndarray]) -> bytes:
    """SHA-256 over the concatenated payloads, in dict order.

    Equals sha256(weights.bin) for a checkpoint saved with save_tensors.
    """
    h = hashlib.sha256()
    for arr in tensors.values():
        h.update(payload_bytes(arr))
    return h.digest()


def save_tensors(
    out_dir, tensors: dict[str, np.ndarray], config: dict, extra: dict | None = None
) -> Path:
    """Write manifest + payload; tensor order follows dict insertion order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        data = payload_bytes(arr)
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        blobs.append(data)
        offset += len(data)
    manifest = {
        "format_version": 1,
        "dtype": "f32",
        "byte_order": "little",
        "config": config,
        "tensors": entries,
    }
    if extra:
        manifest.update(extra)
    (out_dir / WEIGHTS_NAME).write_bytes(b"".join(blobs))
    (out_dir / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )
    return out_dir


def load_tensors(src_dir) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint directory; returns (tensors in manifest order, manifest)."""
    src_dir = Path(src_dir)
    manifest_path = src_dir / MANIFEST_NAME
    weights_path = src_dir / WEIGHTS_NAME
    if not manifest_path.is_file():
        raise CheckpointError(f"missing {manifest_path}")
    if not weights_path.is_file():
        raise CheckpointError(f"missing {weights_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format_version") != 1:
        raise CheckpointError(f"unsupported format_version {manifest.get('format_version')!r}")
    if manifest.get("dtype") != "f32" or manifest.get("byte_order") != "little":
        raise CheckpointError("checkpoint must be little-endian float32")

    payload = weights_path.read_bytes()
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        name = entry["name"]
        shape = tuple(entry["shape"])
        offset = entry["offset"]
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(payload):
            raise CheckpointError(
                f"tensor {name!r} extends past end of {WEIGHTS_NAME} "
                f"({end} > {len(payload)})"
            )
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        arr = arr.reshape(shape).copy()
        if not np.isfinite(arr).all():
            raise CheckpointError(f"tensor {name!r} contains non-finite values")
        if name in tensors:
            raise CheckpointError(f"duplicate tensor {name!r} in manifest")
        tensors[name] = arr
    return tensors, manifest
