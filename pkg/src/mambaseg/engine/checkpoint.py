"""Checkpoint archive: manifest.json + raw little-endian payload.

Round-trips are bit-exact. The manifest records name, shape, dtype and byte
offset for every tensor plus arbitrary caller metadata (config hash etc.).
"""

from __future__ import annotations

import json
import os
from typing import Mapping

import numpy as np

from ..errors import CorruptHeader, TruncatedPayload, VersionMismatch
from .tensor import Tensor

FORMAT_VERSION = 1
_DTYPES = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


def save_checkpoint(path: str, tensors: Mapping[str, "Tensor | np.ndarray"], extra: dict | None = None) -> None:
    """Write ``tensors`` to directory ``path`` (created if needed)."""
    os.makedirs(path, exist_ok=True)
    entries = []
    offset = 0
    blobs = []
    for name, t in tensors.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        arr = np.ascontiguousarray(arr, dtype="<f8")
        blob = arr.tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": "<f8",
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    manifest = {"version": FORMAT_VERSION, "tensors": entries, "extra": extra or {}}
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    with open(os.path.join(path, "payload.bin"), "wb") as fh:
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read an archive back; returns (name -> array, extra metadata)."""
    try:
        with open(os.path.join(path, "manifest.json")) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise CorruptHeader(f"cannot read manifest: {e}") from None
    if not isinstance(manifest, dict) or "version" not in manifest:
        raise CorruptHeader("manifest missing version field")
    if manifest["version"] != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint version {manifest['version']} unsupported")
    try:
        entries = manifest["tensors"]
        payload = open(os.path.join(path, "payload.bin"), "rb").read()
    except (KeyError, OSError) as e:
        raise CorruptHeader(f"malformed archive: {e}") from None

    out = {}
    for ent in entries:
        try:
            name, shape = ent["name"], tuple(ent["shape"])
            dtype = _DTYPES[ent["dtype"]]
            off, nbytes = int(ent["offset"]), int(ent["nbytes"])
        except (KeyError, TypeError) as e:
            raise CorruptHeader(f"bad tensor entry: {e}") from None
        if off + nbytes > len(payload):
            raise TruncatedPayload(
                f"tensor {name!r} needs bytes [{off}, {off + nbytes}) "
                f"but payload has {len(payload)}"
            )
        arr = np.frombuffer(payload[off : off + nbytes], dtype=dtype)
        if arr.size != int(np.prod(shape)):
            raise CorruptHeader(f"tensor {name!r} shape {shape} != stored size {arr.size}")
        out[name] = arr.reshape(shape).astype(np.float64)
    return out, manifest.get("extra", {})
