"""Flat binary container: JSON metadata header + named fp64 arrays.

Layout: 8-byte magic, u64-LE header length, UTF-8 JSON header, then raw
little-endian float64 array data in header order. Round-trips byte-exactly,
which checkpoint and resume tests rely on.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"DESKRL01"

__all__ = ["write_container", "read_container"]


def write_container(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    header = {
        "meta": meta,
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
    }
    # Canonical JSON so identical state always produces identical bytes.
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for v in arrays.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a deskrl container (bad magic {magic!r})")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        arrays: dict[str, np.ndarray] = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
    return header["meta"], arrays
