"""Portable parameter container.

Layout: an 8-byte little-endian length, a UTF-8 JSON header, then the raw
tensor data as little-endian float64. The header lists every entry's name,
shape, and byte offset into the data section, plus a free-form ``meta``
dict (model kind, vocabulary, normalization state, ...).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_LEN_FMT = "<Q"


def save_tensors(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {"meta": meta or {}, "entries": entries}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack(_LEN_FMT, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    (header_len,) = struct.unpack_from(_LEN_FMT, raw, 0)
    header_start = struct.calcsize(_LEN_FMT)
    header = json.loads(raw[header_start:header_start + header_len].decode("utf-8"))
    data_start = header_start + header_len
    arrays = {}
    for entry in header["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(
            raw, dtype="<f8", count=count, offset=data_start + entry["offset"]
        ).reshape(shape)
        arrays[entry["name"]] = arr.astype(np.float64)
    return arrays, header.get("meta", {})
