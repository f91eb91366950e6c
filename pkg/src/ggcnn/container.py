"""Flat binary container for float64 arrays.

Layout::

    b"GGCNNBIN"                 8-byte magic
    uint64 (little endian)      length of the JSON header in bytes
    JSON header (utf-8)         sorted keys; always carries "shape"
    payload                     little-endian float64, C order

Several arrays can share one file; the header then lists them under
``"arrays"`` as ``{"name", "shape", "offset"}`` records (offset counted in
elements from the start of the payload).
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import InputError

MAGIC = b"GGCNNBIN"


class ContainerError(InputError):
    pass


def _encode_header(header: Mapping[str, Any]) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def dumps(array: np.ndarray, header: Mapping[str, Any] | None = None) -> bytes:
    arr = np.asarray(array, dtype="<f8")
    meta = dict(header or {})
    meta["shape"] = list(arr.shape)
    head = _encode_header(meta)
    return MAGIC + struct.pack("<Q", len(head)) + head + arr.tobytes(order="C")


def loads(blob: bytes) -> tuple[np.ndarray, dict]:
    if blob[:8] != MAGIC:
        raise ContainerError("not a GGCNNBIN container (bad magic)")
    if len(blob) < 16:
        raise ContainerError("truncated container header")
    (n,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16 : 16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"corrupt container header: {exc}") from exc
    shape = tuple(header["shape"])
    payload = blob[16 + n :]
    expected = int(np.prod(shape, dtype=np.int64)) * 8
    if len(payload) != expected:
        raise ContainerError(f"payload holds {len(payload)} bytes, header implies {expected}")
    arr = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    return arr, header


def write(path: str | Path, array: np.ndarray, header: Mapping[str, Any] | None = None) -> None:
    Path(path).write_bytes(dumps(array, header))


def read(path: str | Path) -> tuple[np.ndarray, dict]:
    return loads(Path(path).read_bytes())


def pack_arrays(arrays: Mapping[str, np.ndarray], header: Mapping[str, Any] | None = None) -> bytes:
    """Concatenate named arrays into one flat container, preserving order."""
    records = []
    flat = []
    offset = 0
    for name, value in arrays.items():
        value = np.asarray(value, dtype=np.float64)
        records.append({"name": name, "shape": list(value.shape), "offset": offset})
        flat.append(value.ravel())
        offset += value.size
    meta = dict(header or {})
    meta["arrays"] = records
    payload = np.concatenate(flat) if flat else np.zeros(0)
    return dumps(payload, meta)


def unpack_arrays(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    flat, header = loads(blob)
    out = {}
    for rec in header.get("arrays", []):
        size = int(np.prod(rec["shape"], dtype=np.int64))
        out[rec["name"]] = flat[rec["offset"] : rec["offset"] + size].reshape(rec["shape"]).copy()
    return out, header


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
