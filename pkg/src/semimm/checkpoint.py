"""Self-describing binary checkpoint container.

Layout (all integers little-endian):

    magic   b"MMCK"
    u16     version (1)
    u32     header length in bytes
    bytes   header: UTF-8 JSON {"meta": {...}, "tensors": [{name, shape, dtype}, ...]}
    bytes   raw tensor data, little-endian, C-order, in header order
    u64     XXH64 checksum of all preceding bytes

`meta` always carries config_hash, seed, epoch and schedule state; stages
add their own chain fields (e.g. manifest_hash, stage1_checksum).
Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .ioutil import atomic_write_bytes, checksum64

MAGIC = b"MMCK"
VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    blobs = []
    for name, arr in tensors.items():
        dtype_name = str(arr.dtype)
        if dtype_name not in _DTYPES:
            raise DataError(f"unsupported checkpoint dtype {dtype_name!r} for {name!r}")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype_name})
        blobs.append(np.ascontiguousarray(arr).astype(_DTYPES[dtype_name], copy=False).tobytes())
    header = json.dumps({"meta": meta, "tensors": entries}).encode("utf-8")
    body = MAGIC + struct.pack("<HI", VERSION, len(header)) + header + b"".join(blobs)
    atomic_write_bytes(path, body + struct.pack("<Q", checksum64(body)))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    if len(raw) < 18 or raw[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    body, (stored,) = raw[:-8], struct.unpack("<Q", raw[-8:])
    if checksum64(body) != stored:
        raise DataError(f"{path}: checkpoint checksum mismatch")
    version, header_len = struct.unpack("<HI", raw[4:10])
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[10:10 + header_len].decode("utf-8"))
    offset = 10 + header_len
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        dt = np.dtype(_DTYPES[entry["dtype"]])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize if shape else dt.itemsize
        chunk = raw[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise DataError(f"{path}: truncated tensor data for {entry['name']!r}")
        tensors[entry["name"]] = np.frombuffer(chunk, dtype=dt).reshape(shape).astype(
            entry["dtype"])  # copy: loaded tensors must be writable
        offset += nbytes
    return tensors, header["meta"]
