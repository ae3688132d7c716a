"""Shared file-IO helpers: 64-bit checksums and atomic writes."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import xxhash


def checksum64(data: bytes) -> int:
    """XXH64 (seed 0) of `data`; the integrity checksum used by all binary formats."""
    return xxhash.xxh64(data).intdigest()


def checksum64_hex(data: bytes) -> str:
    return f"{checksum64(data):016x}"


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via temp file + rename so readers never observe a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def canonical_json(obj) -> str:
    """Stable JSON encoding (sorted keys, no whitespace drift) for hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def file_checksum_hex(path: str | Path) -> str:
    return checksum64_hex(Path(path).read_bytes())
