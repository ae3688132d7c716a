"""MMF1 feature-file writer, bit-compatible with the trainer's format.

Layout (little-endian): magic "MMF1", u16 version=1, u16 flags (bit 0:
labels present), u32 record count, u32 feature dim, u32 label dim (0 when
absent); per record: u16 id length, UTF-8 id bytes, dim float32 image
features, dim float32 text features, label-dim bytes of 0/1 labels;
trailing u64 XXH64 checksum of all preceding bytes.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import xxhash

MAGIC = b"MMF1"
VERSION = 1
FLAG_LABELS = 0x0001


def write_mmf1(path: str | Path, ids: list[str], f_image: np.ndarray,
               f_text: np.ndarray, labels: np.ndarray | None = None) -> None:
    count, dim = f_image.shape
    if f_text.shape != (count, dim) or len(ids) != count:
        raise ValueError("ids, image and text features must align")
    if len(set(ids)) != count:
        raise ValueError("duplicate sample ids")
    if any(not i for i in ids):
        raise ValueError("empty sample id")
    if not (np.isfinite(f_image).all() and np.isfinite(f_text).all()):
        raise ValueError("non-finite feature values")
    label_dim = 0 if labels is None else labels.shape[1]
    flags = FLAG_LABELS if label_dim else 0
    parts = [MAGIC, struct.pack("<HHIII", VERSION, flags, count, dim, label_dim)]
    img32 = np.ascontiguousarray(f_image, dtype="<f4")
    txt32 = np.ascontiguousarray(f_text, dtype="<f4")
    for k, rec_id in enumerate(ids):
        id_bytes = rec_id.encode("utf-8")
        parts.append(struct.pack("<H", len(id_bytes)))
        parts.append(id_bytes)
        parts.append(img32[k].tobytes())
        parts.append(txt32[k].tobytes())
        if label_dim:
            parts.append(labels[k].astype(np.uint8).tobytes())
    body = b"".join(parts)
    payload = body + struct.pack("<Q", xxhash.xxh64(body).intdigest())

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
