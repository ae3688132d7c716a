"""Extraction pipeline: load + resize images, clean captions, encode both
modalities, and write one MMF1 record per readable sample in input order."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .encoders import prepare_image
from .manifest import RawSample
from .mmf1 import write_mmf1
from .textclean import clean_text

log = logging.getLogger("mmextract")


@dataclass
class ExtractStats:
    written: int
    skipped_ids: list[str]


def extract(samples: list[RawSample], encoder, out_path: str | Path,
            ) -> ExtractStats:
    """Unreadable images are skipped and logged by id; labels are written
    only when every surviving sample carries them."""
    kept: list[RawSample] = []
    images: list[Image.Image] = []
    skipped: list[str] = []
    for sample in samples:
        try:
            with Image.open(sample.image_path) as img:
                images.append(prepare_image(img))
        except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
            log.warning("skipping %s: unreadable image (%s)", sample.id, exc)
            skipped.append(sample.id)
            continue
        kept.append(sample)
    if not kept:
        raise RuntimeError("no readable samples; nothing to extract")

    texts = [clean_text(s.text) for s in kept]
    f_image = encoder.encode_images(images)
    f_text = encoder.encode_texts(texts)

    labels = None
    if all(s.labels is not None for s in kept):
        widths = {len(s.labels) for s in kept}
        if len(widths) != 1:
            raise ValueError(f"inconsistent label widths: {sorted(widths)}")
        labels = np.array([s.labels for s in kept], dtype=np.uint8)
    elif any(s.labels is not None for s in kept):
        raise ValueError("either every sample or no sample may carry labels")

    write_mmf1(out_path, [s.id for s in kept], f_image, f_text, labels)
    log.info("wrote %d records to %s (%d skipped)", len(kept), out_path,
             len(skipped))
    return ExtractStats(written=len(kept), skipped_ids=skipped)
