"""Encoder backends.

ClipEncoder wraps the pretrained CLIP image/text towers (ViT-L/14 emits
768-d vectors) in deterministic inference mode. StubEncoder produces
deterministic pseudo-features derived from the input bytes; it exists for
pipeline dry-runs and tests on machines without the model weights.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image

DEFAULT_MODEL_ID = "openai/clip-vit-large-patch14"
IMAGE_SIZE = 224


def prepare_image(image: Image.Image) -> Image.Image:
    """Square resize to the encoder input size (aspect ratio not preserved)."""
    return image.convert("RGB").resize((IMAGE_SIZE, IMAGE_SIZE),
                                       Image.Resampling.BICUBIC)


class StubEncoder:
    """Deterministic stand-in: features are seeded by a content digest, so
    equal inputs give bit-equal vectors and the two modalities stay
    independent."""

    def __init__(self, dim: int = 768):
        self.dim = dim

    @staticmethod
    def _vector(seed_bytes: bytes, dim: int) -> np.ndarray:
        seed = int.from_bytes(hashlib.blake2b(seed_bytes, digest_size=8).digest(),
                              "little")
        gen = np.random.Generator(np.random.PCG64(seed))
        return gen.uniform(-1.0, 1.0, dim).astype(np.float32)

    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        return np.stack([self._vector(b"image:" + img.tobytes(), self.dim)
                         for img in images])

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        return np.stack([self._vector(b"text:" + t.encode("utf-8"), self.dim)
                         for t in texts])


class ClipEncoder:
    """Frozen CLIP towers via transformers; weights load lazily on first use."""

    def __init__(self, model_id: str = DEFAULT_MODEL_ID, device: str = "cpu",
                 batch_size: int = 16):
        self.model_id = model_id
        self.device = device
        self.batch_size = batch_size
        self._model = None
        self._processor = None

    def _ensure_loaded(self):
        if self._model is None:
            import torch
            from transformers import CLIPModel, CLIPProcessor

            torch.manual_seed(0)
            self._model = CLIPModel.from_pretrained(self.model_id)
            self._model.eval().to(self.device)
            self._processor = CLIPProcessor.from_pretrained(self.model_id)
        return self._model, self._processor

    @property
    def dim(self) -> int:
        model, _ = self._ensure_loaded()
        return int(model.config.projection_dim)

    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        import torch

        model, processor = self._ensure_loaded()
        chunks = []
        with torch.no_grad():
            for start in range(0, len(images), self.batch_size):
                batch = processor(images=images[start:start + self.batch_size],
                                  return_tensors="pt").to(self.device)
                chunks.append(model.get_image_features(**batch).cpu().numpy())
        return np.concatenate(chunks).astype(np.float32)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        import torch

        model, processor = self._ensure_loaded()
        chunks = []
        with torch.no_grad():
            for start in range(0, len(texts), self.batch_size):
                # truncation handles captions beyond the context limit
                batch = processor(text=texts[start:start + self.batch_size],
                                  return_tensors="pt", padding=True,
                                  truncation=True).to(self.device)
                chunks.append(model.get_text_features(**batch).cpu().numpy())
        return np.concatenate(chunks).astype(np.float32)


def make_encoder(backend: str, model_id: str, device: str, batch_size: int,
                 dim: int):
    if backend == "clip":
        return ClipEncoder(model_id, device, batch_size)
    if backend == "stub":
        return StubEncoder(dim)
    raise ValueError(f"unknown backend {backend!r}")
