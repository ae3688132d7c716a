"""Synthetic datasets with documented cross-modal structure.

`cross_predictable` is the reference fixture for pipeline-level tests:
both modalities are noisy linear views of one shared latent vector, and
the labels are thresholded linear functionals of that latent. The
modalities therefore predict each other exactly up to the injected noise,
and the labels are recoverable from either view's shared structure. The
generator is fully deterministic in its seed.
"""

from __future__ import annotations

import numpy as np

from .data import FeatureRecord
from .tensor import Rng

DEFAULT_PRIORS = (0.35, 0.20, 0.12, 0.08)


def cross_predictable(n: int, *, dim: int = 64, latent_dim: int = 6,
                      num_classes: int = 4, image_noise: float = 0.5,
                      text_noise: float = 2.5,
                      priors: tuple[float, ...] = DEFAULT_PRIORS,
                      seed: int = 0, id_prefix: str = "syn",
                      ) -> tuple[list[FeatureRecord], list[str]]:
    """Asymmetric paired views of one shared latent vector s:

        f_image = s @ A        + image_noise * eps   (linear view, clean)
        f_text  = |s| @ B      + text_noise  * eps   (magnitude view, noisy)

    and class c is positive when |s| projects above the (1 - priors[c])
    quantile of its scoring direction. The magnitude |s| is uncorrelated
    with s, so no linear readout of the image view reaches the labels;
    predicting the text view from the image view requires rectifying the
    latent, which a PReLU pair expresses exactly. Cross-modality
    pretraining therefore bakes the label-relevant magnitude features into
    the image encoder using unlabeled data alone, while a model on raw
    features has to discover the rectification from labeled samples.
    """
    if len(priors) != num_classes:
        raise ValueError(f"need {num_classes} priors, got {len(priors)}")
    rng = Rng(seed)
    latent = rng.normal((n, latent_dim))
    magnitude = np.abs(latent)
    map_image = rng.normal((latent_dim, dim)) / np.sqrt(latent_dim)
    map_text = rng.normal((latent_dim, dim)) / np.sqrt(latent_dim)
    f_image = latent @ map_image + image_noise * rng.normal((n, dim))
    f_text = magnitude @ map_text + text_noise * rng.normal((n, dim))

    scoring = rng.normal((latent_dim, num_classes))
    margins = magnitude @ scoring
    thresholds = np.array([np.quantile(margins[:, c], 1.0 - priors[c])
                           for c in range(num_classes)])
    labels = (margins > thresholds).astype(np.uint8)

    records = [FeatureRecord(f"{id_prefix}-{i:06d}",
                             f_image[i].astype(np.float32),
                             f_text[i].astype(np.float32),
                             labels[i])
               for i in range(n)]
    return records, [f"c{c}" for c in range(num_classes)]


def linear_pair(n: int, *, dim: int = 16, seed: int = 0, scale: float = 0.5,
                id_prefix: str = "lin") -> tuple[list[FeatureRecord], np.ndarray]:
    """Noiseless pair: f_text = f_image @ mix, exactly representable by the
    autoencoder architecture. Returns (records, mix) so tests can compute
    the least-squares residual oracle."""
    rng = Rng(seed)
    f_image = rng.uniform(-1.0, 1.0, (n, dim))
    mix = scale * rng.normal((dim, dim)) / np.sqrt(dim)
    f_text = f_image @ mix
    records = [FeatureRecord(f"{id_prefix}-{i:06d}",
                             f_image[i].astype(np.float32),
                             f_text[i].astype(np.float32), None)
               for i in range(n)]
    return records, mix


def separable(n: int, *, dim: int = 32, num_classes: int = 4, seed: int = 0,
              margin: float = 0.6, id_prefix: str = "sep",
              ) -> tuple[list[FeatureRecord], list[str]]:
    """Labels are a linear function of f_image; f_text is uninformative noise.

    Class c is the sign of coordinate c, and those coordinates are pushed
    `margin` away from zero, so the classes are separable with a hard margin.
    """
    if num_classes > dim:
        raise ValueError("need dim >= num_classes")
    rng = Rng(seed)
    f_image = rng.normal((n, dim))
    deciding = f_image[:, :num_classes]
    f_image[:, :num_classes] = np.sign(deciding) * (margin + np.abs(deciding))
    f_text = rng.normal((n, dim))
    labels = (f_image[:, :num_classes] > 0).astype(np.uint8)
    records = [FeatureRecord(f"{id_prefix}-{i:06d}",
                             f_image[i].astype(np.float32),
                             f_text[i].astype(np.float32), labels[i])
               for i in range(n)]
    return records, [f"c{c}" for c in range(num_classes)]
