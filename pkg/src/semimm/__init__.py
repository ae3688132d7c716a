"""Two-stage semi-supervised multimodal training on precomputed
image/text embedding pairs: cross-modality autoencoder pretraining on
unlabeled data, then a fusion classifier over frozen latents plus raw
features."""

__version__ = "0.1.0"
