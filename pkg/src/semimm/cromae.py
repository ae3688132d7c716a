"""Stage 1: two cross-modality autoencoders trained with MSE on unlabeled
data only.

Each autoencoder is Linear > PReLU > Linear with every linear layer square
at the feature dimension; one maps image features to text features, the
other the reverse. The two models share no parameters and are optimized
separately.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import nn
from .data import Batch, FeatureRecord, SplitManifest, batches
from .errors import DataError, NumericalError, ShapeError
from .losses import mse
from .tensor import Rng

IMAGE_TO_TEXT = "image_to_text"
TEXT_TO_IMAGE = "text_to_image"


class CromAe:
    """decoder(PReLU(encoder(x))) with a learnable PReLU slope."""

    def __init__(self, feature_dim: int, direction: str, rng: Rng | None = None,
                 dtype=np.float32, prelu_init: float = 0.25):
        if direction not in (IMAGE_TO_TEXT, TEXT_TO_IMAGE):
            raise ValueError(f"unknown direction {direction!r}")
        self.feature_dim = feature_dim
        self.direction = direction
        self.encoder = nn.Linear(feature_dim, feature_dim, rng, dtype, name="encoder")
        self.activation = nn.PRelu(prelu_init, dtype, name="activation")
        self.decoder = nn.Linear(feature_dim, feature_dim, rng, dtype, name="decoder")

    def forward(self, source: np.ndarray, mode: str = nn.TRAIN
                ) -> tuple[np.ndarray, np.ndarray]:
        """Returns (reconstruction, post-PReLU latent), both (b, feature_dim)."""
        if source.ndim != 2 or source.shape[1] != self.feature_dim:
            raise ShapeError(f"autoencoder expects (b, {self.feature_dim}), "
                             f"got {source.shape}")
        latent = self.activation.forward(self.encoder.forward(source, mode), mode)
        return self.decoder.forward(latent, mode), latent

    def backward(self, grad_recon: np.ndarray) -> np.ndarray:
        g = self.decoder.backward(grad_recon)
        g = self.activation.backward(g)
        return self.encoder.backward(g)

    def parameters(self) -> list[nn.Parameter]:
        return self.encoder.parameters() + self.activation.parameters() \
            + self.decoder.parameters()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def tensors(self, prefix: str) -> dict[str, np.ndarray]:
        return {
            f"{prefix}.encoder.weight": self.encoder.weight.value,
            f"{prefix}.encoder.bias": self.encoder.bias.value,
            f"{prefix}.activation.slope": self.activation.slope.value,
            f"{prefix}.decoder.weight": self.decoder.weight.value,
            f"{prefix}.decoder.bias": self.decoder.bias.value,
        }

    @staticmethod
    def from_tensors(tensors: Mapping[str, np.ndarray], prefix: str,
                     direction: str) -> "CromAe":
        try:
            weight = tensors[f"{prefix}.encoder.weight"]
        except KeyError:
            raise DataError(f"checkpoint missing {prefix}.encoder.weight") from None
        ae = CromAe(weight.shape[0], direction, rng=None, dtype=weight.dtype)
        ae.encoder.weight.value = tensors[f"{prefix}.encoder.weight"].copy()
        ae.encoder.bias.value = tensors[f"{prefix}.encoder.bias"].copy()
        ae.activation.slope.value = tensors[f"{prefix}.activation.slope"].copy()
        ae.decoder.weight.value = tensors[f"{prefix}.decoder.weight"].copy()
        ae.decoder.bias.value = tensors[f"{prefix}.decoder.bias"].copy()
        return ae


@dataclass
class Stage1Result:
    ae_image: CromAe
    ae_text: CromAe
    image_losses: list[float]
    text_losses: list[float]
    checkpoint_path: str | None


def ensure_stage1_isolation(batch_ids: Sequence[str], manifest: SplitManifest) -> None:
    """Abort if any id outside the unlabeled partition reaches Stage-1 training."""
    allowed = set(manifest.unlabeled_ids)
    bad = [i for i in batch_ids if i not in allowed]
    if bad:
        raise DataError(f"stage-1 isolation violated: non-unlabeled ids in "
                        f"training stream: {bad[:5]}")


def train_stage1(records_by_id: Mapping[str, FeatureRecord], manifest: SplitManifest,
                 *, epochs: int, seed: int, lr: float = 1e-4, batch_size: int = 40,
                 weight_decay: float = 0.0, dtype=np.float32, prelu_init: float = 0.25,
                 adam_beta1: float = 0.9, adam_beta2: float = 0.999,
                 adam_eps: float = 1e-8, ids: Sequence[str] | None = None,
                 checkpoint_path=None, config_hash: str = "",
                 epoch_checkpoint_every: int = 0,
                 log: Callable[[int, float, float], None] | None = None) -> Stage1Result:
    """Train both autoencoders on the manifest's unlabeled partition.

    `ids` defaults to manifest.unlabeled_ids; any explicit stream is still
    validated against the manifest so labeled/val/test samples can never
    leak into pretraining. `epoch_checkpoint_every` > 0 additionally writes
    <checkpoint_path>.epochN snapshots (off by default); the final
    checkpoint is always written when a path is given.
    """
    train_ids = list(manifest.unlabeled_ids if ids is None else ids)
    if not train_ids:
        raise DataError("stage 1: unlabeled partition is empty")
    ensure_stage1_isolation(train_ids, manifest)
    feature_dim = records_by_id[train_ids[0]].f_image.shape[0]

    root = Rng(seed)
    ae_image = CromAe(feature_dim, IMAGE_TO_TEXT, root.child(0, 1), dtype, prelu_init)
    ae_text = CromAe(feature_dim, TEXT_TO_IMAGE, root.child(0, 2), dtype, prelu_init)
    opt_image = nn.Adam(ae_image.parameters(), lr, adam_beta1, adam_beta2,
                        adam_eps, weight_decay)
    opt_text = nn.Adam(ae_text.parameters(), lr, adam_beta1, adam_beta2,
                       adam_eps, weight_decay)

    image_losses: list[float] = []
    text_losses: list[float] = []
    for epoch in range(epochs):
        sum_img = sum_txt = 0.0
        count = 0
        for b_idx, batch in enumerate(batches(records_by_id, train_ids, batch_size,
                                              shuffle_seed=seed, epoch=epoch)):
            ensure_stage1_isolation(batch.ids, manifest)
            x_img = batch.f_image.astype(dtype, copy=False)
            x_txt = batch.f_text.astype(dtype, copy=False)
            try:
                loss_img = _train_step(ae_image, opt_image, x_img, x_txt)
                loss_txt = _train_step(ae_text, opt_text, x_txt, x_img)
            except NumericalError as exc:
                raise NumericalError(
                    f"stage 1 epoch {epoch} batch {b_idx}: {exc}") from exc
            sum_img += loss_img * len(batch)
            sum_txt += loss_txt * len(batch)
            count += len(batch)
        image_losses.append(sum_img / count)
        text_losses.append(sum_txt / count)
        if (epoch_checkpoint_every > 0 and checkpoint_path is not None
                and (epoch + 1) % epoch_checkpoint_every == 0):
            snapshot = Stage1Result(ae_image, ae_text, image_losses,
                                    text_losses, None)
            save_stage1_checkpoint(snapshot, f"{checkpoint_path}.epoch{epoch}",
                                   manifest, seed=seed, lr=lr,
                                   config_hash=config_hash, epochs=epoch + 1)
        if log is not None:
            log(epoch, image_losses[-1], text_losses[-1])

    result = Stage1Result(ae_image, ae_text, image_losses, text_losses, None)
    if checkpoint_path is not None:
        save_stage1_checkpoint(result, checkpoint_path, manifest, seed=seed,
                               lr=lr, config_hash=config_hash, epochs=epochs)
    return result


def _train_step(ae: CromAe, opt: nn.Adam, source: np.ndarray,
                target: np.ndarray) -> float:
    opt.zero_grad()
    recon, _ = ae.forward(source, nn.TRAIN)
    loss, grad = mse(recon, target)
    ae.backward(grad.astype(recon.dtype, copy=False))
    opt.step()
    return loss


def save_stage1_checkpoint(result: Stage1Result, path, manifest: SplitManifest,
                           *, seed: int, lr: float, config_hash: str,
                           epochs: int) -> None:
    from .checkpoint import save_checkpoint

    tensors = {**result.ae_image.tensors("ae_image"),
               **result.ae_text.tensors("ae_text")}
    meta = {
        "stage": "stage1",
        "config_hash": config_hash,
        "seed": seed,
        "epoch": epochs,
        "schedule": {"initial_lr": lr, "gamma": 1.0, "step_size": 1},
        "manifest_hash": manifest.content_hash(),
        "feature_dim": result.ae_image.feature_dim,
        "final_mse": {"ae_image": result.image_losses[-1],
                      "ae_text": result.text_losses[-1]},
    }
    save_checkpoint(path, tensors, meta)
    result.checkpoint_path = str(path)
