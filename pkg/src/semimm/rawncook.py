"""Stage 2: classifier fusing raw features with frozen-encoder latents.

Both raw modality features and their "cooked" latents (from the frozen
Stage-1 encoders) are projected to proj_dim through Linear > ReLU >
Dropout blocks, concatenated in the fixed order
[proj(F_image), proj(F_text), proj(Z_image), proj(Z_text)] and classified
by one linear head. Only the projections and the head train; the encoders
are bitwise immutable for the whole run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import nn
from .data import FeatureRecord, SplitManifest, batches, stack_features
from .errors import DataError, NumericalError, SemimmError, ShapeError
from .ioutil import checksum64_hex
from .losses import DbFocalConfig, bce_with_logits, db_focal, sigmoid
from .metrics import auroc, weighted_f1
from .tensor import Rng

CONCAT_ORDER = ("raw_image", "raw_text", "cooked_image", "cooked_text")


class FrozenEncoder:
    """Linear + PReLU lifted from a Stage-1 checkpoint; never trained.

    Arrays are marked read-only so any accidental in-place update raises
    immediately; a content checksum guards against silent replacement.
    """

    def __init__(self, weight: np.ndarray, bias: np.ndarray, slope: np.ndarray):
        self.weight = weight.copy()
        self.bias = bias.copy()
        self.slope = slope.copy()
        for arr in (self.weight, self.bias, self.slope):
            arr.flags.writeable = False

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"frozen encoder expects (b, {self.in_dim}), got {x.shape}")
        pre = x @ self.weight + self.bias
        a = self.slope[0]
        return np.where(pre >= 0, pre, a * pre)

    def checksum(self) -> str:
        return checksum64_hex(self.weight.tobytes() + self.bias.tobytes()
                              + self.slope.tobytes())

    def tensors(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias,
                f"{prefix}.slope": self.slope}


class RawNCook:
    def __init__(self, feature_dim: int, num_classes: int,
                 frozen_image: FrozenEncoder, frozen_text: FrozenEncoder,
                 *, seed: int, proj_dim: int = 256, dropout_rate: float = 0.5,
                 dtype=np.float32):
        if frozen_image.in_dim != feature_dim or frozen_text.in_dim != feature_dim:
            raise ShapeError("frozen encoder width does not match the feature dim")
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.proj_dim = proj_dim
        self.dropout_rate = dropout_rate
        self.frozen_image = frozen_image
        self.frozen_text = frozen_text

        root = Rng(seed)
        self.blocks: dict[str, nn.Sequential] = {}
        for i, name in enumerate(("proj_f_image", "proj_f_text",
                                  "proj_z_image", "proj_z_text")):
            self.blocks[name] = nn.Sequential([
                nn.Linear(feature_dim, proj_dim, root.child(0, i), dtype,
                          name=f"{name}.linear"),
                nn.Relu(name=f"{name}.relu"),
                nn.Dropout(dropout_rate, root.child(2, i), name=f"{name}.dropout"),
            ], name=name)
        self.head = nn.Linear(4 * proj_dim, num_classes, root.child(0, 4), dtype,
                              name="head")

    def forward(self, f_image: np.ndarray, f_text: np.ndarray,
                mode: str = nn.EVAL, zero_cooked: bool = False) -> np.ndarray:
        """Logits (b, num_classes). `zero_cooked` is the Z-ablation used in tests."""
        z_image = self.frozen_image.forward(f_image)
        z_text = self.frozen_text.forward(f_text)
        if zero_cooked:
            z_image = np.zeros_like(z_image)
            z_text = np.zeros_like(z_text)
        parts = [
            self.blocks["proj_f_image"].forward(f_image, mode),
            self.blocks["proj_f_text"].forward(f_text, mode),
            self.blocks["proj_z_image"].forward(z_image, mode),
            self.blocks["proj_z_text"].forward(z_text, mode),
        ]
        return self.head.forward(np.concatenate(parts, axis=1), mode)

    def backward(self, grad_logits: np.ndarray) -> None:
        g = self.head.backward(grad_logits)
        for i, name in enumerate(("proj_f_image", "proj_f_text",
                                  "proj_z_image", "proj_z_text")):
            self.blocks[name].backward(g[:, i * self.proj_dim:(i + 1) * self.proj_dim])

    def parameters(self) -> list[nn.Parameter]:
        out: list[nn.Parameter] = []
        for block in self.blocks.values():
            out.extend(block.parameters())
        out.extend(self.head.parameters())
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def trainable_parameter_count(self) -> int:
        return nn.count_parameters(self.parameters())

    def frozen_checksum(self) -> str:
        return checksum64_hex((self.frozen_image.checksum()
                               + self.frozen_text.checksum()).encode())

    def all_tensors(self) -> dict[str, np.ndarray]:
        tensors = {**self.frozen_image.tensors("frozen_enc_image"),
                   **self.frozen_text.tensors("frozen_enc_text")}
        for block in self.blocks.values():
            linear = block.layers[0]
            tensors[linear.weight.name] = linear.weight.value
            tensors[linear.bias.name] = linear.bias.value
        tensors["head.weight"] = self.head.weight.value
        tensors["head.bias"] = self.head.bias.value
        return tensors

    @staticmethod
    def frozen_from_stage1(stage1_tensors: Mapping[str, np.ndarray], dtype=np.float32
                           ) -> tuple[FrozenEncoder, FrozenEncoder]:
        """Lift the encoder halves (encoder Linear + PReLU slope) from Stage 1."""
        def build(prefix: str) -> FrozenEncoder:
            try:
                return FrozenEncoder(
                    stage1_tensors[f"{prefix}.encoder.weight"].astype(dtype),
                    stage1_tensors[f"{prefix}.encoder.bias"].astype(dtype),
                    stage1_tensors[f"{prefix}.activation.slope"].astype(dtype))
            except KeyError as exc:
                raise DataError(f"stage-1 checkpoint missing tensor {exc}") from None
        return build("ae_image"), build("ae_text")

    @staticmethod
    def from_tensors(tensors: Mapping[str, np.ndarray], num_classes: int,
                     proj_dim: int, dropout_rate: float) -> "RawNCook":
        frozen_image = FrozenEncoder(tensors["frozen_enc_image.weight"],
                                     tensors["frozen_enc_image.bias"],
                                     tensors["frozen_enc_image.slope"])
        frozen_text = FrozenEncoder(tensors["frozen_enc_text.weight"],
                                    tensors["frozen_enc_text.bias"],
                                    tensors["frozen_enc_text.slope"])
        model = RawNCook(frozen_image.in_dim, num_classes, frozen_image, frozen_text,
                         seed=0, proj_dim=proj_dim, dropout_rate=dropout_rate,
                         dtype=tensors["head.weight"].dtype)
        for name, block in model.blocks.items():
            linear = block.layers[0]
            linear.weight.value = tensors[f"{name}.linear.weight"].copy()
            linear.bias.value = tensors[f"{name}.linear.bias"].copy()
        model.head.weight.value = tensors["head.weight"].copy()
        model.head.bias.value = tensors["head.bias"].copy()
        return model


def predict(model: RawNCook, f_image: np.ndarray, f_text: np.ndarray,
            threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode probabilities and >=threshold decisions."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    logits = model.forward(f_image, f_text, nn.EVAL)
    probs = sigmoid(logits)
    return probs, (probs >= threshold).astype(np.uint8)


@dataclass
class Stage2Result:
    model: RawNCook
    train_losses: list[float]
    lrs: list[float]
    val_history: list[dict]
    grad_activity: dict[str, bool]
    checkpoint_path: str | None = None
    priors: tuple[float, ...] = ()

    @property
    def final_val(self) -> dict:
        return self.val_history[-1] if self.val_history else {}


def class_priors_from_labels(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(positive counts, priors) per class over the labeled training matrix."""
    counts = labels.sum(axis=0).astype(np.int64)
    return counts, counts / labels.shape[0]


def train_stage2(records_by_id: Mapping[str, FeatureRecord], manifest: SplitManifest,
                 stage1_tensors: Mapping[str, np.ndarray], stage1_meta: Mapping,
                 *, num_classes: int, loss_kind: str, epochs: int, seed: int,
                 lr: float = 1e-4, batch_size: int = 40, gamma_scheduler: float = 1.0,
                 proj_dim: int = 256, dropout_rate: float = 0.5, threshold: float = 0.5,
                 db_settings: dict | None = None, dtype=np.float32,
                 adam_beta1: float = 0.9, adam_beta2: float = 0.999,
                 adam_eps: float = 1e-8, weight_decay: float = 0.0,
                 zero_cooked: bool = False, stage1_checksum: str = "",
                 checkpoint_path=None, config_hash: str = "",
                 best_checkpoint_path=None, class_names: Sequence[str] = (),
                 log: Callable[[int, float, dict], None] | None = None) -> Stage2Result:
    """Fine-tune the fusion classifier on the labeled partition.

    The Stage-1 checkpoint must have been trained against the same split
    (manifest hashes are compared); its encoders stay frozen, verified by
    checksum every epoch. Evaluation defaults to the last checkpoint;
    `best_checkpoint_path` additionally keeps the best-on-validation
    parameters (off by default).
    """
    if loss_kind not in ("db_focal", "bce"):
        raise DataError(f"unknown loss kind {loss_kind!r}")
    if stage1_meta.get("manifest_hash") != manifest.content_hash():
        raise DataError("stage-1 checkpoint was trained against a different split "
                        f"(manifest hash {stage1_meta.get('manifest_hash')} != "
                        f"{manifest.content_hash()})")

    labeled_ids = list(manifest.labeled_ids)
    if not labeled_ids:
        raise DataError("stage 2: labeled partition is empty")
    _, _, labeled_y = stack_features(records_by_id, labeled_ids, dtype=np.float64,
                                     require_labels=True)
    if labeled_y.shape[1] != num_classes:
        raise DataError(f"labels have {labeled_y.shape[1]} classes, "
                        f"config says {num_classes}")

    db_cfg = None
    if loss_kind == "db_focal":
        settings = dict(db_settings or {})
        counts, priors = class_priors_from_labels(labeled_y)
        from .losses import RebalanceConfig
        rebalance = RebalanceConfig(
            mode=settings.get("rebalance_mode", "disabled"),
            alpha=settings.get("rebalance_alpha", 0.1),
            beta=settings.get("rebalance_beta", 10.0),
            mu=settings.get("rebalance_mu", 0.2),
            pos_counts=tuple(int(c) for c in counts))
        db_cfg = DbFocalConfig(gamma=settings.get("gamma", 2.0),
                               lam=settings.get("lambda", 5.0),
                               kappa=settings.get("kappa", 0.1),
                               class_priors=tuple(float(p) for p in priors),
                               rebalance=rebalance)

    frozen_image, frozen_text = RawNCook.frozen_from_stage1(stage1_tensors, dtype)
    feature_dim = frozen_image.in_dim
    model = RawNCook(feature_dim, num_classes, frozen_image, frozen_text,
                     seed=seed, proj_dim=proj_dim, dropout_rate=dropout_rate,
                     dtype=dtype)
    frozen_ref = model.frozen_checksum()
    opt = nn.Adam(model.parameters(), lr, adam_beta1, adam_beta2, adam_eps,
                  weight_decay)
    schedule = nn.StepLrSchedule(lr, gamma_scheduler)

    val_ids = list(manifest.val_ids)
    val_x_img = val_x_txt = val_y = None
    if val_ids:
        val_x_img, val_x_txt, val_y = stack_features(
            records_by_id, val_ids, dtype=dtype, require_labels=True)

    train_losses: list[float] = []
    lrs: list[float] = []
    val_history: list[dict] = []
    grad_activity: dict[str, bool] = {p.name: False for p in model.parameters()}
    val_metric = "auroc" if num_classes == 1 else "weighted_f1"
    best_metric = -np.inf
    best_snapshot: tuple[int, dict] | None = None

    for epoch in range(epochs):
        opt.lr = schedule.lr_at(epoch)
        lrs.append(opt.lr)
        loss_sum = 0.0
        count = 0
        for b_idx, batch in enumerate(batches(records_by_id, labeled_ids, batch_size,
                                              shuffle_seed=seed, epoch=epoch,
                                              dtype=dtype, require_labels=True)):
            opt.zero_grad()
            logits = model.forward(batch.f_image, batch.f_text, nn.TRAIN,
                                   zero_cooked=zero_cooked)
            y = batch.labels.astype(np.float64)
            try:
                if loss_kind == "db_focal":
                    loss, grad = db_focal(logits, y, db_cfg)
                else:
                    loss, grad = bce_with_logits(logits, y)
            except NumericalError as exc:
                raise NumericalError(
                    f"stage 2 epoch {epoch} batch {b_idx}: {exc}") from exc
            model.backward(grad.astype(dtype, copy=False))
            for p in model.parameters():
                if not grad_activity[p.name] and np.any(p.grad):
                    grad_activity[p.name] = True
            opt.step()
            loss_sum += loss * len(batch)
            count += len(batch)
        train_losses.append(loss_sum / count)

        if model.frozen_checksum() != frozen_ref:
            raise SemimmError(f"frozen encoder drift detected at epoch {epoch}")

        if val_ids:
            entry = {"epoch": epoch}
            logits = model.forward(val_x_img, val_x_txt, nn.EVAL,
                                   zero_cooked=zero_cooked)
            probs = sigmoid(logits)
            decisions = (probs >= threshold).astype(np.uint8)
            report = weighted_f1(decisions, val_y.astype(np.int64),
                                 threshold=threshold, partition="val",
                                 class_names=tuple(class_names))
            entry["weighted_f1"] = report.weighted_f1
            if num_classes == 1:
                entry["auroc"] = auroc(probs[:, 0], val_y[:, 0].astype(np.int64))
            val_history.append(entry)
            if best_checkpoint_path is not None and entry[val_metric] > best_metric:
                best_metric = entry[val_metric]
                best_snapshot = (epoch, {k: v.copy() for k, v in
                                         model.all_tensors().items()})
        if log is not None:
            log(epoch, train_losses[-1], val_history[-1] if val_ids else {})

    result = Stage2Result(model, train_losses, lrs, val_history, grad_activity,
                          priors=tuple(db_cfg.class_priors) if db_cfg else ())
    if checkpoint_path is not None:
        save_stage2_checkpoint(result, checkpoint_path, manifest, seed=seed,
                               epochs=epochs, schedule=schedule,
                               loss_kind=loss_kind, threshold=threshold,
                               stage1_checksum=stage1_checksum,
                               config_hash=config_hash, class_names=class_names,
                               zero_cooked=zero_cooked)
    if best_checkpoint_path is not None and best_snapshot is not None:
        from .checkpoint import save_checkpoint

        best_epoch, best_tensors = best_snapshot
        meta = _stage2_meta(result, manifest, seed=seed, epoch=best_epoch + 1,
                            schedule=schedule, loss_kind=loss_kind,
                            threshold=threshold, stage1_checksum=stage1_checksum,
                            config_hash=config_hash, class_names=class_names,
                            zero_cooked=zero_cooked)
        meta["selection"] = "best_on_validation"
        meta[f"best_val_{val_metric}"] = best_metric
        save_checkpoint(best_checkpoint_path, best_tensors, meta)
    return result


def _stage2_meta(result: Stage2Result, manifest: SplitManifest, *, seed: int,
                 epoch: int, schedule: nn.StepLrSchedule, loss_kind: str,
                 threshold: float, stage1_checksum: str, config_hash: str,
                 class_names: Sequence[str], zero_cooked: bool) -> dict:
    model = result.model
    return {
        "stage": "stage2",
        "config_hash": config_hash,
        "seed": seed,
        "epoch": epoch,
        "schedule": {"initial_lr": schedule.initial_lr, "gamma": schedule.gamma,
                     "step_size": schedule.step_size},
        "manifest_hash": manifest.content_hash(),
        "stage1_checksum": stage1_checksum,
        "feature_dim": model.feature_dim,
        "num_classes": model.num_classes,
        "proj_dim": model.proj_dim,
        "dropout_rate": model.dropout_rate,
        "loss_kind": loss_kind,
        "threshold": threshold,
        "class_names": list(class_names),
        "class_priors": list(result.priors),
        "trainable_parameters": model.trainable_parameter_count(),
        "concat_order": list(CONCAT_ORDER),
        "zero_cooked": zero_cooked,
        "selection": "last",
    }


def save_stage2_checkpoint(result: Stage2Result, path, manifest: SplitManifest, *,
                           seed: int, epochs: int, schedule: nn.StepLrSchedule,
                           loss_kind: str, threshold: float, stage1_checksum: str,
                           config_hash: str, class_names: Sequence[str],
                           zero_cooked: bool) -> None:
    from .checkpoint import save_checkpoint

    meta = _stage2_meta(result, manifest, seed=seed, epoch=epochs,
                        schedule=schedule, loss_kind=loss_kind,
                        threshold=threshold, stage1_checksum=stage1_checksum,
                        config_hash=config_hash, class_names=class_names,
                        zero_cooked=zero_cooked)
    save_checkpoint(path, result.model.all_tensors(), meta)
    result.checkpoint_path = str(path)
