"""Operator interface: split, pretrain, finetune, evaluate, predict, run-all.

Every command loads one JSON config (flags override file values), writes a
fully resolved snapshot next to the checkpoints, and exits 0 on success,
2 on config errors, 3 on data errors, 4 on numerical aborts.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import nn
from .checkpoint import load_checkpoint
from .config import ExperimentConfig, config_hash, parse_override_value, reference_note
from .cromae import train_stage1
from .data import (SplitManifest, apply_labels, index_records, make_split,
                   read_features, read_label_manifest)
from .errors import ConfigError, DataError, NumericalError, SemimmError
from .ioutil import atomic_write_text, file_checksum_hex
from .losses import sigmoid
from .data import stack_features
from .metrics import auroc, format_report_table, weighted_f1
from .rawncook import RawNCook, train_stage2

DTYPES = {"float32": np.float32, "float64": np.float64}


class Dataset:
    """Features + labels + class names, loaded once per command."""

    def __init__(self, cfg: ExperimentConfig):
        self.records = read_features(cfg.features)
        self.class_names: list[str] | None = None
        if cfg.labels:
            names, labels_by_id = read_label_manifest(cfg.labels)
            self.records = apply_labels(self.records, labels_by_id)
            self.class_names = names
        self.by_id = index_records(self.records)
        labeled_dims = {r.labels.shape[0] for r in self.records if r.labels is not None}
        if len(labeled_dims) > 1:
            raise DataError(f"inconsistent label dims across records: {labeled_dims}")
        self.num_classes = labeled_dims.pop() if labeled_dims else 0
        if self.class_names is None and self.num_classes:
            self.class_names = [f"class_{i}" for i in range(self.num_classes)]

    def require_ids(self, ids, what: str) -> None:
        missing = [i for i in ids if i not in self.by_id]
        if missing:
            raise DataError(f"{what}: ids missing from the feature file: {missing[:5]}")


def _read_id_list(path: str | None) -> list[str]:
    if not path:
        return []
    try:
        ids = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"id list file not found: {path}") from None
    if not isinstance(ids, list):
        raise DataError(f"{path}: expected a JSON array of ids")
    return [str(i) for i in ids]


def _write_snapshot(cfg: ExperimentConfig, resolved: dict) -> str:
    path = Path(cfg.checkpoint_dir) / "resolved_config.json"
    atomic_write_text(path, json.dumps(resolved, indent=2) + "\n")
    return config_hash(resolved)


def _pool_size_from_manifest(manifest: SplitManifest) -> int:
    return (len(manifest.labeled_ids) + len(manifest.unlabeled_ids)
            + len(manifest.val_ids))


def _stage1_path(cfg) -> Path:
    return Path(cfg.checkpoint_dir) / "stage1.ckpt"


def _stage2_path(cfg, which: str = "last") -> Path:
    name = "stage2_best.ckpt" if which == "best" else "stage2.ckpt"
    return Path(cfg.checkpoint_dir) / name


def _write_loss_curve(path: Path, rows: list[tuple]) -> None:
    lines = ["epoch,stage,loss,lr"]
    lines += [f"{epoch},{stage},{loss:.10g},{lr:.10g}" for epoch, stage, loss, lr in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def cmd_split(cfg: ExperimentConfig) -> int:
    data = Dataset(cfg)
    test_ids = _read_id_list(cfg.test_ids)
    fixed_val = _read_id_list(cfg.fixed_val_ids) or None
    test_set = set(test_ids)
    data.require_ids(test_ids, "test partition")
    pool = [r.id for r in data.records if r.id not in test_set]
    resolved = cfg.resolve(pool_size=len(pool))
    _write_snapshot(cfg, resolved)
    manifest = make_split(
        pool, resolved["split"]["original_training_size"], cfg.labeled_ratio,
        cfg.val_count, cfg.seed, dataset_tag=cfg.dataset_tag,
        test_ids=test_ids, fixed_val_ids=fixed_val)
    manifest.save(cfg.manifest)
    print(f"split written to {cfg.manifest}")
    print(f"  val:       {len(manifest.val_ids)}")
    print(f"  labeled:   {len(manifest.labeled_ids)}")
    print(f"  unlabeled: {len(manifest.unlabeled_ids)}")
    print(f"  test:      {len(manifest.test_ids)}")
    return 0


def cmd_pretrain(cfg: ExperimentConfig) -> int:
    data = Dataset(cfg)
    manifest = SplitManifest.load(cfg.manifest)
    for part in ("labeled", "unlabeled", "val", "test"):
        data.require_ids(manifest.partition(part), f"{part} partition")
    resolved = cfg.resolve(pool_size=_pool_size_from_manifest(manifest))
    chash = _write_snapshot(cfg, resolved)
    s1 = resolved["stage1"]
    result = train_stage1(
        data.by_id, manifest, epochs=s1["epochs"], seed=cfg.seed, lr=s1["lr"],
        batch_size=s1["batch_size"], weight_decay=s1["weight_decay"],
        dtype=DTYPES[cfg.precision], prelu_init=s1["prelu_init"],
        adam_beta1=s1["adam"]["beta1"], adam_beta2=s1["adam"]["beta2"],
        adam_eps=s1["adam"]["eps"], checkpoint_path=_stage1_path(cfg),
        config_hash=chash)
    rows = []
    for epoch, (li, lt) in enumerate(zip(result.image_losses, result.text_losses)):
        rows.append((epoch, "stage1/ae_image", li, s1["lr"]))
        rows.append((epoch, "stage1/ae_text", lt, s1["lr"]))
    _write_loss_curve(Path(cfg.checkpoint_dir) / "loss_curve_stage1.csv", rows)
    n_params = nn.count_parameters(result.ae_image.parameters()
                                   + result.ae_text.parameters())
    print(f"stage 1 checkpoint written to {result.checkpoint_path}")
    print(f"  trainable parameters: {n_params}")
    print(f"  final mse: ae_image={result.image_losses[-1]:.6g} "
          f"ae_text={result.text_losses[-1]:.6g}")
    return 0


def cmd_finetune(cfg: ExperimentConfig) -> int:
    data = Dataset(cfg)
    if not data.num_classes:
        raise DataError("finetune requires labels (embedded or via paths.labels)")
    manifest = SplitManifest.load(cfg.manifest)
    for part in ("labeled", "val"):
        data.require_ids(manifest.partition(part), f"{part} partition")
    resolved = cfg.resolve(pool_size=_pool_size_from_manifest(manifest))
    chash = _write_snapshot(cfg, resolved)
    stage1_path = _stage1_path(cfg)
    stage1_tensors, stage1_meta = load_checkpoint(stage1_path)
    s2 = resolved["stage2"]
    result = train_stage2(
        data.by_id, manifest, stage1_tensors, stage1_meta,
        num_classes=data.num_classes, loss_kind=s2["loss"], epochs=s2["epochs"],
        seed=cfg.seed, lr=s2["lr"], batch_size=s2["batch_size"],
        gamma_scheduler=s2["gamma_scheduler"], proj_dim=s2["proj_dim"],
        dropout_rate=s2["dropout_rate"], threshold=s2["threshold"],
        db_settings=s2["db_focal"], dtype=DTYPES[cfg.precision],
        adam_beta1=s2["adam"]["beta1"], adam_beta2=s2["adam"]["beta2"],
        adam_eps=s2["adam"]["eps"], weight_decay=s2["weight_decay"],
        zero_cooked=s2["zero_cooked"],
        stage1_checksum=file_checksum_hex(stage1_path),
        checkpoint_path=_stage2_path(cfg), config_hash=chash,
        best_checkpoint_path=_stage2_path(cfg, "best") if s2["save_best"] else None,
        class_names=data.class_names or ())
    rows = [(epoch, "stage2", loss, lr)
            for epoch, (loss, lr) in enumerate(zip(result.train_losses, result.lrs))]
    _write_loss_curve(Path(cfg.checkpoint_dir) / "loss_curve_stage2.csv", rows)
    if result.val_history:
        metric_keys = sorted(result.val_history[0].keys() - {"epoch"})
        lines = ["epoch," + ",".join(metric_keys)]
        for entry in result.val_history:
            lines.append(f"{entry['epoch']}," +
                         ",".join(f"{entry[k]:.10g}" for k in metric_keys))
        atomic_write_text(Path(cfg.checkpoint_dir) / "val_metrics.csv",
                          "\n".join(lines) + "\n")
    print(f"stage 2 checkpoint written to {result.checkpoint_path}")
    print(f"  trainable parameters: {result.model.trainable_parameter_count()}")
    if result.val_history:
        print(f"  final val: {result.final_val}")
    return 0


def _load_stage2_model(cfg: ExperimentConfig, manifest: SplitManifest,
                       which: str = "last"):
    tensors, meta = load_checkpoint(_stage2_path(cfg, which))
    if meta.get("manifest_hash") != manifest.content_hash():
        raise DataError("stage-2 checkpoint was trained against a different split "
                        "(manifest hash mismatch)")
    stage1_path = _stage1_path(cfg)
    if stage1_path.exists():
        actual = file_checksum_hex(stage1_path)
        if meta.get("stage1_checksum") and meta["stage1_checksum"] != actual:
            raise DataError("checkpoint hash chain broken: stage-1 file does not "
                            "match the checksum recorded in the stage-2 checkpoint")
    model = RawNCook.from_tensors(tensors, meta["num_classes"], meta["proj_dim"],
                                  meta["dropout_rate"])
    return model, meta


def _partition_ids(manifest: SplitManifest, partition: str):
    ids = manifest.partition(partition)
    if not ids:
        raise DataError(f"partition {partition!r} is empty in the manifest")
    return list(ids)


def cmd_evaluate(cfg: ExperimentConfig, partition: str,
                 which: str = "last") -> int:
    data = Dataset(cfg)
    manifest = SplitManifest.load(cfg.manifest)
    resolved = cfg.resolve(pool_size=_pool_size_from_manifest(manifest))
    _write_snapshot(cfg, resolved)
    model, meta = _load_stage2_model(cfg, manifest, which)
    ids = _partition_ids(manifest, partition)
    data.require_ids(ids, f"{partition} partition")
    f_image, f_text, labels = stack_features(
        data.by_id, ids, dtype=DTYPES[cfg.precision], require_labels=True)
    logits = model.forward(f_image, f_text, nn.EVAL,
                           zero_cooked=meta.get("zero_cooked", False))
    probs = sigmoid(logits)
    threshold = meta["threshold"]
    decisions = (probs >= threshold).astype(np.uint8)
    report = weighted_f1(decisions, labels.astype(np.int64), threshold=threshold,
                         partition=partition,
                         class_names=tuple(data.class_names or ()))
    metric_name = "weighted_f1"
    if model.num_classes == 1:
        report = dataclasses.replace(
            report, auroc=auroc(probs[:, 0], labels[:, 0].astype(np.int64)))
        metric_name = "auroc"
    score = report.auroc if metric_name == "auroc" else report.weighted_f1
    note = reference_note(cfg.dataset_tag, metric_name, partition,
                          cfg.labeled_ratio, score)
    payload = report.to_dict()
    payload["labeled_ratio"] = cfg.labeled_ratio
    payload["dataset_tag"] = cfg.dataset_tag
    if note is not None:
        payload["reference"] = note
    out = Path(cfg.report_dir) / f"report_{partition}.json"
    atomic_write_text(out, json.dumps(payload, indent=2) + "\n")
    print(format_report_table(report))
    if note is not None:
        verdict = "consistent" if note["consistent"] else "not consistent"
        print(f"reference {metric_name}={note['reference_score']} "
              f"delta={note['delta']:+.4f} -> {verdict} with published reference")
    print(f"report written to {out}")
    return 0


def cmd_predict(cfg: ExperimentConfig, partition: str,
                which: str = "last") -> int:
    data = Dataset(cfg)
    manifest = SplitManifest.load(cfg.manifest)
    resolved = cfg.resolve(pool_size=_pool_size_from_manifest(manifest))
    _write_snapshot(cfg, resolved)
    model, meta = _load_stage2_model(cfg, manifest, which)
    ids = _partition_ids(manifest, partition)
    data.require_ids(ids, f"{partition} partition")
    f_image, f_text, _ = stack_features(data.by_id, ids,
                                        dtype=DTYPES[cfg.precision])
    logits = model.forward(f_image, f_text, nn.EVAL,
                           zero_cooked=meta.get("zero_cooked", False))
    probs = sigmoid(logits)
    decisions = (probs >= meta["threshold"]).astype(np.uint8)
    lines = []
    for k, rec_id in enumerate(ids):
        lines.append(json.dumps({"id": rec_id,
                                 "probabilities": [float(p) for p in probs[k]],
                                 "decisions": [int(d) for d in decisions[k]]}))
    out = Path(cfg.report_dir) / f"predictions_{partition}.jsonl"
    atomic_write_text(out, "\n".join(lines) + "\n")
    print(f"{len(lines)} predictions written to {out}")
    return 0


def cmd_run_all(cfg: ExperimentConfig) -> int:
    cmd_split(cfg)
    cmd_pretrain(cfg)
    cmd_finetune(cfg)
    cmd_evaluate(cfg, "val")
    manifest = SplitManifest.load(cfg.manifest)
    if manifest.test_ids:
        cmd_evaluate(cfg, "test")
    return 0


_FLAG_TO_KEY = {
    "seed": "seed",
    "dataset_tag": "dataset_tag",
    "precision": "precision",
    "labeled_ratio": "split.labeled_ratio",
    "val_count": "split.val_count",
    "features": "paths.features",
    "labels": "paths.labels",
    "manifest": "paths.manifest",
    "checkpoint_dir": "paths.checkpoint_dir",
    "report_dir": "paths.report_dir",
    "stage1_epochs": "stage1.epochs",
    "stage2_epochs": "stage2.epochs",
    "gamma_scheduler": "stage2.gamma_scheduler",
    "loss": "stage2.loss",
    "threshold": "stage2.threshold",
}


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="experiment config JSON")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override any config key, dotted path (repeatable)")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--dataset-tag", dest="dataset_tag",
                     choices=("mami", "hateful_memes", "custom"))
    sub.add_argument("--precision", choices=("float32", "float64"))
    sub.add_argument("--labeled-ratio", dest="labeled_ratio", type=float)
    sub.add_argument("--val-count", dest="val_count", type=int)
    sub.add_argument("--features")
    sub.add_argument("--labels")
    sub.add_argument("--manifest")
    sub.add_argument("--checkpoint-dir", dest="checkpoint_dir")
    sub.add_argument("--report-dir", dest="report_dir")
    sub.add_argument("--stage1-epochs", dest="stage1_epochs", type=int)
    sub.add_argument("--stage2-epochs", dest="stage2_epochs", type=int)
    sub.add_argument("--gamma-scheduler", dest="gamma_scheduler", type=float)
    sub.add_argument("--loss", choices=("db_focal", "bce"))
    sub.add_argument("--threshold", type=float)


def _collect_overrides(args: argparse.Namespace) -> dict:
    overrides: dict = {}
    for flag, dotted in _FLAG_TO_KEY.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[dotted] = value
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key] = parse_override_value(value)
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semimm",
        description="Two-stage semi-supervised multimodal training on "
                    "precomputed image/text embedding pairs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("split", "write the labeled/unlabeled/val/test split manifest"),
            ("pretrain", "stage 1: train both cross-modality autoencoders"),
            ("finetune", "stage 2: train the fusion classifier"),
            ("evaluate", "score a partition with the stage-2 checkpoint"),
            ("predict", "write probabilities/decisions for a partition"),
            ("run-all", "split + pretrain + finetune + evaluate")):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name in ("evaluate", "predict"):
            p.add_argument("--partition", default="val",
                           choices=("val", "test", "labeled", "unlabeled"))
            p.add_argument("--checkpoint", default="last",
                           choices=("last", "best"),
                           help="best requires finetune with stage2.save_best")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config, _collect_overrides(args))
        if args.command == "split":
            return cmd_split(cfg)
        if args.command == "pretrain":
            return cmd_pretrain(cfg)
        if args.command == "finetune":
            return cmd_finetune(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.partition, args.checkpoint)
        if args.command == "predict":
            return cmd_predict(cfg, args.partition, args.checkpoint)
        return cmd_run_all(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 4
    except SemimmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
