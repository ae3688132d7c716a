"""Feature-file format (MMF1), label manifests, deterministic splits, and
batch iteration.

MMF1 layout (little-endian throughout):

    magic   b"MMF1"
    u16     version (1)
    u16     flags (bit 0: labels present)
    u32     record count N
    u32     feature dim D
    u32     label dim C (0 when absent)
    N x     record: u16 id length, id bytes (UTF-8),
            D float32 image features, D float32 text features,
            C bytes of 0/1 labels when flags bit 0 is set
    u64     XXH64 checksum of all preceding bytes

Features are stored single precision; a write/read round-trip of float32
input is bit-exact.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DataError
from .ioutil import atomic_write_bytes, atomic_write_text, canonical_json, checksum64
from .tensor import Rng, child_seed

MAGIC = b"MMF1"
VERSION = 1
FLAG_LABELS = 0x0001


@dataclass(frozen=True)
class FeatureRecord:
    """One sample: id plus paired image/text feature vectors, optional labels."""

    id: str
    f_image: np.ndarray
    f_text: np.ndarray
    labels: np.ndarray | None = None

    def with_labels(self, labels: np.ndarray | None) -> "FeatureRecord":
        return FeatureRecord(self.id, self.f_image, self.f_text, labels)


def _validate_records(records: Sequence[FeatureRecord]) -> tuple[int, int]:
    if not records:
        raise DataError("cannot write an empty feature file")
    dim = records[0].f_image.shape[-1]
    label_dim = -1
    seen: set[str] = set()
    for pos, rec in enumerate(records):
        if not rec.id:
            raise DataError(f"record {pos}: empty id")
        if rec.id in seen:
            raise DataError(f"record {pos}: duplicate id {rec.id!r}")
        seen.add(rec.id)
        for name, vec in (("f_image", rec.f_image), ("f_text", rec.f_text)):
            if vec.ndim != 1 or vec.shape[0] != dim:
                raise DataError(
                    f"record {pos} ({rec.id!r}): {name} has dim {vec.shape}, expected ({dim},)")
            if not np.all(np.isfinite(vec)):
                raise DataError(f"record {pos} ({rec.id!r}): non-finite values in {name}")
        this_label_dim = 0 if rec.labels is None else int(rec.labels.shape[0])
        if label_dim == -1:
            label_dim = this_label_dim
        elif label_dim != this_label_dim:
            raise DataError(
                f"record {pos} ({rec.id!r}): label dim {this_label_dim} != {label_dim}")
        if rec.labels is not None and not np.all((rec.labels == 0) | (rec.labels == 1)):
            raise DataError(f"record {pos} ({rec.id!r}): labels must be 0/1")
    return int(dim), label_dim


def write_features(records: Sequence[FeatureRecord], path: str | Path) -> None:
    dim, label_dim = _validate_records(records)
    flags = FLAG_LABELS if label_dim > 0 else 0
    parts = [MAGIC, struct.pack("<HHIII", VERSION, flags, len(records), dim, label_dim)]
    for rec in records:
        id_bytes = rec.id.encode("utf-8")
        if len(id_bytes) > 0xFFFF:
            raise DataError(f"id too long: {rec.id[:32]!r}...")
        parts.append(struct.pack("<H", len(id_bytes)))
        parts.append(id_bytes)
        parts.append(np.ascontiguousarray(rec.f_image, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(rec.f_text, dtype="<f4").tobytes())
        if label_dim > 0:
            parts.append(rec.labels.astype(np.uint8).tobytes())
    body = b"".join(parts)
    atomic_write_bytes(path, body + struct.pack("<Q", checksum64(body)))


def read_features(path: str | Path) -> list[FeatureRecord]:
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"feature file not found: {path}") from None
    if len(raw) < 28 or raw[:4] != MAGIC:
        raise DataError(f"{path}: not an MMF1 feature file (bad magic)")
    body, (stored,) = raw[:-8], struct.unpack("<Q", raw[-8:])
    if checksum64(body) != stored:
        raise DataError(f"{path}: checksum mismatch (file corrupt)")
    version, flags, count, dim, label_dim = struct.unpack("<HHIII", raw[4:20])
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    has_labels = bool(flags & FLAG_LABELS)
    if has_labels != (label_dim > 0):
        raise DataError(f"{path}: label flag and label dim disagree")
    offset = 20
    vec_bytes = dim * 4
    records: list[FeatureRecord] = []
    seen: set[str] = set()
    for pos in range(count):
        (id_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        rec_id = raw[offset:offset + id_len].decode("utf-8")
        offset += id_len
        f_image = np.frombuffer(raw, dtype="<f4", count=dim, offset=offset).copy()
        offset += vec_bytes
        f_text = np.frombuffer(raw, dtype="<f4", count=dim, offset=offset).copy()
        offset += vec_bytes
        labels = None
        if has_labels:
            labels = np.frombuffer(raw, dtype=np.uint8, count=label_dim, offset=offset).copy()
            offset += label_dim
        if rec_id in seen:
            raise DataError(f"{path}: duplicate id {rec_id!r} at record {pos}")
        seen.add(rec_id)
        if not (np.all(np.isfinite(f_image)) and np.all(np.isfinite(f_text))):
            raise DataError(f"{path}: non-finite features at record {pos} ({rec_id!r})")
        if labels is not None and not np.all(labels <= 1):
            raise DataError(f"{path}: non-binary labels at record {pos} ({rec_id!r})")
        records.append(FeatureRecord(rec_id, f_image, f_text, labels))
    if offset != len(body):
        raise DataError(f"{path}: trailing bytes after record {count}")
    return records


def index_records(records: Iterable[FeatureRecord]) -> dict[str, FeatureRecord]:
    by_id: dict[str, FeatureRecord] = {}
    for rec in records:
        if rec.id in by_id:
            raise DataError(f"duplicate record id {rec.id!r}")
        by_id[rec.id] = rec
    return by_id


# ---------------------------------------------------------------------------
# label manifest (JSONL with a header line declaring class names)

def write_label_manifest(path: str | Path, class_names: Sequence[str],
                         labels_by_id: Mapping[str, Sequence[int]]) -> None:
    lines = [json.dumps({"classes": list(class_names)})]
    for rec_id, labels in labels_by_id.items():
        lines.append(json.dumps({"id": rec_id, "labels": [int(v) for v in labels]}))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_label_manifest(path: str | Path) -> tuple[list[str], dict[str, np.ndarray]]:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty label manifest")
    header = json.loads(lines[0])
    if "classes" not in header:
        raise DataError(f"{path}: first line must declare {{'classes': [...]}}")
    class_names = [str(c) for c in header["classes"]]
    labels: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        row = json.loads(line)
        if "id" not in row or "labels" not in row:
            raise DataError(f"{path}:{lineno}: expected fields id, labels")
        vec = np.asarray(row["labels"], dtype=np.uint8)
        if vec.shape != (len(class_names),):
            raise DataError(f"{path}:{lineno}: labels length {vec.size} != "
                            f"{len(class_names)} declared classes")
        if not np.all((vec == 0) | (vec == 1)):
            raise DataError(f"{path}:{lineno}: labels must be 0/1")
        if row["id"] in labels:
            raise DataError(f"{path}:{lineno}: duplicate id {row['id']!r}")
        labels[row["id"]] = vec
    return class_names, labels


def apply_labels(records: Sequence[FeatureRecord],
                 labels_by_id: Mapping[str, np.ndarray]) -> list[FeatureRecord]:
    """Attach manifest labels to matching records (replacing embedded ones)."""
    return [rec.with_labels(labels_by_id[rec.id]) if rec.id in labels_by_id else rec
            for rec in records]


# ---------------------------------------------------------------------------
# deterministic splits

def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SplitManifest:
    """Deterministic assignment of ids to the four partitions."""

    seed: int
    labeled_ratio: float
    dataset_tag: str
    labeled_ids: tuple[str, ...]
    unlabeled_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...] = field(default=())

    def validate(self) -> None:
        sets = {"labeled": set(self.labeled_ids), "unlabeled": set(self.unlabeled_ids),
                "val": set(self.val_ids), "test": set(self.test_ids)}
        for name, ids in sets.items():
            if len(ids) != len(getattr(self, f"{name}_ids")):
                raise DataError(f"manifest: duplicate ids inside {name} partition")
        names = list(sets)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                overlap = sets[a] & sets[b]
                if overlap:
                    raise DataError(f"manifest: partitions {a} and {b} overlap "
                                    f"on {sorted(overlap)[:5]}")

    def partition(self, name: str) -> tuple[str, ...]:
        try:
            return getattr(self, f"{name}_ids")
        except AttributeError:
            raise DataError(f"unknown partition {name!r}") from None

    def to_dict(self) -> dict:
        return {"seed": self.seed, "labeled_ratio": self.labeled_ratio,
                "dataset_tag": self.dataset_tag,
                "labeled_ids": list(self.labeled_ids),
                "unlabeled_ids": list(self.unlabeled_ids),
                "val_ids": list(self.val_ids), "test_ids": list(self.test_ids)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def content_hash(self) -> str:
        return f"{checksum64(canonical_json(self.to_dict()).encode('utf-8')):016x}"

    def save(self, path: str | Path) -> None:
        atomic_write_text(path, self.to_json() + "\n")

    @staticmethod
    def load(path: str | Path) -> "SplitManifest":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"split manifest not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid manifest JSON ({exc})") from None
        try:
            manifest = SplitManifest(
                seed=int(raw["seed"]), labeled_ratio=float(raw["labeled_ratio"]),
                dataset_tag=str(raw["dataset_tag"]),
                labeled_ids=tuple(raw["labeled_ids"]),
                unlabeled_ids=tuple(raw["unlabeled_ids"]),
                val_ids=tuple(raw["val_ids"]), test_ids=tuple(raw.get("test_ids", ())))
        except KeyError as exc:
            raise DataError(f"{path}: manifest missing field {exc}") from None
        manifest.validate()
        return manifest


def make_split(ids: Sequence[str], original_training_size: int, labeled_ratio: float,
               val_count: int, seed: int, *, dataset_tag: str = "custom",
               test_ids: Sequence[str] = (),
               fixed_val_ids: Sequence[str] | None = None) -> SplitManifest:
    """Shuffle the training pool and carve validation / labeled / unlabeled.

    The labeled count is round-half-up(labeled_ratio * original_training_size),
    drawn from the post-validation remainder. `fixed_val_ids` replaces the
    random validation carve-out for datasets with a published partition.
    """
    if not 0.0 < labeled_ratio < 1.0:
        raise DataError(f"labeled_ratio must be in (0, 1), got {labeled_ratio}")
    pool = list(ids)
    if len(set(pool)) != len(pool):
        raise DataError("training pool contains duplicate ids")
    test_set = set(test_ids)
    if test_set & set(pool):
        raise DataError("test ids overlap the training pool")

    shuffled = Rng(seed).shuffled(pool)
    if fixed_val_ids is None:
        if val_count + 1 > len(pool):
            raise DataError(f"val_count {val_count} leaves no training samples "
                            f"in a pool of {len(pool)}")
        val = shuffled[:val_count]
        remainder = shuffled[val_count:]
    else:
        val = list(fixed_val_ids)
        val_set = set(val)
        missing = val_set - set(pool)
        if missing:
            raise DataError(f"fixed val ids not in pool: {sorted(missing)[:5]}")
        remainder = [i for i in shuffled if i not in val_set]

    n_labeled = round_half_up(labeled_ratio * original_training_size)
    if n_labeled > len(remainder):
        raise DataError(f"labeled count {n_labeled} exceeds the {len(remainder)} "
                        f"ids available after the validation carve-out")
    manifest = SplitManifest(
        seed=seed, labeled_ratio=labeled_ratio, dataset_tag=dataset_tag,
        labeled_ids=tuple(remainder[:n_labeled]),
        unlabeled_ids=tuple(remainder[n_labeled:]),
        val_ids=tuple(val), test_ids=tuple(test_ids))
    manifest.validate()
    return manifest


# ---------------------------------------------------------------------------
# batch iteration

@dataclass(frozen=True)
class Batch:
    ids: tuple[str, ...]
    f_image: np.ndarray
    f_text: np.ndarray
    labels: np.ndarray | None

    def __len__(self) -> int:
        return len(self.ids)


def batches(records_by_id: Mapping[str, FeatureRecord], ids: Sequence[str],
            batch_size: int, shuffle_seed: int, epoch: int,
            dtype=np.float32, require_labels: bool = False) -> Iterator[Batch]:
    """One shuffled pass over `ids`; order is reproducible per (seed, epoch)."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    missing = [i for i in ids if i not in records_by_id]
    if missing:
        raise DataError(f"unknown ids in batch request: {missing[:5]}")
    order = Rng(child_seed(shuffle_seed, 1, epoch)).permutation(len(ids))
    for start in range(0, len(ids), batch_size):
        chunk = [ids[j] for j in order[start:start + batch_size]]
        recs = [records_by_id[i] for i in chunk]
        labels = None
        if all(r.labels is not None for r in recs):
            labels = np.stack([r.labels for r in recs]).astype(dtype)
        elif require_labels:
            holes = [r.id for r in recs if r.labels is None][:5]
            raise DataError(f"records missing labels: {holes}")
        yield Batch(ids=tuple(chunk),
                    f_image=np.stack([r.f_image for r in recs]).astype(dtype),
                    f_text=np.stack([r.f_text for r in recs]).astype(dtype),
                    labels=labels)


def stack_features(records_by_id: Mapping[str, FeatureRecord], ids: Sequence[str],
                   dtype=np.float32, require_labels: bool = False,
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Materialize (f_image, f_text, labels) matrices for `ids` in order."""
    if not ids:
        raise DataError("stack_features: empty id list")
    missing = [i for i in ids if i not in records_by_id]
    if missing:
        raise DataError(f"unknown ids: {missing[:5]}")
    recs = [records_by_id[i] for i in ids]
    labels = None
    if all(r.labels is not None for r in recs):
        labels = np.stack([r.labels for r in recs]).astype(dtype)
    elif require_labels:
        holes = [r.id for r in recs if r.labels is None][:5]
        raise DataError(f"records missing labels: {holes}")
    return (np.stack([r.f_image for r in recs]).astype(dtype),
            np.stack([r.f_text for r in recs]).astype(dtype), labels)
