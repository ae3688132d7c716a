"""Input manifests: CSV (with header) or JSONL rows of
id, image_path, text and optional labels."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class RawSample:
    id: str
    image_path: str
    text: str
    labels: tuple[int, ...] | None = None


def _parse_labels(value) -> tuple[int, ...] | None:
    if value is None or value == "":
        return None
    if isinstance(value, str):
        parts = value.split(";")
    else:
        parts = list(value)
    labels = tuple(int(v) for v in parts)
    if any(v not in (0, 1) for v in labels):
        raise ValueError(f"labels must be 0/1, got {labels}")
    return labels


def read_manifest(path: str | Path) -> list[RawSample]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input manifest not found: {path}")
    if path.suffix.lower() == ".csv":
        return _read_csv(path)
    return _read_jsonl(path)


def _require_fields(row: dict, where: str) -> None:
    for field in ("id", "image_path", "text"):
        if field not in row or row[field] in (None, ""):
            raise ValueError(f"{where}: missing field {field!r}")


def _read_csv(path: Path) -> list[RawSample]:
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            _require_fields(row, f"{path}:{lineno}")
            samples.append(RawSample(row["id"], row["image_path"], row["text"],
                                     _parse_labels(row.get("labels"))))
    return samples


def _read_jsonl(path: Path) -> list[RawSample]:
    samples = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(),
                                  start=1):
        if not line.strip():
            continue
        row = json.loads(line)
        _require_fields(row, f"{path}:{lineno}")
        samples.append(RawSample(str(row["id"]), str(row["image_path"]),
                                 str(row["text"]), _parse_labels(row.get("labels"))))
    return samples
