"""Evaluation metrics: support-weighted F1 for multi-label decisions and
AUROC for binary scores.

AUROC is computed by the rank (Mann-Whitney) formulation with ties
counted as one half; `auroc_trapezoid` integrates the ROC curve directly
and serves as an internal cross-oracle (the two agree to ~1e-15).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class ClassReport:
    precision: float
    recall: float
    f1: float
    support: int

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall,
                "f1": self.f1, "support": self.support}


@dataclass(frozen=True)
class EvalReport:
    """Per-class precision/recall/F1/support plus the aggregate metrics."""

    per_class: tuple[ClassReport, ...]
    weighted_f1: float
    auroc: float | None
    sample_count: int
    threshold: float | None = None
    partition: str = ""
    class_names: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "partition": self.partition,
            "sample_count": self.sample_count,
            "threshold": self.threshold,
            "weighted_f1": self.weighted_f1,
            "auroc": self.auroc,
            "class_names": list(self.class_names),
            "per_class": [c.to_dict() for c in self.per_class],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _binary_matrix(name: str, m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise DataError(f"{name}: expected a non-empty 2-D binary matrix, got shape {m.shape}")
    if not np.all((m == 0) | (m == 1)):
        raise DataError(f"{name}: entries must be 0/1")
    return m.astype(np.int64)


def weighted_f1(decisions: np.ndarray, targets: np.ndarray,
                threshold: float | None = None, partition: str = "",
                class_names: tuple[str, ...] = ()) -> EvalReport:
    """Per-class F1 (0/0 := 0) weighted by true-label support."""
    decisions = _binary_matrix("weighted_f1 decisions", decisions)
    targets = _binary_matrix("weighted_f1 targets", targets)
    if decisions.shape != targets.shape:
        raise DataError(
            f"weighted_f1: decisions {decisions.shape} vs targets {targets.shape}")

    reports = []
    for i in range(targets.shape[1]):
        d, t = decisions[:, i], targets[:, i]
        tp = int(np.sum((d == 1) & (t == 1)))
        fp = int(np.sum((d == 1) & (t == 0)))
        fn = int(np.sum((d == 0) & (t == 1)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        reports.append(ClassReport(precision, recall, f1, support=tp + fn))

    total_support = sum(c.support for c in reports)
    wf1 = (sum(c.f1 * c.support for c in reports) / total_support) if total_support else 0.0
    return EvalReport(tuple(reports), wf1, auroc=None, sample_count=targets.shape[0],
                      threshold=threshold, partition=partition,
                      class_names=tuple(class_names))


def _check_scores(scores: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets).reshape(-1)
    if scores.shape != targets.shape:
        raise DataError(f"auroc: {scores.shape[0]} scores vs {targets.shape[0]} targets")
    if not np.all((targets == 0) | (targets == 1)):
        raise DataError("auroc: targets must be 0/1")
    n_pos = int(targets.sum())
    if n_pos == 0 or n_pos == targets.size:
        raise DataError("auroc undefined: targets contain a single class "
                        "(need at least one positive and one negative)")
    return scores, targets.astype(np.int64)


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    # 1-based ranks, ties get the mean rank of their block
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    return ranks


def auroc(scores: np.ndarray, targets: np.ndarray) -> float:
    """P(random positive outscores random negative), ties counted 1/2."""
    scores, targets = _check_scores(scores, targets)
    ranks = _average_ranks(scores)
    n_pos = int(targets.sum())
    n_neg = targets.size - n_pos
    u = float(ranks[targets == 1].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auroc_trapezoid(scores: np.ndarray, targets: np.ndarray) -> float:
    """Trapezoidal integration of the ROC curve; cross-oracle for `auroc`."""
    scores, targets = _check_scores(scores, targets)
    desc = np.argsort(-scores, kind="mergesort")
    y = targets[desc]
    s = scores[desc]
    tps = np.cumsum(y)
    fps = np.cumsum(1 - y)
    # threshold sweep: keep the last index of each distinct score
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    n_pos, n_neg = tps[-1], fps[-1]
    tpr = np.r_[0.0, tps[last] / n_pos]
    fpr = np.r_[0.0, fps[last] / n_neg]
    return float(np.trapezoid(tpr, fpr))


def format_report_table(report: EvalReport) -> str:
    """Fixed-order, human-readable rendering for the CLI."""
    lines = []
    header = f"partition={report.partition or '-'}  samples={report.sample_count}"
    if report.threshold is not None:
        header += f"  threshold={report.threshold}"
    lines.append(header)
    lines.append(f"{'class':<24}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>10}")
    for i, c in enumerate(report.per_class):
        name = report.class_names[i] if i < len(report.class_names) else f"class_{i}"
        lines.append(f"{name:<24}{c.precision:>10.4f}{c.recall:>10.4f}"
                     f"{c.f1:>10.4f}{c.support:>10d}")
    lines.append(f"weighted_f1 = {report.weighted_f1:.6f}")
    if report.auroc is not None:
        lines.append(f"auroc       = {report.auroc:.6f}")
    return "\n".join(lines)
