"""Confusion matrices, accuracy and the multiclass Matthews correlation.

Predictions may contain the cannot-determine label (``CD = -1``). It is
stored as an extra, last column of the confusion matrix. For MCC the matrix
is squared up with an all-zero gold row for that column, so a CD prediction
behaves like a vote for a class no tweet belongs to.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import EmptyMatrix, LengthMismatch, MissingPrediction

CD = -1
CD_POLICIES = ("count-as-wrong", "exclude")


@dataclass
class ConfusionMatrix:
    """Rows are gold classes, columns predicted classes (+ CD column if present)."""

    counts: np.ndarray
    class_names: Optional[List[str]] = None

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def has_cd(self):
        return self.counts.shape[1] == self.n_classes + 1

    @property
    def total(self):
        return int(self.counts.sum())

    def names(self):
        names = list(self.class_names or [str(i) for i in range(self.n_classes)])
        if self.has_cd:
            names.append("CD")
        return names

    def to_text(self):
        names = self.names()
        width = max(6, max(len(n) for n in names), len(str(self.counts.max(initial=0)))) + 1
        lines = ["gold\\pred".ljust(width) + "".join(n.rjust(width) for n in names)]
        for i in range(self.n_classes):
            row = "".join(str(int(v)).rjust(width) for v in self.counts[i])
            lines.append(names[i].ljust(width) + row)
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        names = self.names()
        writer.writerow(["gold"] + names)
        for i in range(self.n_classes):
            writer.writerow([names[i]] + [int(v) for v in self.counts[i]])
        return buf.getvalue()


def confusion(gold: Sequence[int], pred: Sequence[int], n_classes: Optional[int] = None, class_names=None) -> ConfusionMatrix:
    gold = np.asarray(gold, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gold.shape != pred.shape:
        raise LengthMismatch(f"gold has {gold.size} labels, pred has {pred.size}")
    if (gold < 0).any():
        raise ValueError("gold labels must be non-negative class indices")
    if n_classes is None:
        n_classes = int(max(gold.max(initial=-1), pred.max(initial=-1))) + 1
    if gold.size and (gold.max() >= n_classes or pred.max() >= n_classes or pred.min() < CD):
        raise ValueError("label out of range")
    has_cd = bool((pred == CD).any())
    counts = np.zeros((n_classes, n_classes + int(has_cd)), dtype=np.int64)
    cols = np.where(pred == CD, n_classes, pred)
    np.add.at(counts, (gold, cols), 1)
    return ConfusionMatrix(counts, class_names)


def _square(counts: np.ndarray) -> np.ndarray:
    rows, cols = counts.shape
    if rows == cols:
        return counts
    out = np.zeros((cols, cols), dtype=counts.dtype)
    out[:rows] = counts
    return out


def mcc(cm) -> float:
    """Multiclass MCC (Gorodkin's R_K) from a confusion matrix.

    Returns 0.0 when the gold or predicted labels have zero variance.
    """
    counts = cm.counts if isinstance(cm, ConfusionMatrix) else np.asarray(cm)
    c = _square(counts).astype(object)  # exact integer arithmetic
    n = int(c.sum())
    if n == 0:
        raise EmptyMatrix("confusion matrix has no samples")
    t = c.sum(axis=1)
    p = c.sum(axis=0)
    cov_xy = n * int(np.trace(c)) - int(np.dot(t, p))
    cov_xx = n * n - int(np.dot(t, t))
    cov_yy = n * n - int(np.dot(p, p))
    if cov_xx == 0 or cov_yy == 0:
        return 0.0
    return cov_xy / math.sqrt(cov_xx * cov_yy)


def accuracy(cm) -> float:
    counts = cm.counts if isinstance(cm, ConfusionMatrix) else np.asarray(cm)
    total = counts.sum()
    if total == 0:
        raise EmptyMatrix("confusion matrix has no samples")
    k = counts.shape[0]
    return float(np.trace(counts[:, :k]) / total)


def precision_recall(cm: ConfusionMatrix):
    counts = cm.counts
    k = cm.n_classes
    diag = np.diag(counts[:, :k]).astype(float)
    col = counts[:, :k].sum(axis=0)
    row = counts.sum(axis=1)
    precision = np.divide(diag, col, out=np.zeros(k), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros(k), where=row > 0)
    return precision, recall


@dataclass
class EvaluationReport:
    confusion: ConfusionMatrix
    accuracy: float
    mcc: float
    precision: List[float]
    recall: List[float]
    cd_policy: str = "count-as-wrong"
    n_scored: int = 0
    n_cd: int = 0
    extra: Dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "cd_policy": self.cd_policy,
            "n_scored": self.n_scored,
            "n_cd": self.n_cd,
            "accuracy": self.accuracy,
            "mcc": self.mcc,
            "classes": self.confusion.names()[: self.confusion.n_classes],
            "precision": list(self.precision),
            "recall": list(self.recall),
            "confusion": self.confusion.counts.tolist(),
            "confusion_columns": self.confusion.names(),
        }
        out.update(self.extra)
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def report_from_labels(gold, pred, n_classes, cd_policy="count-as-wrong", class_names=None) -> EvaluationReport:
    if cd_policy not in CD_POLICIES:
        raise ValueError(f"cd_policy must be one of {CD_POLICIES}")
    gold = np.asarray(gold, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gold.shape != pred.shape:
        raise LengthMismatch(f"gold has {gold.size} labels, pred has {pred.size}")
    n_cd = int((pred == CD).sum())
    if cd_policy == "exclude":
        keep = pred != CD
        gold, pred = gold[keep], pred[keep]
    if gold.size == 0:
        raise EmptyMatrix(f"no scored samples under cd_policy={cd_policy!r}")
    cm = confusion(gold, pred, n_classes, class_names)
    prec, rec = precision_recall(cm)
    return EvaluationReport(
        confusion=cm,
        accuracy=accuracy(cm),
        mcc=mcc(cm),
        precision=prec.tolist(),
        recall=rec.tolist(),
        cd_policy=cd_policy,
        n_scored=int(gold.size),
        n_cd=n_cd,
    )


def evaluate(gold: Dict[str, int], predictions, n_classes: int, cd_policy="count-as-wrong", class_names=None) -> EvaluationReport:
    """Score ensemble predictions against gold labels keyed by tweet id.

    ``predictions`` is an iterable of objects with ``tweet_id`` and
    ``final_label`` (or a mapping id -> label).
    """
    if isinstance(predictions, dict):
        by_id = dict(predictions)
    else:
        by_id = {p.tweet_id: p.final_label for p in predictions}
    missing = [i for i in gold if i not in by_id]
    if missing:
        raise MissingPrediction(f"{len(missing)} gold ids lack a prediction, e.g. {missing[0]!r}")
    ids = list(gold)
    return report_from_labels(
        [gold[i] for i in ids], [by_id[i] for i in ids], n_classes, cd_policy, class_names
    )
