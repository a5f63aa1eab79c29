"""Stratified folds, five-model training and ensemble voting."""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import classifier, metrics
from .errors import ClassTooSmall, DimensionMismatch, TweetMisinfoError, UnknownLabel
from .textnorm import Label, Tweet

CD = metrics.CD
DEFAULT_THRESHOLD = 0.4


class LabelScheme(str, enum.Enum):
    THREE_CLASS = "3"
    TWO_CLASS = "2"

    @property
    def n_classes(self):
        return 3 if self is LabelScheme.THREE_CLASS else 2

    @property
    def class_names(self):
        if self is LabelScheme.THREE_CLASS:
            return ["conspiracy", "other", "non-conspiracy"]
        return ["conspiracy", "non-conspiracy"]

    def class_index(self, label: Label) -> int:
        """Contiguous training index of a (3-class) label under this scheme."""
        label = _check_label(label)
        if self is LabelScheme.THREE_CLASS:
            return int(label)
        return 0 if label is Label.CONSPIRACY else 1


def _check_label(label):
    try:
        return Label(label)
    except ValueError:
        raise UnknownLabel(f"unknown label {label!r}") from None


def map_labels(dataset: Sequence[Tweet], scheme) -> List[Tweet]:
    """Two-class scheme folds Other into NonConspiracy; three-class is identity."""
    scheme = LabelScheme(scheme)
    out = []
    for t in dataset:
        if t.label is None:
            out.append(t)
            continue
        label = _check_label(t.label)
        if scheme is LabelScheme.TWO_CLASS and label is Label.OTHER:
            label = Label.NON_CONSPIRACY
        out.append(replace(t, label=label))
    return out


@dataclass
class FoldPlan:
    k: int
    ids: List[str]
    assignments: Dict[str, int]

    def val_ids(self, fold: int) -> List[str]:
        return [i for i in self.ids if self.assignments[i] == fold]

    def train_ids(self, fold: int) -> List[str]:
        return [i for i in self.ids if self.assignments[i] != fold]


def stratified_folds(ids: Sequence[str], labels: Sequence[int], seed: int, k: int = 5, class_names=None) -> FoldPlan:
    """Assign each id to one of ``k`` validation folds, stratified by label.

    Per class (in ascending label order) the ids are permuted with a single
    ``default_rng(seed)`` stream and cut into ``k`` contiguous chunks whose
    sizes differ by at most one, the larger chunks first. ``class_names``
    (label -> name) makes a ClassTooSmall error name the class; labels listed
    there but absent from ``labels`` are reported as having 0 samples.
    """
    ids = list(ids)
    labels = np.asarray(labels)
    if len(ids) != len(labels):
        raise DimensionMismatch("ids and labels differ in length")
    if len(set(ids)) != len(ids):
        raise ValueError("ids must be unique")
    classes = sorted(set(labels.tolist()) | set(class_names or ()))
    for c in classes:
        n = int((labels == c).sum())
        if n < k:
            name = class_names.get(c, c) if class_names else c
            raise ClassTooSmall(name, n, k)
    rng = np.random.default_rng(seed)
    assignments = {}
    for c in classes:
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(len(members))]
        for fold, chunk in enumerate(np.array_split(members, k)):
            for j in chunk:
                assignments[ids[j]] = fold
    return FoldPlan(k, ids, assignments)


@dataclass
class FoldReport:
    fold: int
    n_train: int
    n_val: int
    accuracy: float
    mcc: float
    best_epoch: int
    history: List[dict] = field(default_factory=list, repr=False)

    def to_dict(self, with_history=False):
        d = {
            "fold": self.fold, "n_train": self.n_train, "n_val": self.n_val,
            "accuracy": self.accuracy, "mcc": self.mcc, "best_epoch": self.best_epoch,
        }
        if with_history:
            d["history"] = self.history
        return d


@dataclass
class EnsembleResult:
    models: List[classifier.SEMLP]
    folds: List[FoldReport]
    plan: FoldPlan

    def summary(self):
        """Mean and (population) standard deviation across folds."""
        acc = np.array([f.accuracy for f in self.folds])
        mcc = np.array([f.mcc for f in self.folds])
        return {
            "acc_mean": float(acc.mean()), "acc_std": float(acc.std()),
            "mcc_mean": float(mcc.mean()), "mcc_std": float(mcc.std()),
        }


class FoldError(TweetMisinfoError):
    """Wraps an error raised while training one fold."""

    def __init__(self, fold, exc):
        self.fold = fold
        self.cause = exc
        self.exit_code = getattr(exc, "exit_code", 1)
        super().__init__(f"fold {fold}: {exc}")


def _stack(embeddings, ids):
    missing = [i for i in ids if i not in embeddings]
    if missing:
        raise DimensionMismatch(f"{len(missing)} tweets have no embedding, e.g. {missing[0]!r}")
    X = np.stack([np.asarray(embeddings[i], dtype=np.float64) for i in ids]) if ids else None
    return X


def train_ensemble(dataset: Sequence[Tweet], embeddings: Dict[str, np.ndarray], scheme, config: classifier.ClassifierConfig, seed: int = 0, k: int = 5, jobs: int = 1) -> EnsembleResult:
    """Train one model per fold (fold i validates, the others train).

    Fold i trains with classifier seed ``config.seed + i``.
    """
    scheme = LabelScheme(scheme)
    labelled = [t for t in map_labels(dataset, scheme) if t.label is not None]
    ids = [t.id for t in labelled]
    y_all = np.array([scheme.class_index(t.label) for t in labelled], dtype=np.int64)
    names = dict(enumerate(scheme.class_names))
    plan = stratified_folds(ids, y_all, seed, k, class_names=names)

    X_all = _stack(embeddings, ids)
    if X_all.shape[1] != config.input_dim:
        raise DimensionMismatch(
            f"embeddings have dimension {X_all.shape[1]}, classifier expects {config.input_dim}"
        )
    if config.n_classes != scheme.n_classes:
        config = replace(config, n_classes=scheme.n_classes)
    fold_of = np.array([plan.assignments[i] for i in ids])

    def run(fold):
        tr, va = fold_of != fold, fold_of == fold
        try:
            model, history = classifier.train(
                replace(config, seed=config.seed + fold), X_all[tr], y_all[tr], X_all[va], y_all[va]
            )
        except TweetMisinfoError as exc:
            raise FoldError(fold, exc) from exc
        _, acc, mcc = classifier.score(model, X_all[va], y_all[va])
        best = max(history, key=lambda r: (r["val_mcc"], -r["epoch"]))["epoch"]
        return model, FoldReport(fold, int(tr.sum()), int(va.sum()), acc, mcc, best, history)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, range(k)))
    else:
        results = [run(f) for f in range(k)]
    return EnsembleResult([r[0] for r in results], [r[1] for r in results], plan)


@dataclass
class EnsemblePrediction:
    tweet_id: str
    per_model_labels: List[int]
    per_model_confidence: List[float]
    final_label: int
    mean_confidence: float

    def to_dict(self):
        return {
            "id": self.tweet_id,
            "per_model_labels": self.per_model_labels,
            "per_model_confidence": self.per_model_confidence,
            "mean_confidence": self.mean_confidence,
            "final_label": self.final_label,
        }


def majority_label(labels: Sequence[int], prob_sums: np.ndarray) -> int:
    """Most frequent label; ties go to the largest summed probability, then the lowest index."""
    counts = np.bincount(np.asarray(labels), minlength=len(prob_sums))
    tied = np.flatnonzero(counts == counts.max())
    if len(tied) == 1:
        return int(tied[0])
    best = max(prob_sums[tied])
    return int(min(c for c in tied if prob_sums[c] == best))


def combine(ids: Sequence[str], probs: np.ndarray, cd_enabled: bool = True, threshold: float = DEFAULT_THRESHOLD, cd_mode: str = "mean") -> List[EnsemblePrediction]:
    """Vote over stacked model probabilities ``[n_models, n_samples, n_classes]``.

    ``cd_mode="mean"``: cannot-determine iff the mean over models of the
    max-softmax is below ``threshold``. ``cd_mode="per-model"``: each model
    whose max-softmax is below ``threshold`` votes cannot-determine instead
    of a class, and cannot-determine wins only with strictly more votes than
    every class.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 3 or probs.shape[1] != len(ids):
        raise DimensionMismatch(f"probabilities of shape {probs.shape} do not match {len(ids)} ids")
    if cd_mode not in ("mean", "per-model"):
        raise ValueError(f"unknown cd_mode {cd_mode!r}")
    labels = probs.argmax(axis=2)
    conf = probs.max(axis=2)
    out = []
    for j, tid in enumerate(ids):
        lab = labels[:, j]
        cf = conf[:, j]
        mean_conf = math.fsum(cf.tolist()) / len(cf)
        final = majority_label(lab, probs[:, j, :].sum(axis=0))
        if cd_enabled:
            if cd_mode == "mean":
                if mean_conf < threshold:
                    final = CD
            else:
                unsure = cf < threshold
                votes = np.bincount(lab[~unsure], minlength=probs.shape[2])
                if unsure.sum() > votes.max():
                    final = CD
        out.append(EnsemblePrediction(tid, lab.tolist(), cf.tolist(), final, mean_conf))
    return out


def predict_ensemble(models, embeddings: Dict[str, np.ndarray], ids: Optional[Sequence[str]] = None, cd_enabled: bool = True, threshold: float = DEFAULT_THRESHOLD, cd_mode: str = "mean") -> List[EnsemblePrediction]:
    """Predict with every model and vote; ids default to the embeddings' order."""
    if not models:
        raise ValueError("need at least one model")
    shapes = {(m.config.input_dim, m.config.n_classes) for m in models}
    if len(shapes) != 1:
        raise DimensionMismatch(f"models disagree on (input_dim, n_classes): {sorted(shapes)}")
    ids = list(embeddings) if ids is None else list(ids)
    if not ids:
        return []
    X = _stack(embeddings, ids)
    probs = np.stack([m.predict_proba(X) for m in models])
    return combine(ids, probs, cd_enabled, threshold, cd_mode)
