"""Confusion matrices and the scores used throughout: Cohen's kappa,
per-class precision/recall/F1, macro F1, accuracy, and inference timing."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import GemidError


@dataclass
class ConfusionMatrix:
    """K x K counts; rows are true classes, columns predicted."""

    classes: tuple[str, ...]
    counts: np.ndarray

    @staticmethod
    def from_labels(y_true, y_pred, classes=None) -> "ConfusionMatrix":
        if classes is None:
            classes = sorted(set(y_true) | set(y_pred))
        classes = tuple(classes)
        index = {c: i for i, c in enumerate(classes)}
        counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
        for t, p in zip(y_true, y_pred):
            counts[index[t], index[p]] += 1
        return ConfusionMatrix(classes, counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def to_rows(self):
        """CSV-exportable rows: header with predicted classes, one row per true class."""
        header = ["true\\pred"] + list(self.classes)
        rows = [[c] + [int(v) for v in self.counts[i]] for i, c in enumerate(self.classes)]
        return header, rows


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise GemidError("empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


def kappa(cm: ConfusionMatrix) -> float:
    """Cohen's kappa: (p_o - p_e) / (1 - p_e); 0 when chance agreement is 1."""
    total = cm.total
    if total == 0:
        raise GemidError("empty confusion matrix")
    p_o = float(np.trace(cm.counts)) / total
    rows = cm.counts.sum(axis=1).astype(np.float64)
    cols = cm.counts.sum(axis=0).astype(np.float64)
    p_e = float(rows @ cols) / (total * total)
    if p_e >= 1.0 - 1e-15:
        return 0.0  # degenerate: a single observed class on both sides
    return (p_o - p_e) / (1.0 - p_e)


def per_class_scores(cm: ConfusionMatrix) -> dict:
    """precision/recall/F1/support per class; 0 on zero denominators."""
    tp = np.diag(cm.counts).astype(np.float64)
    pred = cm.counts.sum(axis=0).astype(np.float64)
    true = cm.counts.sum(axis=1).astype(np.float64)
    out = {}
    for i, c in enumerate(cm.classes):
        precision = tp[i] / pred[i] if pred[i] > 0 else 0.0
        recall = tp[i] / true[i] if true[i] > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        out[c] = {
            "precision": precision, "recall": recall, "f1": f1, "support": int(true[i]),
        }
    return out


def macro_f1(cm: ConfusionMatrix, include_zero_support: bool = False) -> float:
    """Unweighted mean of per-class F1.

    Classes with zero support (never true in the evaluated set) are
    excluded from the mean by default, mirroring per-device reporting
    where absent devices are not averaged; include_zero_support keeps
    them as zeros.
    """
    if cm.total == 0:
        raise GemidError("empty confusion matrix")
    scores = per_class_scores(cm)
    f1s = [
        s["f1"] for s in scores.values()
        if include_zero_support or s["support"] > 0
    ]
    return float(np.mean(f1s)) if f1s else 0.0


@dataclass
class ScoreReport:
    accuracy: float
    kappa: float
    macro_f1: float
    per_class: dict = field(default_factory=dict)

    @staticmethod
    def from_matrix(cm: ConfusionMatrix, include_zero_support: bool = False) -> "ScoreReport":
        return ScoreReport(
            accuracy=accuracy(cm),
            kappa=kappa(cm),
            macro_f1=macro_f1(cm, include_zero_support),
            per_class=per_class_scores(cm),
        )

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "kappa": self.kappa,
            "macro_f1": self.macro_f1,
            "per_class": self.per_class,
        }


def time_inference(model, X, repetitions: int = 5) -> dict:
    """Median/mean wall-clock predict time normalized per 1000 records."""
    n = len(X)
    if n == 0:
        raise GemidError("cannot time inference on an empty record set")
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        model.predict(X)
        samples.append((time.perf_counter() - t0) * 1000.0 / n)
    return {
        "seconds_per_1k_median": float(np.median(samples)),
        "seconds_per_1k_mean": float(np.mean(samples)),
        "repetitions": repetitions,
    }
