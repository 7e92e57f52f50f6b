"""Classification metrics: accuracy, macro-F1, macro one-vs-rest ROC-AUC, one-hot MSE."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata


def confusion_matrix(labels, predictions, k: int) -> np.ndarray:
    """Counts with true class on rows and predicted class on columns."""
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(predictions)), 1)
    return cm


def accuracy_from_confusion(cm) -> float:
    cm = np.asarray(cm)
    return float(np.trace(cm) / cm.sum())


def macro_f1_from_confusion(cm) -> tuple:
    """Unweighted mean of per-class F1; a class with no true or predicted samples scores 0.

    Returns ``(macro_f1, degenerate_classes)``.
    """
    cm = np.asarray(cm, dtype=float)
    tp = np.diag(cm)
    predicted = cm.sum(0)
    actual = cm.sum(1)
    denom = predicted + actual
    f1 = np.zeros(len(cm))
    ok = denom > 0
    f1[ok] = 2 * tp[ok] / denom[ok]
    return float(f1.mean()), [int(c) for c in np.flatnonzero(actual == 0)]


def binary_auc(scores, positives) -> float:
    """Mann-Whitney form of the area under the ROC curve, ties counted as half."""
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC-AUC needs both positive and negative samples")
    ranks = rankdata(scores)
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def roc_auc(scores, labels) -> float:
    """Macro one-vs-rest ROC-AUC over the classes present in ``labels``.

    ``scores`` is ``(samples, k)`` class probabilities; a 1-D array is taken
    as the positive-class score of a binary problem.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    present = np.unique(labels)
    if len(present) < 2:
        raise ValueError("ROC-AUC is undefined with a single class")
    if scores.ndim == 1:
        return binary_auc(scores, labels == present[-1])
    return float(np.mean([binary_auc(scores[:, c], labels == c) for c in present]))


def one_hot(labels, k: int) -> np.ndarray:
    return np.eye(k)[np.asarray(labels)]


@dataclass
class MetricsReport:
    mse: float
    accuracy: float
    f1: float
    roc_auc: float
    environment: str
    confusion: list = field(default_factory=list)
    samples: int = 0
    absent_classes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["environment", "mse", "roc_auc", "f1", "accuracy", "samples"])
            w.writerow([self.environment, repr(self.mse), repr(self.roc_auc), repr(self.f1),
                        repr(self.accuracy), self.samples])

    @classmethod
    def from_json(cls, path) -> "MetricsReport":
        with open(path) as fh:
            return cls(**json.load(fh))


def metrics_report(probs, labels, k: int, environment: str) -> MetricsReport:
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    cm = confusion_matrix(labels, probs.argmax(1), k)
    f1, absent = macro_f1_from_confusion(cm)
    if absent:
        warnings.warn(f"classes {absent} absent from the evaluated split; their F1 counts as 0")
    try:
        auc = roc_auc(probs, labels)
    except ValueError:
        auc = float("nan")
    return MetricsReport(
        mse=float(np.mean((probs - one_hot(labels, k)) ** 2)),
        accuracy=accuracy_from_confusion(cm),
        f1=f1,
        roc_auc=auc,
        environment=environment,
        confusion=cm.tolist(),
        samples=int(len(labels)),
        absent_classes=absent,
    )
