"""Confusion-matrix metrics and one-vs-rest ROC analysis."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import N_CLASSES, SingleClassWarning


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float
    defined: bool = True


def roc_curve(scores, positive) -> RocCurve:
    """ROC points at every distinct threshold, from (0, 0) to (1, 1).

    The area is accumulated in integer counts and divided by P*N once, so
    tied scores contribute exactly one half per pair.
    """
    s = np.asarray(scores, dtype=float)
    pos = np.asarray(positive).astype(bool)
    P = int(pos.sum())
    N = int(pos.size - P)
    if P == 0 or N == 0:
        return RocCurve(np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.array([]), float("nan"), False)
    order = np.argsort(-s, kind="mergesort")
    s, pos = s[order], pos[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.r_[0, np.cumsum(pos)[last]].astype(np.int64)
    fp = np.r_[0, np.cumsum(~pos)[last]].astype(np.int64)
    twice_area = int((np.diff(fp) * (tp[1:] + tp[:-1])).sum())
    return RocCurve(fp / N, tp / P, s[last], twice_area / (2 * P * N))


def binary_auc(scores, labels) -> float:
    return roc_curve(scores, np.asarray(labels) == 1).auc


def roc_auc(scores, y, n_classes: int = N_CLASSES) -> list[RocCurve]:
    """One-vs-rest ROC curve per class.

    Classes whose split has only positives or only negatives get
    ``defined=False`` and AUC NaN, with a ``SingleClassWarning``.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    y = np.asarray(y, dtype=int)
    out = []
    for c in range(n_classes):
        r = roc_curve(scores[:, c], y == c)
        if not r.defined:
            warnings.warn(f"class {c}: single-class split, AUC undefined", SingleClassWarning, stacklevel=2)
        out.append(r)
    return out


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return cm


@dataclass(frozen=True)
class ClassifierMetrics:
    """Out-of-sample metrics; rows of ``confusion`` are true labels.

    ``per_class_accuracy`` is the one-vs-rest accuracy (TP + TN) / total of
    each class; ``per_class_recall`` is TP / (TP + FN).
    """

    confusion: np.ndarray
    overall_accuracy: float
    per_class_accuracy: np.ndarray
    per_class_recall: np.ndarray
    precision: float
    recall: float
    f_score: float
    roc: tuple[RocCurve, ...]

    @property
    def auc(self) -> np.ndarray:
        return np.array([r.auc for r in self.roc])

    @property
    def macro_per_class_accuracy(self) -> float:
        return float(np.mean(self.per_class_accuracy))

    def to_rows(self) -> list[tuple[str, str, float]]:
        rows = [("overall", "accuracy", self.overall_accuracy),
                ("overall", "macro_per_class_accuracy", self.macro_per_class_accuracy),
                ("overall", "precision", self.precision),
                ("overall", "recall", self.recall),
                ("overall", "f_score", self.f_score)]
        for c in range(len(self.per_class_accuracy)):
            rows += [(f"L{c}", "accuracy", float(self.per_class_accuracy[c])),
                     (f"L{c}", "recall", float(self.per_class_recall[c])),
                     (f"L{c}", "auc", float(self.roc[c].auc))]
        return rows

    def summary(self) -> str:
        lines = [f"overall accuracy      {self.overall_accuracy:.4f}",
                 f"macro precision       {self.precision:.4f}",
                 f"macro recall          {self.recall:.4f}",
                 f"macro F-score         {self.f_score:.4f}",
                 "class  accuracy  recall    AUC"]
        for c in range(len(self.per_class_accuracy)):
            lines.append(f"L{c}     {self.per_class_accuracy[c]:.4f}    {self.per_class_recall[c]:.4f}    "
                         f"{self.roc[c].auc:.4f}")
        return "\n".join(lines)


def compute_metrics(y_true, scores, n_classes: int = N_CLASSES) -> ClassifierMetrics:
    y_true = np.asarray(y_true, dtype=int)
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    y_pred = np.argmax(scores, axis=1)  # first maximum wins: lower code on ties
    cm = confusion_matrix(y_true, y_pred, n_classes)
    total = cm.sum()
    tp = np.diag(cm).astype(float)
    support = cm.sum(axis=1).astype(float)
    predicted = cm.sum(axis=0).astype(float)
    tn = total - support - predicted + tp
    per_acc = (tp + tn) / total
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(support > 0, tp / support, np.nan)
        precision = np.where(predicted > 0, tp / predicted, 0.0)
    present = support > 0
    p = float(precision[present].mean())
    r = float(recall[present].mean())
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SingleClassWarning)
        roc = tuple(roc_auc(scores, y_true, n_classes))
    return ClassifierMetrics(cm, float(tp.sum() / total), per_acc, recall, p, r, f, roc)
