"""Artefact classifiers: one-vs-rest RBF-SVM and MLP."""

from __future__ import annotations

import numpy as np

from ..core import ArtefactLabel
from .cv import grid_search_svm, kfold_cv, mlp_trainer, stratified_folds, svm_trainer
from .data import (
    N_CLASSES,
    DimensionMismatch,
    DivergedLoss,
    LabeledDataset,
    NoConvergence,
    SingleClassWarning,
    Standardizer,
    TooFewSamples,
)
from .io import load_model, save_model
from .metrics import ClassifierMetrics, RocCurve, binary_auc, compute_metrics, confusion_matrix, roc_auc, roc_curve
from .mlp import MlpModel, train_mlp
from .svm import SvmModel, train_svm


def label_from_scores(scores) -> ArtefactLabel:
    """Argmax of the four class scores; ties go to the lower code."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (N_CLASSES,):
        raise DimensionMismatch(f"expected {N_CLASSES} scores")
    return ArtefactLabel(int(np.argmax(scores)))


def predict(model, x, scaler: Standardizer | None = None) -> tuple[ArtefactLabel, np.ndarray]:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch("predict takes a single feature vector")
    if scaler is not None:
        x = scaler.transform(x)
    s = model.scores(x[None, :])[0]
    return label_from_scores(s), s


__all__ = [
    "ClassifierMetrics", "DimensionMismatch", "DivergedLoss", "LabeledDataset", "MlpModel",
    "NoConvergence", "RocCurve", "SingleClassWarning", "Standardizer", "SvmModel", "TooFewSamples",
    "binary_auc", "compute_metrics", "confusion_matrix", "grid_search_svm", "kfold_cv",
    "label_from_scores", "load_model", "mlp_trainer", "predict", "roc_auc", "roc_curve",
    "save_model", "stratified_folds", "svm_trainer", "train_mlp", "train_svm",
]
