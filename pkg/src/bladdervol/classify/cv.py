"""Stratified k-fold cross-validation and a small hyper-parameter grid."""

from __future__ import annotations

import itertools
from typing import Callable, Protocol

import numpy as np

from .data import LabeledDataset, Standardizer, TooFewSamples
from .metrics import ClassifierMetrics, compute_metrics
from .mlp import train_mlp
from .svm import train_svm


class Scorer(Protocol):
    def scores(self, X) -> np.ndarray: ...


Trainer = Callable[[LabeledDataset, int], Scorer]


def svm_trainer(gamma: float = 0.1, C: float = 100.0) -> Trainer:
    return lambda ds, seed: train_svm(ds, gamma=gamma, C=C, seed=seed)


def mlp_trainer(epochs: int = 500, lr: float = 0.01, batch_size: int = 32, arch=None) -> Trainer:
    def fit(ds, seed):
        return train_mlp(ds, arch=arch, epochs=epochs, lr=lr, seed=seed, batch_size=batch_size)[0]

    return fit


def stratified_folds(y, k: int, seed: int = 0) -> np.ndarray:
    """Fold number per row; each class is dealt round-robin after shuffling.

    Classes with fewer than ``k`` members simply leave some folds without
    that class. The dealing continues across classes, so fold sizes differ
    by at most one.
    """
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    fold = np.empty(y.size, dtype=int)
    offset = 0
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        fold[idx] = (offset + np.arange(idx.size)) % k
        offset += idx.size
    return fold


def cross_val_scores(ds: LabeledDataset, k: int, trainer: Trainer, seed: int = 0) -> np.ndarray:
    """Out-of-fold class scores for every row."""
    if k < 2:
        raise TooFewSamples("k must be at least 2")
    if len(ds) < k:
        raise TooFewSamples(f"{len(ds)} samples cannot fill {k} folds")
    fold = stratified_folds(ds.y, k, seed)
    out = np.zeros((len(ds), 4))
    for f in range(k):
        test = fold == f
        train = ds.subset(~test)
        scaler = Standardizer.fit(train.X)
        model = trainer(train.standardized(scaler), seed + f)
        out[test] = model.scores(scaler.transform(ds.X[test]))
    return out


def kfold_cv(ds: LabeledDataset, k: int = 10, trainer: Trainer | None = None, seed: int = 0) -> ClassifierMetrics:
    """Pool out-of-fold predictions into one confusion matrix.

    Standardisation is refitted on each training fold only.
    """
    trainer = trainer or svm_trainer()
    scores = cross_val_scores(ds, k, trainer, seed)
    return compute_metrics(ds.y, scores)


SVM_GRID = {"gamma": (0.01, 0.1, 1.0), "C": (1.0, 10.0, 100.0)}


def grid_search_svm(ds: LabeledDataset, k: int = 10, seed: int = 0, grid=None):
    """Overall CV accuracy for every (gamma, C); returns (best, table)."""
    grid = grid or SVM_GRID
    table = []
    for gamma, C in itertools.product(grid["gamma"], grid["C"]):
        m = kfold_cv(ds, k, svm_trainer(gamma, C), seed)
        table.append(({"gamma": gamma, "C": C}, m.overall_accuracy))
    best = max(table, key=lambda row: row[1])[0]  # first best on ties
    return best, table
