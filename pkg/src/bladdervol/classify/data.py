"""Datasets, standardisation and the errors shared by the classifiers."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..core import BladderVolError, PreconditionError

N_CLASSES = 4


class DimensionMismatch(BladderVolError, ValueError):
    pass


class TooFewSamples(BladderVolError):
    pass


class NoConvergence(BladderVolError):
    pass


class DivergedLoss(BladderVolError):
    pass


class SingleClassWarning(UserWarning):
    """A one-vs-rest split had only one class, so its AUC is undefined."""


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        sd = X.std(axis=0)
        # constant columns are centred but not scaled
        return cls(X.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.mean.size:
            raise DimensionMismatch(f"expected {self.mean.size} features, got {X.shape[-1]}")
        return (X - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


@dataclass(frozen=True)
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    feature_set: int | None = None
    standardization: Standardizer | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y).astype(int)
        if X.ndim != 2:
            raise PreconditionError("X must be two-dimensional")
        if X.shape[0] != y.shape[0]:
            raise PreconditionError(f"{X.shape[0]} rows but {y.shape[0]} labels")
        if not np.isfinite(X).all():
            raise PreconditionError("non-finite feature values")
        if y.size and (y.min() < 0 or y.max() >= N_CLASSES):
            raise PreconditionError(f"labels must be codes 0..{N_CLASSES - 1}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.y.size

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.X[idx], self.y[idx], self.feature_set, self.standardization)

    def standardized(self, scaler: Standardizer | None = None) -> "LabeledDataset":
        """Copy with standardised X; the fitted constants travel along."""
        scaler = scaler or Standardizer.fit(self.X)
        return replace(self, X=scaler.transform(self.X), standardization=scaler)


def one_hot(y, n_classes: int = N_CLASSES) -> np.ndarray:
    y = np.asarray(y, dtype=int)
    out = np.zeros((y.size, n_classes))
    out[np.arange(y.size), y] = 1.0
    return out


def check_classes(y, minimum: int = 2) -> np.ndarray:
    classes = np.unique(y)
    if classes.size < minimum:
        raise PreconditionError(f"need at least {minimum} classes, got {classes.size}")
    return classes
