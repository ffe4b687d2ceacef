"""Per-window descriptive features, feature ranking and feature sets."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import ArtefactLabel, BladderVolError, DegenerateWindow, SchemaError
from .preprocess import CalibrationState, Window, detrended_var

FEATURES = (
    "mean",
    "std",
    "min",
    "max",
    "peak_to_peak",
    "energy",
    "entropy",
    "grad_mean",
    "drift_flag",
    "slope",
    "intercept",
)
CHANNELS = ("bi", "se1", "se2", "se3", "se4")
FEATURE_NAMES = tuple(f"{c}.{f}" for c in CHANNELS for f in FEATURES)
N_FEATURES = len(FEATURE_NAMES)
ENTROPY_BINS = 16
DRIFT_SIGMAS = 3.0
HIGH_VARIANCE_RATIO = 2.5


class DegenerateData(BladderVolError):
    pass


class DegenerateDataWarning(UserWarning):
    pass


class UnknownFeatureSet(BladderVolError, KeyError):
    def __str__(self):  # KeyError would quote the message
        return str(self.args[0]) if self.args else ""



@dataclass(frozen=True)
class FeatureRecord:
    mean: float
    std: float
    min: float
    max: float
    peak_to_peak: float
    energy: float
    entropy: float
    grad_mean: float
    drift_flag: int
    slope: float
    intercept: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


assert tuple(f.name for f in fields(FeatureRecord)) == FEATURES


@dataclass(frozen=True)
class WindowFeatures:
    window_index: int
    bi: FeatureRecord
    se: tuple[FeatureRecord, ...]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.bi.as_array(), *(r.as_array() for r in self.se)])

    @property
    def means(self) -> tuple[float, ...]:
        return (self.bi.mean, *(r.mean for r in self.se))


def shannon_entropy(values, bins: int = ENTROPY_BINS) -> float:
    """Entropy in bits of an equal-width histogram spanning [min, max]."""
    values = np.asarray(values, dtype=float)
    lo, hi = values.min(), values.max()
    if hi <= lo:
        return 0.0
    # explicit binning: np.histogram refuses ranges only a few ulps wide
    idx = np.minimum(((values - lo) / (hi - lo) * bins).astype(int), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    p = counts[counts > 0] / values.size
    return float(-(p * np.log2(p)).sum())


def linear_fit(x, y) -> tuple[float, float]:
    """Ordinary least squares ``y ~ intercept + slope * x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xm = x.mean()
    sxx = ((x - xm) ** 2).sum()
    if sxx == 0:
        return 0.0, float(y.mean())
    slope = float(((x - xm) * (y - y.mean())).sum() / sxx)
    return slope, float(y.mean() - slope * xm)


def drift_flag(curr_mean: float, prev_mean: float, sigma2_c: float | CalibrationState, n: int) -> int:
    """+1/-1 when the mean moved by more than 3 standard errors, else 0.

    The standard error is that of a mean of ``n`` samples with the
    calibration variance.
    """
    if isinstance(sigma2_c, CalibrationState):
        sigma2_c = sigma2_c.sigma2_c
    if n < 1:
        raise ValueError("n must be >= 1")
    thr = DRIFT_SIGMAS * math.sqrt(max(sigma2_c, 0.0) / n)
    d = curr_mean - prev_mean
    if d > thr:
        return 1
    if d < -thr:
        return -1
    return 0


def channel_features(t, values, t_start: float, prev_mean: float | None, sigma2_c: float) -> FeatureRecord:
    values = np.asarray(values, dtype=float)
    n = values.size
    mean = float(values.mean())
    lo, hi = float(values.min()), float(values.max())
    slope, intercept = linear_fit(np.asarray(t) - t_start, values)
    if prev_mean is None:
        grad, flag = 0.0, 0
    else:
        grad = mean - prev_mean
        flag = drift_flag(mean, prev_mean, sigma2_c, n)
    return FeatureRecord(
        mean=mean,
        std=float(values.std(ddof=1)) if n > 1 else 0.0,
        min=lo,
        max=hi,
        peak_to_peak=hi - lo,
        energy=float(values @ values),
        entropy=shannon_entropy(values),
        grad_mean=grad,
        drift_flag=flag,
        slope=slope,
        intercept=intercept,
    )


def extract_features(
    w: Window,
    prev_mean: float | Sequence[float] | None,
    cal: CalibrationState,
) -> WindowFeatures:
    """Eleven features for the BI channel and for each SE channel.

    ``prev_mean`` is the previous window's mean for every channel
    (BI first, then SE1..SE4). A bare float is taken as the BI mean only;
    the SE gradients and drift flags are then 0.
    """
    if w.n < 1:
        raise DegenerateWindow(f"window {w.index} is empty")
    if prev_mean is None:
        prev = [None] * len(CHANNELS)
    elif np.ndim(prev_mean) == 0:
        prev = [float(prev_mean)] + [None] * (len(CHANNELS) - 1)
    else:
        prev = [float(p) for p in prev_mean]
        if len(prev) != len(CHANNELS):
            raise ValueError(f"prev_mean needs {len(CHANNELS)} entries")
    bi = channel_features(w.t, w.bi, w.t_start, prev[0], cal.sigma2_c)
    se = tuple(
        channel_features(w.t, w.se[:, c], w.t_start, prev[c + 1], cal.se_sigma2[c])
        for c in range(w.se.shape[1])
    )
    return WindowFeatures(w.index, bi, se)


def threshold_label(
    raw: Window,
    curr_mean: float,
    prev_mean: float | None,
    cal: CalibrationState,
) -> ArtefactLabel:
    """Label a window by the fixed thresholds the classifiers learn.

    High-variance noise when the raw BI variance about its linear trend
    exceeds 2.5 times that of the calibration window; otherwise the drift
    flag of the (smoothed) window mean decides between L2, L3 and L0.
    """
    noise = detrended_var(raw.t, raw.bi)
    if raw.n >= 3 and noise > HIGH_VARIANCE_RATIO * cal.noise_var_c + 1e-12:
        return ArtefactLabel.L1
    if prev_mean is None:
        return ArtefactLabel.L0
    flag = drift_flag(curr_mean, prev_mean, cal.sigma2_c, raw.n)
    return {1: ArtefactLabel.L2, -1: ArtefactLabel.L3}.get(flag, ArtefactLabel.L0)


# ------------------------------------------------------------------ feature sets


@dataclass(frozen=True)
class FeatureSet:
    id: int
    indices: tuple[int, ...]
    description: str

    @property
    def names(self) -> list[str]:
        return [FEATURE_NAMES[i] for i in self.indices]

    def project(self, X) -> np.ndarray:
        return np.asarray(X)[:, list(self.indices)]


def _ix(*names: str) -> tuple[int, ...]:
    return tuple(FEATURE_NAMES.index(n) for n in names)


_RFE_BI = (
    "bi.std",
    "bi.entropy",
    "bi.grad_mean",
    "bi.min",
    "bi.max",
    "bi.peak_to_peak",
    "bi.slope",
    "bi.drift_flag",
)
_MRMR_BI = (
    "bi.drift_flag",
    "bi.slope",
    "bi.intercept",
    "bi.grad_mean",
    "bi.std",
    "bi.energy",
    "bi.max",
    "bi.entropy",
    "bi.min",
    "bi.peak_to_peak",
    "bi.mean",
)

FEATURE_SETS = {
    1: FeatureSet(1, _ix(*_RFE_BI), "Highest ranked BI features with RFE"),
    2: FeatureSet(2, _ix(*_MRMR_BI), "Highest ranked BI features with MRMR"),
    3: FeatureSet(
        3,
        _ix(*_RFE_BI, "se1.mean", "se1.energy", "se2.mean", "se3.mean", "se3.energy", "se4.mean"),
        "BI and all SE features ranked highest by RFE",
    ),
    4: FeatureSet(
        4,
        _ix(*_RFE_BI, "se1.mean", "se2.mean", "se3.mean", "se4.mean"),
        "BI and all SE mean features ranked highest by RFE",
    ),
    5: FeatureSet(
        5,
        _ix(*_RFE_BI, "se1.energy", "se3.energy"),
        "BI and all SE energy features ranked highest by RFE",
    ),
}


def feature_set(id: int) -> FeatureSet:
    try:
        return FEATURE_SETS[int(id)]
    except (KeyError, ValueError, TypeError):
        raise UnknownFeatureSet(f"unknown feature set {id!r}; valid ids are 1-5") from None


# ----------------------------------------------------------------------- ranking


def quantile_bins(x, n_bins: int = 8) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    edges = np.quantile(x, np.linspace(0, 1, n_bins + 1)[1:-1])
    return np.searchsorted(np.unique(edges), x, side="right")


def mutual_information(a, b) -> float:
    """Plug-in mutual information (bits) of two discrete sequences."""
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(joint, (ai, bi), 1.0)
    joint /= joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float((joint[nz] * np.log2(joint[nz] / (pa @ pb)[nz])).sum())


def _check_xy(X, y, min_rows=10):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n_rows, n_features) with one label per row")
    if X.shape[0] < min_rows:
        raise DegenerateData(f"need at least {min_rows} rows, got {X.shape[0]}")
    if np.unique(y).size < 2:
        raise DegenerateData("need at least two classes")
    return X, y


def rank_features_mrmr(X, y, n_bins: int = 8) -> list[int]:
    """Greedy minimum-redundancy maximum-relevance ordering.

    Features are discretised into ``n_bins`` quantile bins. The first pick
    maximises I(f; y); each later pick maximises I(f; y) minus the mean
    I(f; s) over the already selected features s. Ties go to the lower
    index. Constant features carry no information and are appended last.
    """
    X, y = _check_xy(X, y)
    n_feat = X.shape[1]
    const = [j for j in range(n_feat) if np.ptp(X[:, j]) == 0]
    if const:
        warnings.warn(f"constant features ranked last: {const}", DegenerateDataWarning, stacklevel=2)
    cand = [j for j in range(n_feat) if j not in const]
    binned = {j: quantile_bins(X[:, j], n_bins) for j in cand}
    relevance = {j: mutual_information(binned[j], y) for j in cand}
    redundancy = {j: 0.0 for j in cand}
    order: list[int] = []
    while cand:
        if order:
            scores = [relevance[j] - redundancy[j] / len(order) for j in cand]
        else:
            scores = [relevance[j] for j in cand]
        best = cand[int(np.argmax(scores))]
        order.append(best)
        cand.remove(best)
        for j in cand:
            redundancy[j] += mutual_information(binned[j], binned[best])
    return order + const


def linear_svm_importance(X, y, C: float = 1.0, seed: int = 0) -> np.ndarray:
    """Squared linear-SVM weights summed over the one-vs-rest machines."""
    from .classify.svm import train_binary_svm

    classes = np.unique(y)
    targets = [classes[-1]] if classes.size == 2 else list(classes)
    imp = np.zeros(X.shape[1])
    for c in targets:
        yy = np.where(y == c, 1.0, -1.0)
        m = train_binary_svm(X, yy, C=C, kernel="linear", seed=seed)
        imp += m.linear_weights() ** 2
    return imp


def rank_features_rfe(
    X,
    y,
    trainer: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
) -> list[int]:
    """Recursive feature elimination, most important feature first.

    ``trainer(X, y)`` returns one non-negative importance per column of the
    reduced matrix; the default is a linear SVM with C=1 on standardised
    columns. Each round drops the least important feature (lowest index on
    ties) and the ranking is the elimination order reversed.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n_rows, n_features) with one label per row")
    if trainer is None:
        sd = X.std(axis=0)
        X = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
        trainer = linear_svm_importance
    remaining = list(range(X.shape[1]))
    eliminated: list[int] = []
    while len(remaining) > 1:
        imp = np.asarray(trainer(X[:, remaining], y), dtype=float)
        if imp.shape != (len(remaining),):
            raise ValueError("trainer must return one importance per feature")
        eliminated.append(remaining.pop(int(np.argmin(imp))))
    return remaining + eliminated[::-1]


# ------------------------------------------------------------------- CSV format


def write_feature_csv(path, rows: Sequence[WindowFeatures], labels: Sequence[int] | None = None) -> None:
    header = ["window", *FEATURE_NAMES]
    if labels is not None:
        header.append("label")
        if len(labels) != len(rows):
            raise ValueError("one label per feature row required")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, row in enumerate(rows):
            line = [row.window_index, *(repr(float(v)) for v in row.as_vector())]
            if labels is not None:
                line.append(int(labels[k]))
            w.writerow(line)


def write_feature_matrix(path, X, labels=None, windows=None) -> None:
    X = np.asarray(X, dtype=float)
    if X.shape[1] != N_FEATURES:
        raise ValueError(f"feature matrix needs {N_FEATURES} columns")
    windows = range(X.shape[0]) if windows is None else windows
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", *FEATURE_NAMES, *(["label"] if labels is not None else [])])
        for k, (win, row) in enumerate(zip(windows, X)):
            line = [int(win), *(repr(float(v)) for v in row)]
            if labels is not None:
                line.append(int(labels[k]))
            w.writerow(line)


def read_feature_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Return (window indices, X with 55 columns, labels or None)."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "window" or tuple(header[1 : 1 + N_FEATURES]) != FEATURE_NAMES:
            raise SchemaError(f"{path}: expected header window,<{N_FEATURES} channel.feature columns>[,label]")
        labelled = len(header) == N_FEATURES + 2 and header[-1] == "label"
        if len(header) not in (N_FEATURES + 1, N_FEATURES + 2) or (len(header) == N_FEATURES + 2 and not labelled):
            raise SchemaError(f"{path}: unexpected trailing columns")
        win, X, y = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} columns")
            try:
                win.append(int(row[0]))
                X.append([float(v) for v in row[1 : 1 + N_FEATURES]])
                if labelled:
                    y.append(int(row[-1]))
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    if not X:
        raise SchemaError(f"{path}: no rows")
    return np.array(win), np.array(X), (np.array(y) if labelled else None)
