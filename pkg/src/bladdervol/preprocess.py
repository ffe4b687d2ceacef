"""Windowing, robust LOWESS smoothing, calibration and z-scoring."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    SAMPLE_PERIOD,
    DegenerateWindow,
    EmptySession,
    PreconditionError,
    SessionRecording,
)

log = logging.getLogger(__name__)

MIN_SMOOTH_SAMPLES = 5
_EPS = 1e-9


@dataclass(frozen=True)
class Window:
    """One analysis window of a session.

    ``bi`` has shape (n,), ``se`` has shape (n, 4) and ``t`` holds the
    absolute sample times in seconds.
    """

    index: int
    t_start: float
    t_end: float
    t: np.ndarray
    bi: np.ndarray
    se: np.ndarray
    smoothed: bool = False
    normalized: bool = False

    @property
    def n(self) -> int:
        return self.t.size

    @property
    def t_center(self) -> float:
        return 0.5 * (self.t_start + self.t_end)

    @property
    def length(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class CalibrationState:
    """Baseline statistics of window 0.

    ``mu_c``/``sigma2_c`` are the mean and unbiased variance of the smoothed
    BI samples. ``noise_var_c`` is the variance of the raw BI samples about
    their least-squares line, the reference for the high-variance rule.
    """

    mu_c: float
    sigma2_c: float
    se_mu: tuple[float, ...]
    se_sigma2: tuple[float, ...]
    noise_var_c: float
    n: int


def segment_windows(
    rec: SessionRecording,
    window_len: float,
    min_samples: int | None = None,
    period: float = SAMPLE_PERIOD,
) -> list[Window]:
    """Cut a session into consecutive, non-overlapping windows.

    Windows are assigned by timestamp, so dropped samples shorten a window
    instead of shifting later ones. A trailing partial window is kept only
    when it is at least half full. Windows with fewer than ``min_samples``
    samples are rejected; by default that is 5, or the nominal sample count
    for windows too short to hold 5 samples.
    """
    if window_len <= 0:
        raise PreconditionError("window_len must be > 0")
    nominal = int(math.floor(window_len / period + _EPS))
    if min_samples is None:
        min_samples = max(1, min(MIN_SMOOTH_SAMPLES, nominal))
    duration = rec.duration
    n_full = int(math.floor(duration / window_len + _EPS))
    if n_full == 0:
        raise EmptySession(
            f"session of {duration:.1f} s holds no complete {window_len:g} s window"
        )
    remainder = duration - n_full * window_len
    n_win = n_full + (1 if remainder >= 0.5 * window_len - _EPS else 0)

    idx = np.floor(rec.t / window_len + _EPS).astype(int)
    bounds = np.searchsorted(idx, np.arange(n_win + 1), side="left")
    out = []
    for k in range(n_win):
        lo, hi = bounds[k], bounds[k + 1]
        if hi - lo < min_samples:
            log.warning("window %d rejected: %d samples < %d", k, hi - lo, min_samples)
            continue
        t_start = k * window_len
        t_end = min((k + 1) * window_len, duration)
        out.append(
            Window(k, t_start, t_end, rec.t[lo:hi], rec.bi[lo:hi], rec.se[lo:hi])
        )
    if not out:
        raise EmptySession("every window was rejected")
    return out


def lowess(x, y, frac: float = 0.3, iterations: int = 5) -> np.ndarray:
    """Robust locally weighted linear regression evaluated at ``x``.

    Each point gets a degree-1 weighted least-squares fit over its
    ``floor(frac * n)`` nearest neighbours (at least 5) with tricube
    distance weights. ``iterations`` rounds of bisquare reweighting on the
    residuals (scale 6 * median absolute residual) follow the first fit.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n < 2:
        return y.copy()
    # fit offsets from one sample so constant input comes back bit-exact
    c = y[0]
    y = y - c
    k = min(n, max(MIN_SMOOTH_SAMPLES, int(math.floor(frac * n + 1e-10))))

    u = x[None, :] - x[:, None]  # u[i, j] = x_j - x_i
    dist = np.abs(u)
    h = np.sort(dist, axis=1)[:, k - 1]
    h = np.where(h > 0, h, 1.0)
    w = np.clip(dist / h[:, None], 0.0, 1.0)
    w = (1.0 - w**3) ** 3

    robust = np.ones(n)
    scale = 1.0 + np.max(np.abs(y)) + abs(c)
    first = None
    for it in range(iterations + 1):
        wr = w * robust[None, :]
        s0 = wr.sum(axis=1)
        s1 = (wr * u).sum(axis=1)
        s2 = (wr * u * u).sum(axis=1)
        t0 = wr @ y
        t1 = (wr * u) @ y
        has = s0 > 0
        s0_safe = np.where(has, s0, 1.0)
        det = s0 * s2 - s1 * s1
        ok = has & (np.abs(det) > 1e-12 * np.maximum(s0 * s2, 1e-300))
        slope = np.where(ok, (s0 * t1 - s1 * t0) / np.where(ok, det, 1.0), 0.0)
        yhat = t0 / s0_safe - slope * s1 / s0_safe
        if first is None:
            first = yhat
        else:
            # every neighbour rejected: keep the plain local fit
            yhat = np.where(has, yhat, first)
        if it == iterations:
            break
        resid = np.abs(y - yhat)
        if resid.max() <= 1e-12 * scale:
            break
        # floor keeps the scale usable when most residuals are exactly zero
        s = max(np.median(resid), 0.1 * resid.mean())
        r = np.clip(resid / (6.0 * s), 0.0, 1.0)
        robust = (1.0 - r**2) ** 2
    return yhat + c


def smooth_window(w: Window, span_frac: float = 0.3, robust_iters: int = 5) -> Window:
    """Apply robust LOWESS to every channel of a window; timestamps kept."""
    if not (0 < span_frac <= 1):
        raise PreconditionError("span_frac must lie in (0, 1]")
    if robust_iters < 0:
        raise PreconditionError("robust_iters must be >= 0")
    if w.n < MIN_SMOOTH_SAMPLES:
        raise DegenerateWindow(f"window {w.index} has {w.n} samples, need {MIN_SMOOTH_SAMPLES}")
    x = w.t - w.t_start
    bi = lowess(x, w.bi, span_frac, robust_iters)
    se = np.column_stack([lowess(x, w.se[:, c], span_frac, robust_iters) for c in range(w.se.shape[1])])
    return replace(w, bi=bi, se=se, smoothed=True)


def detrended_var(t, y) -> float:
    """Unbiased variance of ``y`` about its least-squares line in ``t``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    if n < 3:
        return float(np.var(y, ddof=1)) if n > 1 else 0.0
    tc = t - t.mean()
    sxx = tc @ tc
    slope = (tc @ y) / sxx if sxx > 0 else 0.0
    resid = y - y.mean() - slope * tc
    return float(resid @ resid / (n - 2))


def calibrate(first: Window, raw: Window | None = None) -> CalibrationState:
    """Baseline mean and variance from window 0.

    ``first`` is normally the smoothed window; ``raw`` (the same window
    before smoothing) supplies the noise reference and defaults to ``first``.
    """
    if first.index != 0:
        raise PreconditionError(f"calibration needs window 0, got window {first.index}")
    if first.n < 2:
        raise DegenerateWindow("calibration window needs at least 2 samples")
    raw = first if raw is None else raw
    return CalibrationState(
        mu_c=float(np.mean(first.bi)),
        sigma2_c=float(np.var(first.bi, ddof=1)),
        se_mu=tuple(float(v) for v in first.se.mean(axis=0)),
        se_sigma2=tuple(float(v) for v in first.se.var(axis=0, ddof=1)),
        noise_var_c=detrended_var(raw.t, raw.bi),
        n=first.n,
    )


def _zscore(x, mu, var, inverse=False):
    sd = math.sqrt(var)
    return x * sd + mu if inverse else (x - mu) / sd


def normalize(w: Window, cal: CalibrationState) -> Window:
    """Z-score every channel against the calibration baseline.

    A zero calibration variance makes the z-score undefined; the window is
    then returned unchanged with ``normalized=False``.
    """
    if w.normalized:
        return w
    if cal.sigma2_c <= 0 or any(v <= 0 for v in cal.se_sigma2):
        log.warning("zero calibration variance; window %d left in ohms", w.index)
        return w
    bi = _zscore(w.bi, cal.mu_c, cal.sigma2_c)
    se = np.column_stack(
        [_zscore(w.se[:, c], cal.se_mu[c], cal.se_sigma2[c]) for c in range(w.se.shape[1])]
    )
    return replace(w, bi=bi, se=se, normalized=True)


def denormalize(w: Window, cal: CalibrationState) -> Window:
    if not w.normalized:
        return w
    bi = _zscore(w.bi, cal.mu_c, cal.sigma2_c, inverse=True)
    se = np.column_stack(
        [_zscore(w.se[:, c], cal.se_mu[c], cal.se_sigma2[c], inverse=True) for c in range(w.se.shape[1])]
    )
    return replace(w, bi=bi, se=se, normalized=False)
