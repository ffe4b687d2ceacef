"""Context-gated Kalman suppression of artefacts and BI-to-volume conversion.

The state is the BI level and its rate of change per window. Clean windows
hand their increment straight to the volume stage; windows flagged as
artefacts get an inflated measurement uncertainty, so the estimate leans on
the predicted trend instead of the corrupted measurement.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    DELTA_BAND,
    ArtefactLabel,
    BladderVolError,
    MeasurementContext,
    PreconditionError,
    SchemaError,
    SessionRecording,
)
from .features import WindowFeatures, extract_features, threshold_label
from .preprocess import (
    MIN_SMOOTH_SAMPLES,
    CalibrationState,
    Window,
    calibrate,
    segment_windows,
    smooth_window,
)

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-12
GAMMA_BI0 = 100.0
ARTEFACT_INFLATION = 10.0


class InvalidCalibration(BladderVolError):
    pass


class NumericalDegenerate(BladderVolError, ArithmeticError):
    pass


class OutOfOrderWindow(BladderVolError):
    pass


class LabelMismatch(PreconditionError):
    pass


_ARTEFACTS = {
    MeasurementContext.FILLING: frozenset({ArtefactLabel.L0, ArtefactLabel.L1, ArtefactLabel.L2}),
    MeasurementContext.VOIDING: frozenset({ArtefactLabel.L0, ArtefactLabel.L1, ArtefactLabel.L3}),
}


def is_artefact(label: ArtefactLabel, ctx: MeasurementContext) -> bool:
    """Filling expects BI to fall (L3), voiding expects it to rise (L2)."""
    return ArtefactLabel(label) in _ARTEFACTS[MeasurementContext.parse(ctx)]


@dataclass(frozen=True)
class SensitivityModel:
    """Ohms of BI change per ml of bladder volume change."""

    delta: float

    def __post_init__(self):
        lo, hi = DELTA_BAND
        if not (lo < self.delta < hi):
            raise PreconditionError(f"delta {self.delta} outside ({lo}, {hi}) ohm/ml")

    def volume_change(self, d_bi: float, ctx: MeasurementContext) -> float:
        """Filling: ml added (BI falls). Voiding: ml voided (BI rises)."""
        sign = -1.0 if MeasurementContext.parse(ctx) is MeasurementContext.FILLING else 1.0
        return sign * d_bi / self.delta


@dataclass(frozen=True)
class FilterState:
    bi_hat: float
    bi_rate_hat: float  # ohms per window
    gamma_bi: float
    gamma_rate: float
    bi_hat_pred: float
    bi_rate_pred: float
    last_gain: tuple[float, float] = (0.0, 0.0)
    dt: float = 30.0
    noise_floor: float = 0.0
    last_z: float | None = None
    window_index: int = -1


def init_filter(
    cal: CalibrationState,
    sens: SensitivityModel,
    ctx: MeasurementContext,
    dt: float,
    v_rate0: float = 1.0,
    q0: float = 20.0,
    v_rate_sd: float | None = None,
    gamma_bi0: float = GAMMA_BI0,
) -> FilterState:
    """Initial state: level at the calibration mean, rate from an assumed flow.

    ``v_rate0`` (ml/min) sets the filling rate, ``q0`` (ml/s) the voiding
    flow. The rate variance is the squared initial rate unless ``v_rate_sd``
    gives a standard deviation in the same volume units.
    """
    ctx = MeasurementContext.parse(ctx)
    if dt <= 0:
        raise PreconditionError("dt must be > 0")
    if not math.isfinite(cal.sigma2_c) or cal.sigma2_c < 0 or not math.isfinite(cal.mu_c):
        raise InvalidCalibration(f"calibration variance {cal.sigma2_c!r} is unusable")
    if ctx is MeasurementContext.FILLING:
        if v_rate0 <= 0:
            raise PreconditionError("v_rate0 must be > 0")
        per_window = sens.delta * (dt / 60.0)
        rate = -per_window * v_rate0
    else:
        if q0 <= 0:
            raise PreconditionError("q0 must be > 0")
        per_window = sens.delta * dt
        rate = per_window * q0
    gamma_rate = rate**2 if v_rate_sd is None else (per_window * v_rate_sd) ** 2
    return FilterState(
        bi_hat=cal.mu_c,
        bi_rate_hat=rate,
        gamma_bi=gamma_bi0,
        gamma_rate=gamma_rate,
        bi_hat_pred=cal.mu_c,
        bi_rate_pred=rate,
        dt=dt,
        noise_floor=cal.sigma2_c,
    )


def _gain(prior: float, meas: float) -> float:
    denom = prior + meas
    if not denom > 0:
        raise NumericalDegenerate("both uncertainties are zero")
    return prior / denom


def kalman_update(
    s: FilterState,
    z: float,
    gamma_meas: float,
    z_rate: float | None = None,
    gamma_rate_meas: float | None = None,
) -> FilterState:
    """Measurement update of level and rate.

    The rate measurement defaults to the difference between ``z`` and the
    previous level estimate, with twice the level measurement variance.
    """
    if gamma_meas < 0:
        raise PreconditionError("gamma_meas must be >= 0")
    if z_rate is None:
        z_rate = z - s.bi_hat
    if gamma_rate_meas is None:
        gamma_rate_meas = 2.0 * gamma_meas
    g = _gain(s.gamma_bi, gamma_meas)
    g_rate = _gain(s.gamma_rate, gamma_rate_meas)
    return replace(
        s,
        bi_hat=s.bi_hat_pred + g * (z - s.bi_hat_pred),
        bi_rate_hat=s.bi_rate_pred + g_rate * (z_rate - s.bi_rate_pred),
        gamma_bi=s.gamma_bi * (1.0 - g),
        gamma_rate=s.gamma_rate * (1.0 - g_rate),
        last_gain=(g, g_rate),
    )


def kalman_predict(s: FilterState) -> FilterState:
    # one window ahead; the rate is already expressed per window
    return replace(
        s,
        bi_hat_pred=s.bi_hat + s.bi_rate_hat,
        bi_rate_pred=s.bi_rate_hat,
        gamma_bi=s.gamma_bi + s.gamma_rate,
    )


@dataclass(frozen=True)
class StepResult:
    window_index: int
    t_s: float
    label: ArtefactLabel
    artefact: bool
    bi_hat: float
    d_bi: float
    d_v: float
    v_cum: float
    v_raw: float = field(default=0.0, repr=False)  # running sum before clamping


def step(
    s: FilterState,
    window_mean: float,
    window_var: float,
    label: ArtefactLabel,
    ctx: MeasurementContext,
    sens: SensitivityModel,
    prev: StepResult | None = None,
    *,
    window_index: int | None = None,
    t_s: float = float("nan"),
    gating: bool = True,
    inflation: float = ARTEFACT_INFLATION,
) -> tuple[FilterState, StepResult]:
    """Consume one window and return the new state and its volume step.

    The measurement enters as an increment on the previous estimate,
    ``z = bi_hat(i-1) + (mean(i) - mean(i-1))``, so an offset left behind by
    an artefact is not fed back once the signal is clean again. Clean
    windows take that measurement as is (gain 1) while the rate is still
    filtered; artefact windows use uncertainty ``max(window_var, 10 sigma^2)``.
    """
    ctx = MeasurementContext.parse(ctx)
    label = ArtefactLabel(label)
    idx = s.window_index + 1 if window_index is None else int(window_index)
    if idx <= s.window_index:
        raise OutOfOrderWindow(f"window {idx} after window {s.window_index}")
    artefact = is_artefact(label, ctx)

    if prev is None:
        # first window: defines the reference level, no volume yet
        s = replace(s, last_z=window_mean, window_index=idx)
        s = kalman_predict(s)
        return s, StepResult(idx, t_s, label, artefact, s.bi_hat, 0.0, 0.0, 0.0, 0.0)

    for _ in range(idx - s.window_index - 1):
        s = kalman_predict(s)  # windows lost to segmentation
    floor = max(s.noise_floor, VAR_FLOOR)
    dz = window_mean - s.last_z
    z = s.bi_hat + dz
    if artefact and gating:
        gamma_meas = max(window_var, inflation * floor)
        s_new = kalman_update(s, z, gamma_meas, dz, 2.0 * gamma_meas)
    else:
        rated = kalman_update(s, z, floor, dz, 2.0 * floor)
        s_new = replace(rated, bi_hat=z, gamma_bi=floor, last_gain=(1.0, rated.last_gain[1]))
    d_bi = s_new.bi_hat - s.bi_hat
    d_v = sens.volume_change(d_bi, ctx)
    v_raw = prev.v_raw + d_v
    if v_raw < 0:
        log.debug("window %d: volume %.3f ml clamped to 0", idx, v_raw)
    s_new = kalman_predict(replace(s_new, last_z=window_mean, window_index=idx))
    return s_new, StepResult(idx, t_s, label, artefact, s_new.bi_hat, d_bi, d_v, max(v_raw, 0.0), v_raw)


def session_volume(steps: Sequence[StepResult]) -> float:
    """Volume change over the whole recording.

    ``v_cum`` runs from the centre of the first window to the centre of the
    last one; half of the first and of the last volume step extend it to
    the recording edges.
    """
    if len(steps) < 2:
        return 0.0
    return max(steps[-1].v_raw + 0.5 * (steps[1].d_v + steps[-1].d_v), 0.0)


# ------------------------------------------------------------------ full pipeline


@dataclass(frozen=True)
class EstimatorConfig:
    window_len: float | None = None  # None: the session's own setting
    span: float = 0.3
    robust_iters: int = 5
    gating: bool = True
    v_rate0: float = 1.0
    v_rate_sd: float | None = 60.0
    q0: float = 20.0
    q_sd: float | None = None
    inflation: float = ARTEFACT_INFLATION
    gamma_bi0: float = GAMMA_BI0


@dataclass
class SessionAnalysis:
    windows: list[Window]
    cal: CalibrationState
    features: list[WindowFeatures]
    labels: list[ArtefactLabel]
    steps: list[StepResult]

    @property
    def final_volume(self) -> float:
        return self.steps[-1].v_cum

    @property
    def total_volume(self) -> float:
        return session_volume(self.steps)


def prepare_windows(rec: SessionRecording, cfg: EstimatorConfig = EstimatorConfig()):
    """Segment, smooth and calibrate; returns (raw, smoothed, cal, features)."""
    L = cfg.window_len or rec.meta.window_len
    raw = segment_windows(rec, L)
    if raw[0].index != 0:
        raise PreconditionError("window 0 was rejected; no calibration baseline")
    smooth = []
    for w in raw:
        if w.n >= MIN_SMOOTH_SAMPLES:
            smooth.append(smooth_window(w, cfg.span, cfg.robust_iters))
        else:
            smooth.append(w)  # too short for a local fit
    cal = calibrate(smooth[0], raw[0])
    feats, prev = [], None
    for w in smooth:
        f = extract_features(w, prev, cal)
        feats.append(f)
        prev = f.means
    return raw, smooth, cal, feats


def rule_labels(raw, feats, cal) -> list[ArtefactLabel]:
    out, prev = [], None
    for w, f in zip(raw, feats):
        out.append(threshold_label(w, f.bi.mean, prev, cal))
        prev = f.bi.mean
    return out


def model_labels(model, feats, feature_set=None, scaler=None) -> list[ArtefactLabel]:
    X = np.array([f.as_vector() for f in feats])
    if feature_set is not None:
        X = feature_set.project(X)
    if scaler is not None:
        X = scaler.transform(X)
    return [ArtefactLabel(int(k)) for k in np.argmax(model.scores(X), axis=1)]


def analyse_session(
    rec: SessionRecording,
    labels: Sequence[int] | None = None,
    model=None,
    sens: SensitivityModel | None = None,
    ctx: MeasurementContext | None = None,
    cfg: EstimatorConfig = EstimatorConfig(),
    feature_set=None,
    scaler=None,
) -> SessionAnalysis:
    """Every stage of the pipeline for one session.

    Labels come from ``labels`` (one per window), else from ``model``, else
    from the fixed threshold rule.
    """
    ctx = MeasurementContext.parse(ctx or rec.meta.context)
    sens = sens or SensitivityModel(rec.meta.delta)
    raw, smooth, cal, feats = prepare_windows(rec, cfg)
    if labels is not None:
        if len(labels) != len(smooth):
            raise LabelMismatch(f"{len(labels)} labels for {len(smooth)} windows")
        labs = [ArtefactLabel(int(v)) for v in labels]
    elif model is not None:
        labs = model_labels(model, feats, feature_set, scaler)
    else:
        labs = rule_labels(raw, feats, cal)

    dt = smooth[0].length
    if ctx is MeasurementContext.FILLING:
        s = init_filter(cal, sens, ctx, dt, v_rate0=cfg.v_rate0, v_rate_sd=cfg.v_rate_sd, gamma_bi0=cfg.gamma_bi0)
    else:
        s = init_filter(cal, sens, ctx, dt, q0=cfg.q0, v_rate_sd=cfg.q_sd, gamma_bi0=cfg.gamma_bi0)
    steps: list[StepResult] = []
    prev = None
    for w, lab in zip(smooth, labs):
        var = float(np.var(w.bi, ddof=1)) if w.n > 1 else 0.0
        s, r = step(
            s, float(w.bi.mean()), var, lab, ctx, sens, prev,
            window_index=w.index, t_s=w.t_center, gating=cfg.gating, inflation=cfg.inflation,
        )
        steps.append(r)
        prev = r
    return SessionAnalysis(smooth, cal, feats, labs, steps)


def run_session(rec, labels=None, model=None, sens=None, ctx=None, cfg: EstimatorConfig = EstimatorConfig(),
                **kw) -> list[StepResult]:
    return analyse_session(rec, labels, model, sens, ctx, cfg, **kw).steps


# ---------------------------------------------------------------------- CSV

STEP_HEADER = ["window", "t_s", "label", "artefact", "bi_hat_ohm", "d_bi_ohm", "d_v_ml", "v_ml"]


def write_steps(path, steps: Sequence[StepResult]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_HEADER)
        for r in steps:
            w.writerow([r.window_index, repr(float(r.t_s)), int(r.label), int(r.artefact),
                        repr(r.bi_hat), repr(r.d_bi), repr(r.d_v), repr(r.v_cum)])


def read_steps(path) -> list[StepResult]:
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != STEP_HEADER:
            raise SchemaError(f"{path}: expected header {','.join(STEP_HEADER)}")
        raw_sum = 0.0
        for lineno, row in enumerate(reader, start=2):
            try:
                d_v = float(row[6])
                raw_sum = 0.0 if not out else raw_sum + d_v
                out.append(StepResult(int(row[0]), float(row[1]), ArtefactLabel(int(row[2])), bool(int(row[3])),
                                      float(row[4]), float(row[5]), d_v, float(row[7]), raw_sum))
            except (ValueError, IndexError) as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return out
