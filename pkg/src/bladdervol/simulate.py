"""Synthetic filling and voiding sessions with known volume and labels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .core import (
    N_SE,
    SAMPLE_PERIOD,
    ArtefactLabel,
    BladderVolError,
    MeasurementContext,
    PreconditionError,
    SessionMeta,
    SessionRecording,
    VolumeTrace,
)
from .features import HIGH_VARIANCE_RATIO, drift_flag
from .preprocess import segment_windows

SE_BASELINE = (100.0, 2000.0)
SE_COUPLING = (0.5, 2.0)
# a window counts as high-variance only if the noisy span covers this much of it
HV_MIN_COVERAGE = 0.5
DEFAULT_NOISE_SD = 0.2


class OverlappingSpans(BladderVolError):
    pass


class ArtefactKind(str, Enum):
    HIGH_VARIANCE = "high_variance"
    POSITIVE_DRIFT = "positive_drift"
    NEGATIVE_DRIFT = "negative_drift"


@dataclass(frozen=True)
class Confounder:
    """BI ramp that starts once the bladder holds ``onset_ml``."""

    onset_ml: float
    drift_ohm_per_min: float


@dataclass(frozen=True)
class FillingProfile:
    """Infusion at ``rate`` ml/min for ``duration`` minutes.

    ``rate`` is either a constant or a sequence of ``(start_min, ml_per_min)``
    steps starting at 0; a rate of 0 models a pause.
    """

    rate: float | tuple[tuple[float, float], ...] = 45.0
    duration: float = 14.0
    mu0: float = 700.0
    delta: float = 0.05
    noise_sd: float = DEFAULT_NOISE_SD
    se_noise_sd: float | None = None
    confounder: Confounder | None = None
    subject_id: str = "SIM-F"

    def __post_init__(self):
        if self.duration <= 0:
            raise PreconditionError("duration must be > 0")
        steps = self.rate_steps
        if steps[0][0] != 0 or any(b[0] <= a[0] for a, b in zip(steps, steps[1:])):
            raise PreconditionError("rate steps must start at 0 and increase")
        if any(r < 0 for _, r in steps) or not any(r > 0 for _, r in steps):
            raise PreconditionError("rate must be > 0")

    @property
    def rate_steps(self) -> tuple[tuple[float, float], ...]:
        if np.ndim(self.rate) == 0:
            return ((0.0, float(self.rate)),)
        return tuple((float(a), float(b)) for a, b in self.rate)

    def volume(self, t) -> np.ndarray:
        """Infused volume (ml) at times ``t`` in seconds."""
        t_min = np.asarray(t, dtype=float) / 60.0
        v = np.zeros_like(t_min)
        steps = self.rate_steps
        for k, (start, r) in enumerate(steps):
            end = steps[k + 1][0] if k + 1 < len(steps) else math.inf
            v += r * np.clip(t_min - start, 0.0, end - start)
        return v


@dataclass(frozen=True)
class VoidingProfile:
    """A void of ``voided_volume`` ml over ``duration`` seconds.

    ``peak`` places the flow maximum at that fraction of the void (None for
    a symmetric pulse). The bladder is assumed to hold ``initial_volume``
    (default: exactly what is voided) and the recording adds flat
    ``lead_in``/``lead_out`` seconds around the void.
    """

    voided_volume: float = 717.4
    duration: float = 47.6
    mu0: float = 500.0
    delta: float = 0.039
    noise_sd: float = DEFAULT_NOISE_SD
    se_noise_sd: float | None = None
    peak: float | None = None
    lead_in: float = 2.0
    lead_out: float = 2.0
    initial_volume: float | None = None
    subject_id: str = "SIM-V"

    def __post_init__(self):
        if self.voided_volume <= 0:
            raise PreconditionError("voided_volume must be > 0")
        if self.duration <= 0:
            raise PreconditionError("duration must be > 0")
        if self.peak is not None and not (0 < self.peak < 1):
            raise PreconditionError("peak must lie in (0, 1)")
        if self.lead_in < 0 or self.lead_out < 0:
            raise PreconditionError("lead times must be >= 0")
        if self.initial_volume is not None and self.initial_volume < self.voided_volume:
            raise PreconditionError("cannot void more than the bladder holds")


@dataclass(frozen=True)
class ArtefactSpec:
    kind: ArtefactKind
    t_start: float
    t_end: float
    magnitude: float  # ohms for drifts, variance multiplier for high variance

    def __post_init__(self):
        object.__setattr__(self, "kind", ArtefactKind(self.kind))
        if not self.t_start < self.t_end:
            raise PreconditionError("artefact needs t_start < t_end")
        if self.kind is ArtefactKind.HIGH_VARIANCE and self.magnitude < HIGH_VARIANCE_RATIO:
            raise PreconditionError(f"high-variance multiplier must be >= {HIGH_VARIANCE_RATIO}")
        if self.kind is ArtefactKind.POSITIVE_DRIFT and self.magnitude <= 0:
            raise PreconditionError("positive drift needs magnitude > 0")
        if self.kind is ArtefactKind.NEGATIVE_DRIFT and self.magnitude >= 0:
            raise PreconditionError("negative drift needs magnitude < 0")

    def ramp(self, t) -> np.ndarray:
        """Drift offset: 0 before the span, linear inside, held after it."""
        frac = np.clip((np.asarray(t, dtype=float) - self.t_start) / (self.t_end - self.t_start), 0.0, 1.0)
        return self.magnitude * frac


# ------------------------------------------------------------------ generators


def _grid(duration_s: float) -> np.ndarray:
    n = int(round(duration_s / SAMPLE_PERIOD))
    return np.arange(n) * SAMPLE_PERIOD


def _se_channels(rng, n, sd):
    base = rng.uniform(*SE_BASELINE, size=N_SE)
    noise = rng.normal(0.0, sd, size=(n, N_SE)) if sd > 0 else np.zeros((n, N_SE))
    return base[None, :] + noise


def flow_curve(p: VoidingProfile):
    """Flow rate Q(t) in ml/s for 0 <= t <= T (zero outside).

    Q = Qmax sin^2(pi u(t)) with Qmax = 2 V / T. For a skewed pulse u is
    piecewise linear with u(peak T) = 1/2; each half still integrates to
    half its length, so the total stays exactly V.
    """
    T, V = p.duration, p.voided_volume
    qmax = 2.0 * V / T
    a = 0.5 if p.peak is None else p.peak

    def Q(t):
        t = np.asarray(t, dtype=float)
        u = np.where(t < a * T, 0.5 * t / (a * T), 0.5 + 0.5 * (t - a * T) / ((1 - a) * T))
        inside = (t >= 0) & (t <= T)
        return np.where(inside, qmax * np.sin(np.pi * u) ** 2, 0.0)

    Q.qmax = qmax
    return Q


def voided_volume(p: VoidingProfile, t) -> np.ndarray:
    """Closed-form integral of :func:`flow_curve` from 0 to ``t``."""
    T, V = p.duration, p.voided_volume
    a = 0.5 if p.peak is None else p.peak
    t = np.clip(np.asarray(t, dtype=float), 0.0, T)

    qmax = 2 * V / T
    # rising half: sin^2(pi x / 2l); falling half: cos^2(pi x / 2l)
    x1, l1 = np.minimum(t, a * T), a * T
    x2, l2 = np.maximum(t - a * T, 0.0), (1 - a) * T
    first = qmax * (0.5 * x1 - l1 / (2 * np.pi) * np.sin(np.pi * x1 / l1))
    second = qmax * (0.5 * x2 + l2 / (2 * np.pi) * np.sin(np.pi * x2 / l2))
    return first + second


def gen_filling(p: FillingProfile, seed: int = 0) -> tuple[SessionRecording, VolumeTrace]:
    rng = np.random.default_rng(seed)
    t = _grid(p.duration * 60.0)
    v = p.volume(t)
    bi = p.mu0 - p.delta * v
    if p.confounder is not None:
        bi = bi + confounder_ramp(p, t)
    if p.noise_sd > 0:
        bi = bi + rng.normal(0.0, p.noise_sd, t.size)
    se_sd = p.noise_sd if p.se_noise_sd is None else p.se_noise_sd
    se = _se_channels(rng, t.size, se_sd)
    trace = VolumeTrace(t, v)
    meta = SessionMeta(p.subject_id, MeasurementContext.FILLING, p.delta, ground_truth=trace)
    return SessionRecording(t, bi, se, meta), trace


def confounder_ramp(p: FillingProfile, t) -> np.ndarray:
    c = p.confounder
    t = np.asarray(t, dtype=float)
    if c is None:
        return np.zeros_like(t)
    # onset time from the (monotone) volume curve on a fine grid
    fine = np.linspace(0.0, p.duration * 60.0, 20001)
    reached = np.flatnonzero(p.volume(fine) >= c.onset_ml)
    if reached.size == 0:
        return np.zeros_like(t)
    t_on = fine[reached[0]]
    return c.drift_ohm_per_min * np.maximum(t - t_on, 0.0) / 60.0


def gen_voiding(p: VoidingProfile, seed: int = 0) -> tuple[SessionRecording, VolumeTrace]:
    """Voiding session; the trace holds the remaining bladder content."""
    rng = np.random.default_rng(seed)
    t = _grid(p.lead_in + p.duration + p.lead_out)
    voided = voided_volume(p, t - p.lead_in)
    v0 = p.voided_volume if p.initial_volume is None else p.initial_volume
    bi = p.mu0 + p.delta * voided
    if p.noise_sd > 0:
        bi = bi + rng.normal(0.0, p.noise_sd, t.size)
    se_sd = p.noise_sd if p.se_noise_sd is None else p.se_noise_sd
    se = _se_channels(rng, t.size, se_sd)
    remaining = np.maximum(v0 - voided, 0.0)
    trace = VolumeTrace(t, remaining)
    meta = SessionMeta(p.subject_id, MeasurementContext.VOIDING, p.delta, ground_truth=trace)
    return SessionRecording(t, bi, se, meta), trace


# ------------------------------------------------------------------- artefacts


def check_spans(specs: Sequence[ArtefactSpec], duration: float) -> list[ArtefactSpec]:
    specs = sorted(specs, key=lambda s: s.t_start)
    for s in specs:
        if s.t_start < 0 or s.t_end > duration + 1e-9:
            raise PreconditionError(f"artefact span [{s.t_start}, {s.t_end}] outside the session")
    for a, b in zip(specs, specs[1:]):
        if b.t_start < a.t_end:
            raise OverlappingSpans(f"[{a.t_start}, {a.t_end}] overlaps [{b.t_start}, {b.t_end}]")
    return specs


def artefact_offset(specs: Sequence[ArtefactSpec], t) -> np.ndarray:
    off = np.zeros_like(np.asarray(t, dtype=float))
    for s in specs:
        if s.kind is not ArtefactKind.HIGH_VARIANCE:
            off += s.ramp(t)
    return off


def inject_artefacts(
    rec: SessionRecording,
    specs: Sequence[ArtefactSpec],
    cal_sd: float,
    seed: int = 0,
    clean_bi=None,
    noise_sd: float | None = None,
) -> tuple[SessionRecording, list[ArtefactLabel]]:
    """Add artefacts and return the recording with its true window labels.

    Artefacts also reach the skin-electrode channels: each electrode picks
    up a drift of the same sign scaled by a random coupling factor, and
    extra noise during high-variance spans.

    ``clean_bi`` is the noise-free BI of the underlying session; the labels
    are derived from it plus the injected ramps. Without it the recorded
    BI stands in. ``noise_sd`` is the baseline noise level (defaults to
    ``cal_sd``).
    """
    specs = check_spans(specs, rec.duration)
    out = _add_artefacts(rec, specs, cal_sd, np.random.default_rng(seed))
    base = rec.bi if clean_bi is None else np.asarray(clean_bi, dtype=float)
    labels = reference_labels(out, base + artefact_offset(specs, rec.t), specs, cal_sd,
                              cal_sd if noise_sd is None else noise_sd)
    return out, labels


def _add_artefacts(rec, specs, cal_sd, rng):
    t = rec.t
    bi = rec.bi.copy()
    se = rec.se.copy()
    for s in specs:
        coupling = rng.uniform(*SE_COUPLING, size=N_SE)
        if s.kind is ArtefactKind.HIGH_VARIANCE:
            inside = (t >= s.t_start) & (t < s.t_end)
            k = int(inside.sum())
            sd = math.sqrt(s.magnitude) * cal_sd
            bi[inside] += rng.normal(0.0, sd, k)
            se[inside] += rng.normal(0.0, 1.0, (k, N_SE)) * (sd * np.sqrt(coupling))[None, :]
        else:
            r = s.ramp(t)
            bi += r
            se += r[:, None] * coupling[None, :]
    return rec.with_channels(bi=bi, se=se)


def reference_labels(
    rec: SessionRecording,
    deterministic_bi,
    specs: Sequence[ArtefactSpec],
    cal_sd: float,
    noise_sd: float,
    window_len: float | None = None,
    cal=None,
) -> list[ArtefactLabel]:
    """Window labels from the noise-free signal and the artefact spans.

    A window is L1 when high-variance spans cover at least half of it and
    the variance they add (multiplier x cal_sd^2, weighted by the covered
    fraction) lifts the expected raw variance above 2.5 times the baseline
    noise. A few noisy samples at a span edge do not count, since robust
    smoothing removes them. Otherwise the
    drift rule on the noise-free window means, with the calibration
    variance of the recorded session (``cal``, computed when absent),
    gives L2/L3, and L0 remains.
    """
    from .estimate import EstimatorConfig, prepare_windows

    L = window_len or rec.meta.window_len
    windows = segment_windows(rec, L)
    if cal is None:
        _, _, cal, _ = prepare_windows(rec, EstimatorConfig(window_len=L))
    det = np.asarray(deterministic_bi, dtype=float)
    index = {float(x): i for i, x in enumerate(rec.t)}
    hv = [s for s in specs if s.kind is ArtefactKind.HIGH_VARIANCE]
    labels: list[ArtefactLabel] = []
    prev = None
    for w in windows:
        rows = [index[float(x)] for x in w.t]
        m = float(det[rows].mean())
        added, covered = 0.0, 0.0
        for s in hv:
            inside = ((w.t >= s.t_start) & (w.t < s.t_end)).mean()
            added += s.magnitude * cal_sd**2 * inside
            covered += inside
        if covered >= HV_MIN_COVERAGE and added > (HIGH_VARIANCE_RATIO - 1.0) * noise_sd**2:
            labels.append(ArtefactLabel.L1)
        elif prev is None:
            labels.append(ArtefactLabel.L0)
        else:
            flag = drift_flag(m, prev, cal.sigma2_c, w.n)
            labels.append({1: ArtefactLabel.L2, -1: ArtefactLabel.L3}.get(flag, ArtefactLabel.L0))
        prev = m
    return labels


# -------------------------------------------------------- complete simulations


@dataclass
class SimulatedSession:
    rec: SessionRecording
    trace: VolumeTrace
    labels: list[ArtefactLabel]
    specs: list[ArtefactSpec] = field(default_factory=list)
    prepared: tuple | None = field(default=None, repr=False)  # prepare_windows output


def simulate_session(profile, specs: Sequence[ArtefactSpec] = (), seed: int = 0) -> SimulatedSession:
    """Generate a session, inject artefacts and attach reference labels."""
    from .estimate import prepare_windows

    if isinstance(profile, FillingProfile):
        rec, trace = gen_filling(profile, seed)
        clean = profile.mu0 - profile.delta * profile.volume(rec.t) + confounder_ramp(profile, rec.t)
    elif isinstance(profile, VoidingProfile):
        rec, trace = gen_voiding(profile, seed)
        clean = profile.mu0 + profile.delta * voided_volume(profile, rec.t - profile.lead_in)
    else:
        raise TypeError(f"unknown profile {type(profile).__name__}")
    specs = check_spans(specs, rec.duration)
    sd = profile.noise_sd
    out = _add_artefacts(rec, specs, sd, np.random.default_rng(seed + 1))
    prepared = prepare_windows(out)
    labels = reference_labels(out, clean + artefact_offset(specs, rec.t), specs, sd, sd, cal=prepared[2])
    return SimulatedSession(out, trace, labels, list(specs), prepared)


HV_RANGE = (4.0, 100.0)
DRIFT_RANGE = (2.0, 8.0)


def random_artefacts(
    rng,
    duration: float,
    n: int,
    window_len: float = 30.0,
    hv_range: tuple[float, float] = HV_RANGE,
    drift_range: tuple[float, float] = DRIFT_RANGE,
) -> list[ArtefactSpec]:
    """Up to ``n`` non-overlapping artefacts of random kind, length and size.

    High-variance multipliers are log-uniform over ``hv_range``; drift
    magnitudes (ohms) are uniform over ``drift_range``.
    """
    specs: list[ArtefactSpec] = []
    for _ in range(20 * n):
        if len(specs) == n:
            break
        kind = list(ArtefactKind)[int(rng.integers(len(ArtefactKind)))]
        length = rng.uniform(1.0, 3.0) * window_len
        t0 = rng.uniform(window_len, max(window_len, duration - length))
        if kind is ArtefactKind.HIGH_VARIANCE:
            mag = float(np.exp(rng.uniform(*np.log(hv_range))))
        else:
            mag = rng.uniform(*drift_range) * (1 if kind is ArtefactKind.POSITIVE_DRIFT else -1)
        cand = ArtefactSpec(kind, t0, min(t0 + length, duration), mag)
        if all(cand.t_end <= s.t_start or cand.t_start >= s.t_end for s in specs):
            specs.append(cand)
    return sorted(specs, key=lambda s: s.t_start)


def random_filling_profile(rng, duration: float = 20.0, **kw) -> FillingProfile:
    """Infusion alternating with pauses, rates drawn from 25-50 ml/min.

    The recording starts at infusion onset, so the calibration window
    carries the filling trend.
    """
    steps, t = [], 0.0
    infusing = True
    while t < duration:
        steps.append((t, float(rng.uniform(25.0, 50.0)) if infusing else 0.0))
        t += float(rng.uniform(3.0, 7.0))
        infusing = not infusing
    return FillingProfile(
        rate=tuple(steps),
        duration=duration,
        mu0=float(rng.uniform(300.0, 1000.0)),
        delta=float(rng.uniform(0.03, 0.07)),
        **kw,
    )


def labeled_corpus(n_windows: int = 2000, seed: int = 0, balanced: bool = True, max_sessions: int = 500,
                   hv_range=HV_RANGE, drift_range=DRIFT_RANGE):
    """Feature matrix and labels pooled from random filling sessions.

    Returns ``(X, y, session)`` with the 55 per-window features. With
    ``balanced`` the corpus holds ``n_windows // 4`` windows of each label.
    Window 0 of each session (the calibration window) is left out.
    """
    rng = np.random.default_rng(seed)
    per_class = n_windows // 4
    pools: dict[int, list] = {c: [] for c in range(4)}
    rows: list = []
    for k in range(max_sessions):
        prof = random_filling_profile(rng)
        specs = random_artefacts(rng, prof.duration * 60.0, int(rng.integers(3, 7)),
                                 hv_range=hv_range, drift_range=drift_range)
        sim = simulate_session(prof, specs, seed=int(rng.integers(2**31)))
        feats = sim.prepared[3]
        for f, lab in zip(feats[1:], sim.labels[1:]):
            pools[int(lab)].append(len(rows))
            rows.append((f.as_vector(), int(lab), k))
        if not balanced and len(rows) >= n_windows:
            break
        if balanced and all(len(v) >= per_class for v in pools.values()):
            break
    else:
        if balanced:
            raise BladderVolError("corpus generation ran out of sessions before every class filled")
    if balanced:
        pick = np.sort(np.concatenate([rng.choice(pools[c], per_class, replace=False) for c in range(4)]))
    else:
        pick = np.arange(min(n_windows, len(rows)))
    X = np.array([rows[i][0] for i in pick])
    y = np.array([rows[i][1] for i in pick])
    sess = np.array([rows[i][2] for i in pick])
    return X, y, sess
