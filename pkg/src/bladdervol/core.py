"""Shared domain types, exceptions and the session file formats.

A session is stored as two files: a CSV with one row per sample
(``t_s,bi_ohm,se1_ohm,se2_ohm,se3_ohm,se4_ohm``) and a JSON metadata
document carrying the subject id, measurement context, sensitivity,
window length and an optional ground-truth volume trace.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

SAMPLE_PERIOD = 0.3
N_SE = 4
SESSION_HEADER = ["t_s", "bi_ohm", "se1_ohm", "se2_ohm", "se3_ohm", "se4_ohm"]
DELTA_BAND = (0.005, 0.5)
DEFAULT_WINDOW_LEN = {"filling": 30.0, "voiding": 1.0}


class BladderVolError(Exception):
    """Base class for all package errors."""


class SchemaError(BladderVolError):
    """A file does not follow the expected layout."""


class EmptySession(BladderVolError):
    pass


class DegenerateWindow(BladderVolError):
    pass


class PreconditionError(BladderVolError, ValueError):
    pass


class MeasurementContext(str, enum.Enum):
    FILLING = "filling"
    VOIDING = "voiding"

    @classmethod
    def parse(cls, value: "str | MeasurementContext") -> "MeasurementContext":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise SchemaError(f"unknown context {value!r}") from None


class ArtefactLabel(enum.IntEnum):
    L0 = 0  # no change
    L1 = 1  # high-variance noise
    L2 = 2  # positive drift
    L3 = 3  # negative drift

    @property
    def description(self) -> str:
        return _LABEL_NAMES[self]


_LABEL_NAMES = {
    ArtefactLabel.L0: "no change",
    ArtefactLabel.L1: "high variance noise",
    ArtefactLabel.L2: "positive drift",
    ArtefactLabel.L3: "negative drift",
}


@dataclass(frozen=True)
class Sample:
    t: float
    bi: float
    se: tuple[float, float, float, float]


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class VolumeTrace:
    """Volume (ml) against time (s)."""

    t: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        t = _frozen(self.t)
        v = _frozen(self.v)
        if t.shape != v.shape or t.ndim != 1:
            raise PreconditionError("VolumeTrace needs equal-length 1-D t and v")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise PreconditionError("VolumeTrace timestamps must be strictly increasing")
        if np.any(v < 0):
            raise PreconditionError("VolumeTrace volumes must be >= 0")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)

    @classmethod
    def from_points(cls, points: Sequence[Sequence[float]]) -> "VolumeTrace":
        if len(points) == 0:
            return cls(np.empty(0), np.empty(0))
        arr = np.asarray(points, dtype=float)
        return cls(arr[:, 0], arr[:, 1])

    @property
    def points(self) -> list[tuple[float, float]]:
        return [(float(a), float(b)) for a, b in zip(self.t, self.v)]

    def at(self, t) -> np.ndarray:
        """Linear interpolation, held constant outside the recorded span."""
        return np.interp(t, self.t, self.v)

    def __len__(self):
        return self.t.size

    def __eq__(self, other):
        if not isinstance(other, VolumeTrace):
            return NotImplemented
        return np.array_equal(self.t, other.t) and np.array_equal(self.v, other.v)


@dataclass(frozen=True)
class SessionMeta:
    subject_id: str
    context: MeasurementContext
    delta: float
    window_len: float | None = None
    ground_truth: VolumeTrace | None = None

    def __post_init__(self):
        object.__setattr__(self, "context", MeasurementContext.parse(self.context))
        if not (DELTA_BAND[0] < self.delta < DELTA_BAND[1]):
            raise PreconditionError(
                f"delta {self.delta} ohm/ml outside sanity band {DELTA_BAND}"
            )
        if self.window_len is None:
            object.__setattr__(
                self, "window_len", DEFAULT_WINDOW_LEN[self.context.value]
            )
        if self.window_len <= 0:
            raise PreconditionError("window_len must be > 0")

    def to_json(self) -> dict:
        gt = None if self.ground_truth is None else [list(p) for p in self.ground_truth.points]
        return {
            "subject_id": self.subject_id,
            "context": self.context.value,
            "delta_ohm_per_ml": self.delta,
            "window_len_s": self.window_len,
            "ground_truth": gt,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SessionMeta":
        try:
            gt = doc.get("ground_truth")
            return cls(
                subject_id=str(doc["subject_id"]),
                context=MeasurementContext.parse(doc["context"]),
                delta=float(doc["delta_ohm_per_ml"]),
                window_len=None if doc.get("window_len_s") is None else float(doc["window_len_s"]),
                ground_truth=None if gt is None else VolumeTrace.from_points(gt),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad session metadata: {exc}") from exc


@dataclass(frozen=True)
class SessionRecording:
    """Timestamped BI channel plus four skin-electrode channels.

    Samples are held column-wise: ``t`` (n,), ``bi`` (n,) and ``se`` (n, 4).
    """

    t: np.ndarray
    bi: np.ndarray
    se: np.ndarray
    meta: SessionMeta

    def __post_init__(self):
        t, bi, se = _frozen(self.t), _frozen(self.bi), _frozen(self.se)
        if t.ndim != 1 or t.size == 0:
            raise PreconditionError("a session needs at least one sample")
        if bi.shape != t.shape or se.shape != (t.size, N_SE):
            raise PreconditionError("channel lengths do not match the timestamps")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "bi", bi)
        object.__setattr__(self, "se", se)

    def __len__(self):
        return self.t.size

    def __getitem__(self, i) -> Sample:
        return Sample(float(self.t[i]), float(self.bi[i]), tuple(float(x) for x in self.se[i]))

    @property
    def samples(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def duration(self) -> float:
        """Span covered by the samples, counting the last sample period."""
        return float(self.t[-1]) + SAMPLE_PERIOD

    def with_channels(self, bi=None, se=None) -> "SessionRecording":
        return SessionRecording(
            self.t,
            self.bi if bi is None else bi,
            self.se if se is None else se,
            self.meta,
        )

    def __eq__(self, other):
        if not isinstance(other, SessionRecording):
            return NotImplemented
        return (
            np.array_equal(self.t, other.t)
            and np.array_equal(self.bi, other.bi)
            and np.array_equal(self.se, other.se)
            and self.meta == other.meta
        )


@dataclass(frozen=True)
class Issue:
    kind: str
    index: int
    message: str
    fatal: bool


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not any(i.fatal for i in self.issues)

    @property
    def warnings(self) -> list[Issue]:
        return [i for i in self.issues if not i.fatal]

    @property
    def errors(self) -> list[Issue]:
        return [i for i in self.issues if i.fatal]


def validate_session(rec: SessionRecording, period: float = SAMPLE_PERIOD) -> ValidationReport:
    """Report timestamp ordering, sampling gaps and bad impedance values.

    Gaps longer than twice the nominal period are warnings; everything
    else listed here fails the recording.
    """
    issues: list[Issue] = []
    t = rec.t
    if t[0] < 0:
        issues.append(Issue("negative t", 0, f"first timestamp {t[0]} < 0", True))
    dt = np.diff(t)
    for i in np.flatnonzero(~(dt > 0)):
        issues.append(Issue("non-monotone t", int(i + 1), f"t[{i + 1}]={t[i + 1]} <= t[{i}]={t[i]}", True))
    for i in np.flatnonzero(dt > 2 * period):
        issues.append(Issue("gap", int(i + 1), f"gap of {dt[i]:.3f} s before sample {i + 1}", False))
    values = np.column_stack([rec.bi, rec.se])
    bad_finite = ~np.isfinite(values).all(axis=1) | ~np.isfinite(t)
    for i in np.flatnonzero(bad_finite):
        issues.append(Issue("non-finite", int(i), f"non-finite value in sample {i}", True))
    bad_sign = np.isfinite(values).all(axis=1) & (values <= 0).any(axis=1)
    for i in np.flatnonzero(bad_sign):
        issues.append(Issue("non-positive impedance", int(i), f"impedance <= 0 in sample {i}", True))
    return ValidationReport(tuple(issues))


# ---------------------------------------------------------------- file formats


def _fmt(x: float) -> str:
    # repr is the shortest string that round-trips a double exactly
    return repr(float(x))


def write_session(rec: SessionRecording, csv_path, meta_path=None) -> None:
    csv_path = Path(csv_path)
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SESSION_HEADER)
        for i in range(len(rec)):
            w.writerow([_fmt(rec.t[i]), _fmt(rec.bi[i]), *(_fmt(x) for x in rec.se[i])])
    if meta_path is not None:
        write_meta(rec.meta, meta_path)


def write_meta(meta: SessionMeta, path) -> None:
    Path(path).write_text(json.dumps(meta.to_json(), indent=2) + "\n")


def read_meta(path) -> SessionMeta:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return SessionMeta.from_json(doc)


def read_session(csv_path, meta: "SessionMeta | str | Path") -> SessionRecording:
    if not isinstance(meta, SessionMeta):
        meta = read_meta(meta)
    with Path(csv_path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != SESSION_HEADER:
            raise SchemaError(f"{csv_path}: expected header {','.join(SESSION_HEADER)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(SESSION_HEADER):
                raise SchemaError(f"{csv_path}:{lineno}: expected {len(SESSION_HEADER)} columns")
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise SchemaError(f"{csv_path}:{lineno}: {exc}") from exc
    if not rows:
        raise EmptySession(f"{csv_path}: no samples")
    arr = np.array(rows)
    return SessionRecording(arr[:, 0], arr[:, 1], arr[:, 2:], meta)


def write_trace(trace: VolumeTrace, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "v_ml"])
        for t, v in zip(trace.t, trace.v):
            w.writerow([_fmt(t), _fmt(v)])


def read_trace(path) -> VolumeTrace:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t_s", "v_ml"]:
            raise SchemaError(f"{path}: expected header t_s,v_ml")
        pts = [(float(a), float(b)) for a, b in reader]
    return VolumeTrace.from_points(pts)


def write_labels(labels: Sequence[int], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "label"])
        for i, lab in enumerate(labels):
            w.writerow([i, int(lab)])


def read_labels(path) -> list[ArtefactLabel]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["window", "label"]:
            raise SchemaError(f"{path}: expected header window,label")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                idx, lab = int(row[0]), ArtefactLabel(int(row[1]))
            except (ValueError, IndexError) as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
            if idx != len(out):
                raise SchemaError(f"{path}:{lineno}: window indices must be 0..n-1 in order")
            out.append(lab)
    return out

