"""Endpoint errors, Bland-Altman agreement and report files."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import BladderVolError, MeasurementContext, PreconditionError, VolumeTrace

LOA_Z = 1.96
BA_SPACING = {MeasurementContext.FILLING: 60.0, MeasurementContext.VOIDING: 5.0}


class TooFewPairs(BladderVolError):
    pass


class IoFailure(BladderVolError, OSError):
    pass


class UndefinedSpreadWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EndpointError:
    case_id: str
    ground_truth: float
    estimate: float

    @property
    def delta_err(self) -> float:
        return self.estimate - self.ground_truth


@dataclass(frozen=True)
class EndpointSummary:
    errors: tuple[EndpointError, ...]
    mean: float
    sd: float  # sample SD (n - 1)
    sd_defined: bool = True
    sd_population: float = 0.0  # n in the denominator


def _as_case(k, c) -> EndpointError:
    if isinstance(c, EndpointError):
        return c
    if len(c) == 3:
        return EndpointError(str(c[0]), float(c[1]), float(c[2]))
    truth, est = c
    return EndpointError(f"case{k + 1}", float(truth), float(est))


def endpoint_errors(cases) -> EndpointSummary:
    """Per-case error (estimate - truth) with its mean and sample SD.

    ``cases`` holds ``(truth, estimate)`` or ``(case_id, truth, estimate)``
    tuples. With one case the SD is undefined; it is reported as 0 with
    ``sd_defined=False``.
    """
    errs = tuple(_as_case(k, c) for k, c in enumerate(cases))
    if not errs:
        raise PreconditionError("need at least one case")
    d = np.array([e.delta_err for e in errs])
    if d.size == 1:
        warnings.warn("one case: standard deviation undefined, reported as 0", UndefinedSpreadWarning, stacklevel=2)
        return EndpointSummary(errs, float(d[0]), 0.0, False)
    return EndpointSummary(errs, float(d.mean()), float(d.std(ddof=1)), True, float(d.std(ddof=0)))


@dataclass(frozen=True)
class AgreementStats:
    bias: float
    sd_diff: float
    loa_upper: float
    loa_lower: float
    n: int
    means: np.ndarray
    diffs: np.ndarray


def bland_altman(pairs) -> AgreementStats:
    """Agreement of ``(estimate, truth)`` pairs; limits are bias +- 1.96 SD."""
    a = np.asarray(pairs, dtype=float).reshape(-1, 2)
    if a.shape[0] < 2:
        raise TooFewPairs(f"Bland-Altman needs at least 2 pairs, got {a.shape[0]}")
    est, truth = a[:, 0], a[:, 1]
    d = est - truth
    bias = float(d.mean())
    sd = float(d.std(ddof=1))
    half = LOA_Z * sd
    return AgreementStats(bias, sd, bias + half, bias - half, int(d.size), 0.5 * (est + truth), d)


# ------------------------------------------------------------------ trace pairing


def truth_change(trace: VolumeTrace, ctx: MeasurementContext, t_ref: float, t) -> np.ndarray:
    """Ground-truth volume change since ``t_ref``, signed like the estimate.

    Filling counts volume added; voiding counts volume voided (the trace
    holds the remaining content).
    """
    v = trace.at(t) - trace.at(t_ref)
    return v if MeasurementContext.parse(ctx) is MeasurementContext.FILLING else -v


def session_truth(trace: VolumeTrace, ctx: MeasurementContext) -> float:
    return float(truth_change(trace, ctx, trace.t[0], trace.t[-1]))


def intermediate_pairs(steps, trace: VolumeTrace, ctx: MeasurementContext, spacing: float | None = None):
    """(estimate, truth) at regular times along a session.

    ``v_cum`` is referenced to the centre of the first window, so the truth
    is taken relative to that instant too.
    """
    ctx = MeasurementContext.parse(ctx)
    spacing = spacing or BA_SPACING[ctx]
    t = np.array([s.t_s for s in steps])
    v = np.array([s.v_cum for s in steps])
    ts = np.arange(t[0] + spacing, t[-1] + 1e-9, spacing)
    est = np.interp(ts, t, v)
    tru = truth_change(trace, ctx, t[0], ts)
    return np.column_stack([est, tru])


# ------------------------------------------------------------------- reporting


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "bladdervol"
    return plt


def _save(fig, path):
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def plot_bland_altman(stats: AgreementStats, path, title: str = "Bland-Altman") -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(stats.means, stats.diffs, s=14, color="tab:blue")
    for y, style, name in ((stats.bias, "-", "bias"), (stats.loa_upper, "--", "+1.96 SD"),
                           (stats.loa_lower, "--", "-1.96 SD")):
        ax.axhline(y, color="k", linestyle=style, linewidth=1)
        ax.annotate(f"{name} {y:.1f} ml", (1.0, y), xycoords=("axes fraction", "data"),
                    ha="right", va="bottom", fontsize=8)
    ax.set_xlabel("mean of estimate and truth (ml)")
    ax.set_ylabel("estimate - truth (ml)")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def plot_traces(traces: dict, path) -> None:
    """``traces`` maps case id -> (t, estimate, truth) arrays."""
    plt = _plt()
    n = len(traces)
    fig, axes = plt.subplots(n, 1, figsize=(6, 2.4 * n), squeeze=False)
    for ax, (case, (t, est, tru)) in zip(axes[:, 0], sorted(traces.items())):
        t, est, tru = (np.asarray(x, dtype=float) for x in (t, est, tru))
        ax.plot(t, tru, color="k", linewidth=1.2, label="truth")
        ax.plot(t, est, color="tab:red", linewidth=1.2, label="estimate")
        k = int(np.argmax(np.abs(est - tru)))
        ax.annotate(f"max error {est[k] - tru[k]:+.1f} ml", (t[k], est[k]), fontsize=8,
                    xytext=(5, -12), textcoords="offset points")
        ax.set_title(str(case), fontsize=9)
        ax.set_xlabel("t (s)")
        ax.set_ylabel("volume (ml)")
        ax.legend(fontsize=7, loc="upper left")
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def emit_report(results: Sequence, out_dir, traces: dict | None = None, pairs=None) -> list[Path]:
    """Write endpoint and agreement CSVs plus two SVG plots.

    The agreement analysis uses ``pairs`` (estimate, truth) when given,
    otherwise the endpoints. Without ``traces`` the second plot shows the
    estimated against the true endpoint volumes.
    """
    if not results:
        raise PreconditionError("no results to report")
    summary = endpoint_errors(results) if len(results) > 1 else None
    errs = summary.errors if summary else (_as_case(0, results[0]),)
    ids = [e.case_id for e in errs]
    if len(set(ids)) != len(ids):
        raise PreconditionError("case ids must be unique")
    if pairs is None:
        pairs = [(e.estimate, e.ground_truth) for e in errs]
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        p_end, p_agr = out / "endpoints.csv", out / "agreement.csv"
        with p_end.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["case_id", "ground_truth_ml", "estimate_ml", "delta_ml"])
            for e in errs:
                w.writerow([e.case_id, repr(e.ground_truth), repr(e.estimate), repr(e.delta_err)])
        stats = bland_altman(pairs)
        with p_agr.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            rows = [("n", stats.n), ("bias_ml", stats.bias), ("sd_diff_ml", stats.sd_diff),
                    ("loa_upper_ml", stats.loa_upper), ("loa_lower_ml", stats.loa_lower)]
            if summary is not None:
                rows += [("endpoint_mean_ml", summary.mean), ("endpoint_sd_ml", summary.sd),
                         ("endpoint_sd_population_ml", summary.sd_population)]
            for k, v in rows:
                w.writerow([k, v if isinstance(v, int) else repr(float(v))])
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    p_ba, p_tr = out / "bland_altman.svg", out / "traces.svg"
    plot_bland_altman(stats, p_ba)
    if traces:
        plot_traces(traces, p_tr)
    else:
        _plot_endpoints(errs, p_tr)
    return [p_end, p_agr, p_ba, p_tr]


def _plot_endpoints(errs, path):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 5))
    gt = np.array([e.ground_truth for e in errs])
    ev = np.array([e.estimate for e in errs])
    lim = (0.0, 1.05 * max(gt.max(), ev.max(), 1.0))
    ax.plot(lim, lim, color="0.6", linewidth=1)
    ax.scatter(gt, ev, s=16)
    for e in errs:
        ax.annotate(e.case_id, (e.ground_truth, e.estimate), fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_xlim(lim)
    ax.set_ylim(lim)
    ax.set_xlabel("ground truth (ml)")
    ax.set_ylabel("estimate (ml)")
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def read_endpoints(path) -> list[EndpointError]:
    from .core import SchemaError

    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or header[:3] != ["case_id", "ground_truth_ml", "estimate_ml"]:
            raise SchemaError(f"{path}: expected header case_id,ground_truth_ml,estimate_ml[,...]")
        out = []
        for lineno, row in enumerate(r, start=2):
            try:
                out.append(EndpointError(row[0], float(row[1]), float(row[2])))
            except (ValueError, IndexError) as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    if not out:
        raise SchemaError(f"{path}: no cases")
    return out


def fmt_ml(x: float) -> str:
    return "nan" if not math.isfinite(x) else f"{x:.2f}"
