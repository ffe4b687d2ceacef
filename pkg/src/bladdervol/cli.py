"""Command-line entry point: ``bladdervol <command> [options]``.

Exit codes: 0 success, 2 usage error, 3 data or schema error, 4 numerical
failure. Options resolve as command-line flag, then the matching key of the
``--config`` JSON file, then the built-in default.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .classify import (
    DivergedLoss,
    LabeledDataset,
    NoConvergence,
    Standardizer,
    compute_metrics,
    kfold_cv,
    load_model,
    mlp_trainer,
    save_model,
    svm_trainer,
    train_mlp,
    train_svm,
)
from .core import (
    BladderVolError,
    MeasurementContext,
    read_labels,
    read_session,
    read_trace,
    write_labels,
    write_meta,
    write_session,
    write_trace,
)
from .estimate import EstimatorConfig, NumericalDegenerate, analyse_session, prepare_windows, read_steps, write_steps
from .evaluate import (
    bland_altman,
    emit_report,
    intermediate_pairs,
    read_endpoints,
    session_truth,
    truth_change,
)
from .features import (
    FEATURE_NAMES,
    UnknownFeatureSet,
    feature_set,
    rank_features_mrmr,
    rank_features_rfe,
    read_feature_csv,
    write_feature_csv,
    write_feature_matrix,
)
from .simulate import ArtefactKind, ArtefactSpec, FillingProfile, VoidingProfile, labeled_corpus, simulate_session

log = logging.getLogger("bladdervol")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
NUMERIC_ERRORS = (NumericalDegenerate, NoConvergence, DivergedLoss, ArithmeticError, FloatingPointError)


class UsageError(BladderVolError):
    pass


# --------------------------------------------------------------------- helpers


def _json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(p) -> Path:
    p = Path(p)
    p.mkdir(parents=True, exist_ok=True)
    return p


def parse_artefact(text: str) -> ArtefactSpec:
    """``kind:start:end:magnitude`` with times in seconds.

    Drift magnitudes are ohms; the sign follows the kind, so ``5`` and
    ``-5`` both give a 5 ohm drop for ``negative_drift``.
    """
    try:
        kind, a, b, m = text.split(":")
        kind = ArtefactKind(kind.strip().lower().replace("-", "_"))
        a, b, m = float(a), float(b), float(m)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad artefact {text!r} (want kind:start:end:magnitude): {exc}")
    if kind is ArtefactKind.NEGATIVE_DRIFT:
        m = -abs(m)
    elif kind is ArtefactKind.POSITIVE_DRIFT:
        m = abs(m)
    return ArtefactSpec(kind, a, b, m)


def _feature_set_arg(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"feature set must be an integer, got {text!r}")


# -------------------------------------------------------------------- commands


def cmd_simulate(a) -> int:
    specs = list(a.artefact or [])
    if a.kind == "filling":
        duration = a.duration if a.duration is not None else 14.0  # minutes
        rate = a.rate if a.rate is not None else (a.volume / duration if a.volume is not None else 45.0)
        prof = FillingProfile(rate=rate, duration=duration, mu0=a.mu0 if a.mu0 is not None else 700.0,
                              delta=a.delta if a.delta is not None else 0.05, noise_sd=a.noise)
    else:
        prof = VoidingProfile(voided_volume=a.volume if a.volume is not None else 717.4,
                              duration=a.duration if a.duration is not None else 47.6,
                              mu0=a.mu0 if a.mu0 is not None else 500.0,
                              delta=a.delta if a.delta is not None else 0.039, noise_sd=a.noise, peak=a.peak)
    sim = simulate_session(prof, specs, seed=a.seed)
    out = _out_dir(a.out)
    write_session(sim.rec, out / "session.csv")
    write_meta(sim.rec.meta, out / "meta.json")
    write_trace(sim.trace, out / "truth.csv")
    write_labels(sim.labels, out / "labels.csv")
    log.info("wrote %d samples, %d windows to %s", len(sim.rec), len(sim.labels), out)
    return EXIT_OK


def _estimator_config(a) -> EstimatorConfig:
    kw = dict(gating=a.suppress == "on", span=a.span, robust_iters=a.robust_iters)
    if a.window_len is not None:
        kw["window_len"] = a.window_len
    if a.v_rate0 is not None:
        kw["v_rate0"] = a.v_rate0
    if a.q0 is not None:
        kw["q0"] = a.q0
    return EstimatorConfig(**kw)


def cmd_run(a) -> int:
    t0 = time.perf_counter()
    rec = read_session(a.session, a.meta)
    if a.delta is not None:
        rec = replace(rec, meta=replace(rec.meta, delta=a.delta))
    labels = read_labels(a.labels) if a.labels else None
    model = fs = scaler = None
    if a.model:
        model, fs_id, scaler = load_model(a.model)
        fs = feature_set(fs_id) if fs_id is not None else None
    t1 = time.perf_counter()
    res = analyse_session(rec, labels=labels, model=model, cfg=_estimator_config(a), feature_set=fs, scaler=scaler)
    t2 = time.perf_counter()
    out = _out_dir(a.out)
    write_steps(out / "steps.csv", res.steps)
    summary = {
        "context": rec.meta.context.value,
        "delta_ohm_per_ml": rec.meta.delta,
        "suppression": a.suppress,
        "label_source": "labels" if labels is not None else ("model" if model is not None else "threshold"),
        "n_windows": len(res.steps),
        "n_artefact_windows": int(sum(s.artefact for s in res.steps)),
        "v_cum_last_ml": res.final_volume,
        "endpoint_volume_ml": res.total_volume,
    }
    if a.truth:
        truth = session_truth(read_trace(a.truth), rec.meta.context)
        summary["ground_truth_ml"] = truth
        summary["endpoint_error_ml"] = res.total_volume - truth
    _json(out / "summary.json", summary)
    t3 = time.perf_counter()
    # wall-clock figures vary run to run, so they stay out of summary.json
    _json(out / "timing.json", {"load_s": t1 - t0, "pipeline_s": t2 - t1, "write_s": t3 - t2})
    print(f"endpoint volume {res.total_volume:.2f} ml over {len(res.steps)} windows")
    return EXIT_OK


def cmd_features(a) -> int:
    rec = read_session(a.session, a.meta)
    _, _, _, feats = prepare_windows(rec, EstimatorConfig(window_len=a.window_len))
    labels = read_labels(a.labels) if a.labels else None
    write_feature_csv(a.out, feats, labels)
    return EXIT_OK


def cmd_corpus(a) -> int:
    X, y, sess = labeled_corpus(a.n_windows, seed=a.seed, balanced=not a.unbalanced)
    write_feature_matrix(a.out, X, y)
    log.info("corpus: %d windows from %d sessions", len(y), len(np.unique(sess)))
    return EXIT_OK


def _dataset(path, fs_id) -> LabeledDataset:
    _, X, y = read_feature_csv(path)
    if y is None:
        raise UsageError(f"{path} has no label column")
    fs = feature_set(fs_id)
    return LabeledDataset(fs.project(X), y, feature_set=fs_id)


def _trainer(a):
    if a.model == "svm":
        return svm_trainer(gamma=a.gamma, C=a.C)
    return mlp_trainer(epochs=a.epochs, lr=a.lr)


def _write_metrics(path, m) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scope", "metric", "value"])
        for scope, name, v in m.to_rows():
            w.writerow([scope, name, repr(float(v))])


def cmd_train(a) -> int:
    ds = _dataset(a.features, a.feature_set)
    out = _out_dir(a.out)
    if a.kfold:
        m = kfold_cv(ds, a.kfold, _trainer(a), seed=a.seed)
        _write_metrics(out / "cv_metrics.csv", m)
        print(m.summary())
    scaler = Standardizer.fit(ds.X)
    full = ds.standardized(scaler)
    if a.model == "svm":
        model = train_svm(full, gamma=a.gamma, C=a.C, seed=a.seed)
    else:
        model, final = train_mlp(full, epochs=a.epochs, lr=a.lr, seed=a.seed)
        log.info("final training loss %.6f", final)
    save_model(out / "model.json", model, feature_set=a.feature_set, scaler=scaler)
    return EXIT_OK


def cmd_eval(a) -> int:
    win, X, y = read_feature_csv(a.features)
    if y is None:
        raise UsageError(f"{a.features} has no label column")
    if a.predictions:
        pred = np.array([int(v) for v in read_labels(a.predictions)])
        if pred.size != y.size:
            raise UsageError(f"{pred.size} predictions for {y.size} labelled rows")
        scores = np.eye(4)[pred]
    elif a.model_file:
        model, fs_id, scaler = load_model(a.model_file)
        Xp = feature_set(fs_id).project(X) if fs_id is not None else X
        if scaler is not None:
            Xp = scaler.transform(Xp)
        scores = model.scores(Xp)
    else:
        raise UsageError("eval needs --model-file or --predictions")
    m = compute_metrics(y, scores)
    _write_metrics(a.out, m)
    print(m.summary())
    return EXIT_OK


def cmd_rank(a) -> int:
    _, X, y = read_feature_csv(a.features)
    if y is None:
        raise UsageError(f"{a.features} has no label column")
    order = rank_features_mrmr(X, y) if a.method == "mrmr" else rank_features_rfe(X, y)
    with Path(a.out).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "index", "feature"])
        for r, j in enumerate(order, start=1):
            w.writerow([r, j, FEATURE_NAMES[j]])
    return EXIT_OK


def _parse_trace_arg(text: str):
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"bad --trace {text!r} (want case_id:steps.csv:truth.csv)")
    return parts


def cmd_report(a) -> int:
    cases = read_endpoints(a.cases)
    traces, pairs = {}, []
    ctx = MeasurementContext.parse(a.context)
    for case, steps_path, truth_path in a.trace or []:
        steps = read_steps(steps_path)
        truth = read_trace(truth_path)
        p = intermediate_pairs(steps, truth, ctx)
        pairs.extend(map(tuple, p))
        t = np.array([s.t_s for s in steps])
        traces[case] = (t, [s.v_cum for s in steps], truth_change(truth, ctx, t[0], t))
    paths = emit_report(cases, a.out, traces=traces or None, pairs=pairs if len(pairs) >= 2 else None)
    stats = bland_altman(pairs if len(pairs) >= 2 else [(c.estimate, c.ground_truth) for c in cases])
    print(f"bias {stats.bias:.2f} ml, LoA [{stats.loa_lower:.2f}, {stats.loa_upper:.2f}] ml, n={stats.n}")
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_OK


# ---------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bladdervol", description="Bladder volume from bio-impedance windows.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="JSON file with defaults, one object per command name")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("simulate", help="generate a synthetic session with ground truth and labels")
    s.add_argument("--kind", required=True, choices=["filling", "voiding"])
    s.add_argument("--volume", type=float, help="ml; filling infuses this much (sets the rate), voiding voids it")
    s.add_argument("--duration", type=float, help="minutes for filling (14), seconds for voiding (47.6)")
    s.add_argument("--rate", type=float, help="filling infusion rate, ml/min (default 45)")
    s.add_argument("--delta", type=float, help="sensitivity, ohm/ml (0.05 filling, 0.039 voiding)")
    s.add_argument("--mu0", type=float, help="baseline BI, ohm")
    s.add_argument("--noise", type=float, default=0.2, help="BI and SE noise SD, ohm (default 0.2)")
    s.add_argument("--peak", type=float, help="voiding: fraction of the void where flow peaks")
    s.add_argument("--artefact", action="append", type=parse_artefact, metavar="KIND:START:END:MAG",
                   help="inject an artefact (high_variance|positive_drift|negative_drift); repeatable")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("run", help="estimate volume for one session")
    r.add_argument("--session", required=True)
    r.add_argument("--meta", required=True)
    g = r.add_mutually_exclusive_group()
    g.add_argument("--labels", help="window labels CSV (window,label)")
    g.add_argument("--model", help="trained model JSON; without labels or model the threshold rule labels windows")
    r.add_argument("--suppress", choices=["on", "off"], default="on", help="artefact gating (default on)")
    r.add_argument("--truth", help="ground-truth trace CSV; adds the endpoint error to the summary")
    r.add_argument("--delta", type=float, help="override the session's sensitivity, ohm/ml")
    r.add_argument("--window-len", type=float, help="window length, s (default from metadata)")
    r.add_argument("--span", type=float, default=0.3, help="LOWESS span fraction")
    r.add_argument("--robust-iters", type=int, default=5, help="LOWESS robustness iterations")
    r.add_argument("--v-rate0", type=float, help="assumed filling rate, ml/min")
    r.add_argument("--q0", type=float, help="assumed voiding flow, ml/s")
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("features", help="per-window feature CSV for a session")
    f.add_argument("--session", required=True)
    f.add_argument("--meta", required=True)
    f.add_argument("--labels")
    f.add_argument("--window-len", type=float)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_features)

    c = sub.add_parser("corpus", help="balanced labelled feature corpus from simulated filling sessions")
    c.add_argument("--n-windows", type=int, default=2000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--unbalanced", action="store_true")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_corpus)

    t = sub.add_parser("train", help="fit a classifier, optionally with k-fold CV")
    t.add_argument("--features", required=True, help="labelled feature CSV")
    t.add_argument("--model", choices=["svm", "mlp"], default="svm")
    t.add_argument("--feature-set", type=_feature_set_arg, default=1, help="feature set id 1-5")
    t.add_argument("--kfold", type=int, default=10, help="folds for CV (0 skips CV)")
    t.add_argument("--gamma", type=float, default=0.1, help="RBF width")
    t.add_argument("--C", type=float, default=100.0, help="SVM box constraint")
    t.add_argument("--epochs", type=int, default=500)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="metrics of a model or of given predictions")
    e.add_argument("--features", required=True, help="labelled feature CSV")
    g = e.add_mutually_exclusive_group()
    g.add_argument("--model-file")
    g.add_argument("--predictions", help="labels CSV (window,label), one row per feature row")
    e.add_argument("--out", required=True, help="metrics CSV")
    e.set_defaults(func=cmd_eval)

    k = sub.add_parser("rank", help="rank the 55 features")
    k.add_argument("--features", required=True)
    k.add_argument("--method", choices=["mrmr", "rfe"], default="mrmr")
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_rank)

    o = sub.add_parser("report", help="endpoint and Bland-Altman report")
    o.add_argument("--cases", required=True, help="CSV case_id,ground_truth_ml,estimate_ml")
    o.add_argument("--trace", action="append", type=_parse_trace_arg, metavar="CASE:STEPS:TRUTH",
                   help="steps CSV and truth trace of a case; repeatable")
    o.add_argument("--context", choices=["filling", "voiding"], default="filling",
                   help="context of the traces (sets the Bland-Altman spacing)")
    o.add_argument("--out", required=True, help="output directory")
    o.set_defaults(func=cmd_report)
    for sp in sub.choices.values():
        # accepted after the command name too; _apply_config reads it
        sp.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv) -> None:
    """Install config-file values as parser defaults so flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        doc = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config {known.config}: {exc}")
    if not isinstance(doc, dict):
        parser.error("config must be a JSON object keyed by command")
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices
    for cmd, values in doc.items():
        if cmd not in subs or not isinstance(values, dict):
            parser.error(f"config: unknown command section {cmd!r}")
        sp = subs[cmd]
        by_dest = {a.dest: a for a in sp._actions}
        for key, val in values.items():
            dest = key.replace("-", "_")
            if dest not in by_dest or dest in ("help", "func", "config"):
                parser.error(f"config: unknown option {key!r} for {cmd}")
            act = by_dest[dest]
            if act.type is parse_artefact:
                val = [parse_artefact(v) for v in val]
            elif act.type is not None and val is not None:
                val = act.type(str(val))
            sp.set_defaults(**{dest: val})
            act.required = False


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        a = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return a.func(a)
    except (UnknownFeatureSet, UsageError) as exc:
        print(f"bladdervol: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"bladdervol: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (BladderVolError, OSError, ValueError) as exc:
        print(f"bladdervol: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
