"""Every CLI command once, on small inputs with fixed seeds."""

from pathlib import Path

from bladdervol.cli import main

# wall-clock timings are the only non-data output
NON_DATA = {"timing.json"}

CASES = "case_id,ground_truth_ml,estimate_ml\nA,100,110\nB,200,190\nC,300,310\n"


def run_all(root: Path) -> dict:
    """Run the commands in dependency order; returns command -> exit code."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "cases.csv").write_text(CASES)
    sim, codes = root / "sim", {}

    def go(name, *args):
        codes[name] = main([str(x) for x in args])

    go("simulate", "simulate", "--kind", "filling", "--duration", 8, "--seed", 3,
       "--artefact", "positive_drift:120:180:5", "--out", sim)
    go("simulate-voiding", "simulate", "--kind", "voiding", "--seed", 3, "--out", root / "void")
    go("run", "run", "--session", sim / "session.csv", "--meta", sim / "meta.json",
       "--labels", sim / "labels.csv", "--truth", sim / "truth.csv", "--out", root / "run")
    go("features", "features", "--session", sim / "session.csv", "--meta", sim / "meta.json",
       "--labels", sim / "labels.csv", "--out", root / "features.csv")
    go("corpus", "corpus", "--n-windows", 80, "--seed", 1, "--out", root / "corpus.csv")
    go("train-svm", "train", "--features", root / "corpus.csv", "--model", "svm", "--kfold", 3, "--out", root / "svm")
    go("train-mlp", "train", "--features", root / "corpus.csv", "--model", "mlp", "--epochs", 20,
       "--kfold", 3, "--out", root / "mlp")
    go("eval", "eval", "--features", root / "corpus.csv", "--model-file", root / "mlp" / "model.json",
       "--out", root / "eval.csv")
    go("rank-mrmr", "rank", "--features", root / "corpus.csv", "--method", "mrmr", "--out", root / "mrmr.csv")
    go("rank-rfe", "rank", "--features", root / "corpus.csv", "--method", "rfe", "--out", root / "rfe.csv")
    go("run-model", "run", "--session", sim / "session.csv", "--meta", sim / "meta.json",
       "--model", root / "svm" / "model.json", "--out", root / "run_model")
    go("report", "report", "--cases", root / "cases.csv",
       "--trace", f"S:{root / 'run' / 'steps.csv'}:{sim / 'truth.csv'}", "--out", root / "report")
    return codes


def data_files(root: Path) -> dict:
    root = Path(root)
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.name not in NON_DATA}
