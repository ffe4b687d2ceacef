"""Versioned JSON model files."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..core import SchemaError
from .data import Standardizer
from .mlp import MlpModel
from .svm import BinarySvm, SvmModel

FORMAT = "bladdervol-model"
VERSION = 1


def model_to_dict(model, feature_set: int | None = None, scaler: Standardizer | None = None) -> dict:
    doc = {"format": FORMAT, "version": VERSION, "feature_set": feature_set,
           "standardization": scaler.to_dict() if scaler else None}
    if isinstance(model, SvmModel):
        doc.update(kind="svm", gamma=model.gamma, C=model.C, n_features=model.n_features, machines=[
            None if m is None else {
                "support_vectors": m.support_vectors.tolist(),
                "coef": m.coef.tolist(),
                "bias": m.bias,
                "kernel": m.kernel,
            }
            for m in model.machines
        ])
    elif isinstance(model, MlpModel):
        doc.update(kind="mlp", arch=list(model.arch),
                   weights=[w.tolist() for w in model.weights],
                   biases=[b.tolist() for b in model.biases])
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    return doc


def model_from_dict(doc: dict):
    """Inverse of :func:`model_to_dict`; returns (model, feature_set, scaler)."""
    if doc.get("format") != FORMAT:
        raise SchemaError("not a model file")
    if doc.get("version") != VERSION:
        raise SchemaError(f"unsupported model version {doc.get('version')}")
    try:
        scaler = Standardizer.from_dict(doc["standardization"]) if doc.get("standardization") else None
        if doc["kind"] == "svm":
            n_feat = int(doc["n_features"])
            machines = tuple(
                None if m is None else BinarySvm(
                    np.asarray(m["support_vectors"], dtype=float).reshape(-1, n_feat),
                    np.asarray(m["coef"], dtype=float),
                    float(m["bias"]),
                    m.get("kernel", "rbf"),
                    float(doc["gamma"]),
                    float(doc["C"]),
                )
                for m in doc["machines"]
            )
            model = SvmModel(machines, float(doc["gamma"]), float(doc["C"]), n_feat)
        elif doc["kind"] == "mlp":
            model = MlpModel(tuple(np.asarray(w, dtype=float) for w in doc["weights"]),
                             tuple(np.asarray(b, dtype=float) for b in doc["biases"]))
        else:
            raise SchemaError(f"unknown model kind {doc['kind']!r}")
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed model file: {exc}") from exc
    return model, doc.get("feature_set"), scaler


def save_model(path, model, feature_set=None, scaler=None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, feature_set, scaler), indent=1) + "\n")


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    return model_from_dict(doc)
