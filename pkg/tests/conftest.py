import logging
import time

import numpy as np
import pytest

from bladdervol.core import MeasurementContext, SessionMeta, SessionRecording


@pytest.fixture(autouse=True)
def _quiet_window_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="bladdervol")


def make_recording(bi, se=None, t=None, context="filling", delta=0.05, window_len=None):
    bi = np.asarray(bi, dtype=float)
    t = np.arange(bi.size) * 0.3 if t is None else np.asarray(t, dtype=float)
    if se is None:
        se = np.tile([400.0, 500.0, 600.0, 700.0], (bi.size, 1))
    meta = SessionMeta("T01", MeasurementContext.parse(context), delta, window_len=window_len)
    return SessionRecording(t, bi, se, meta)


@pytest.fixture(scope="session")
def corpus():
    """The 2000-window balanced corpus used by the classifier checks."""
    from bladdervol.simulate import labeled_corpus

    logging.getLogger("bladdervol").setLevel(logging.ERROR)
    return labeled_corpus(2000, seed=0)


@pytest.fixture(scope="session")
def cv_on_corpus(corpus):
    """Memoised 10-fold CV on the corpus: ``cv_on_corpus(model, feature_set_id)``."""
    from bladdervol.classify import LabeledDataset, kfold_cv, mlp_trainer, svm_trainer
    from bladdervol.features import feature_set

    X, y, _ = corpus
    cache = {}

    def run(model: str, fid: int):
        key = (model, fid)
        if key not in cache:
            ds = LabeledDataset(feature_set(fid).project(X), y, feature_set=fid)
            trainer = svm_trainer() if model == "svm" else mlp_trainer()
            t0 = time.perf_counter()
            m = kfold_cv(ds, 10, trainer, seed=0)
            cache[key] = (m, time.perf_counter() - t0)
        return cache[key]

    return run
