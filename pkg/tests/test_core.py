import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bladdervol.core import (
    ArtefactLabel,
    MeasurementContext,
    PreconditionError,
    SchemaError,
    SessionMeta,
    SessionRecording,
    VolumeTrace,
    read_labels,
    read_meta,
    read_session,
    read_trace,
    validate_session,
    write_labels,
    write_meta,
    write_session,
    write_trace,
)

from conftest import make_recording


def test_clean_session_validates():
    rec = make_recording(np.full(100, 500.0))
    rep = validate_session(rec)
    assert rep.ok and rep.issues == ()


def test_repeated_timestamp_fails():
    t = np.arange(10) * 0.3
    t[5] = t[4]
    rep = validate_session(make_recording(np.full(10, 500.0), t=t))
    assert not rep.ok
    assert [i.kind for i in rep.errors] == ["non-monotone t"]


def test_gap_is_a_warning_only():
    t = np.r_[np.arange(5) * 0.3, 1.2 + 1.2 + np.arange(5) * 0.3]
    rep = validate_session(make_recording(np.full(10, 500.0), t=t))
    assert rep.ok
    assert [i.kind for i in rep.warnings] == ["gap"]


def test_nonfinite_and_nonpositive_impedance_fail():
    bi = np.full(6, 500.0)
    bi[2] = np.nan
    bi[4] = -1.0
    kinds = {i.kind for i in validate_session(make_recording(bi)).errors}
    assert kinds == {"non-finite", "non-positive impedance"}


def test_validate_is_pure():
    rec = make_recording(np.linspace(500, 490, 50))
    assert validate_session(rec) == validate_session(rec)


def test_meta_defaults_and_band():
    assert SessionMeta("S", "filling", 0.05).window_len == 30.0
    assert SessionMeta("S", MeasurementContext.VOIDING, 0.05).window_len == 1.0
    with pytest.raises(PreconditionError):
        SessionMeta("S", "filling", 0.6)
    with pytest.raises(SchemaError):
        MeasurementContext.parse("emptying")


def test_label_codes_are_fixed():
    assert [int(x) for x in ArtefactLabel] == [0, 1, 2, 3]
    assert ArtefactLabel.L1.description == "high variance noise"


def test_volume_trace_invariants():
    with pytest.raises(PreconditionError):
        VolumeTrace([0, 0], [1, 2])
    with pytest.raises(PreconditionError):
        VolumeTrace([0, 1], [1, -2])
    tr = VolumeTrace([0.0, 10.0], [0.0, 100.0])
    assert tr.at(5.0) == pytest.approx(50.0)
    assert tr.at(20.0) == 100.0


finite = st.floats(min_value=1.0, max_value=5000.0, allow_nan=False, allow_infinity=False)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(finite, finite, finite, finite, finite), min_size=1, max_size=30),
       st.floats(min_value=0.006, max_value=0.49))
def test_session_round_trip_is_bit_exact(tmp_path_factory, rows, delta):
    d = tmp_path_factory.mktemp("rt")
    arr = np.array(rows)
    t = np.cumsum(np.full(len(rows), 0.3)) - 0.3 + 1e-7 * np.arange(len(rows))
    gt = VolumeTrace([0.0, 1.0 / 3.0], [0.0, 2.0 / 3.0])
    meta = SessionMeta("S9", "voiding", delta, ground_truth=gt)
    rec = SessionRecording(t, arr[:, 0], arr[:, 1:], meta)
    write_session(rec, d / "s.csv", d / "m.json")
    back = read_session(d / "s.csv", d / "m.json")
    assert back == rec
    assert back.meta.ground_truth == gt


def test_bad_header_is_schema_error(tmp_path):
    rec = make_recording(np.full(5, 500.0))
    write_session(rec, tmp_path / "s.csv")
    text = (tmp_path / "s.csv").read_text().replace("bi_ohm", "bi")
    (tmp_path / "s.csv").write_text(text)
    with pytest.raises(SchemaError):
        read_session(tmp_path / "s.csv", rec.meta)


def test_meta_json_keys(tmp_path):
    write_meta(SessionMeta("S1", "filling", 0.05), tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    assert set(doc) == {"subject_id", "context", "delta_ohm_per_ml", "window_len_s", "ground_truth"}
    assert read_meta(tmp_path / "m.json").context is MeasurementContext.FILLING
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(SchemaError):
        read_meta(tmp_path / "bad.json")


def test_trace_and_label_files(tmp_path):
    tr = VolumeTrace([0.0, 0.3, 0.6], [0.0, 0.1, 0.30000000000000004])
    write_trace(tr, tmp_path / "tr.csv")
    assert read_trace(tmp_path / "tr.csv") == tr
    labs = [ArtefactLabel.L0, ArtefactLabel.L3, ArtefactLabel.L2]
    write_labels(labs, tmp_path / "l.csv")
    assert read_labels(tmp_path / "l.csv") == labs
