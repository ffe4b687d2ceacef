import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bladdervol.core import MeasurementContext, PreconditionError, VolumeTrace
from bladdervol.evaluate import (
    TooFewPairs,
    UndefinedSpreadWarning,
    bland_altman,
    emit_report,
    endpoint_errors,
    intermediate_pairs,
    read_endpoints,
    session_truth,
    truth_change,
)
from bladdervol.estimate import StepResult

from reference import TABLE_II, printed_step


def table_cases():
    return [(c, gt, ev) for c, gt, ev, _ in TABLE_II]


@pytest.mark.parametrize("case,gt,ev,printed", TABLE_II)
def test_table_rows(case, gt, ev, printed):
    # the printed errors are cut at the shown precision, not rounded (BV6, BV7)
    delta = endpoint_errors([(case, gt, ev)] * 2).errors[0].delta_err
    assert abs(delta - printed) < printed_step(printed)


def test_table_mean():
    s = endpoint_errors(table_cases())
    assert s.mean == pytest.approx(-29.65, abs=0.01)
    assert s.sd_defined


def test_table_spread_is_population_sd():
    # the published +-87.6 ml matches the n-denominator SD; the n-1 SD is larger
    s = endpoint_errors(table_cases())
    assert s.sd_population == pytest.approx(87.6, abs=0.5)
    assert s.sd == pytest.approx(90.88, abs=0.01)


def test_single_case():
    with pytest.warns(UndefinedSpreadWarning):
        s = endpoint_errors([(691.0, 685.0)])
    assert (s.errors[0].delta_err, s.mean, s.sd, s.sd_defined) == (-6.0, -6.0, 0.0, False)
    with pytest.raises(PreconditionError):
        endpoint_errors([])


def test_bland_altman_examples():
    same = bland_altman([(5.0, 5.0), (7.0, 7.0), (9.0, 9.0)])
    assert (same.bias, same.loa_upper, same.loa_lower) == (0.0, 0.0, 0.0)
    s = bland_altman([(11.0, 10.0), (9.0, 10.0)])
    assert s.bias == 0.0 and s.sd_diff == pytest.approx(np.sqrt(2))
    assert s.loa_upper == pytest.approx(2.772, abs=1e-3)
    assert s.loa_upper == pytest.approx(1.96 * np.sqrt(2), abs=1e-12)
    assert s.loa_lower == -s.loa_upper
    with pytest.raises(TooFewPairs):
        bland_altman([(1.0, 2.0)])


pairs_st = st.lists(st.tuples(st.floats(0, 1000), st.floats(0, 1000)), min_size=2, max_size=40)


@settings(max_examples=60, deadline=None)
@given(pairs_st, st.floats(0.01, 100))
def test_bland_altman_scales(pairs, c):
    a = bland_altman(pairs)
    b = bland_altman([(c * e, c * t) for e, t in pairs])
    tol = 1e-9 * c * 1000
    assert b.bias == pytest.approx(c * a.bias, abs=tol)
    assert b.loa_upper == pytest.approx(c * a.loa_upper, abs=tol)
    assert b.loa_lower == pytest.approx(c * a.loa_lower, abs=tol)


@settings(max_examples=60, deadline=None)
@given(pairs_st)
def test_bland_altman_symmetry_and_bias(pairs):
    s = bland_altman(pairs)
    assert abs((s.loa_upper - s.bias) - (s.bias - s.loa_lower)) <= 1e-12 * max(1.0, abs(s.loa_upper))
    assert s.loa_upper >= s.bias >= s.loa_lower
    assert s.bias == pytest.approx(endpoint_errors([(t, e) for e, t in pairs]).mean, abs=1e-9)


# ------------------------------------------------------------------ pairing


def test_truth_change_sign():
    tr = VolumeTrace([0.0, 10.0], [100.0, 0.0])
    assert truth_change(tr, MeasurementContext.VOIDING, 0.0, 5.0) == pytest.approx(50.0)
    assert session_truth(tr, MeasurementContext.VOIDING) == 100.0
    fill = VolumeTrace([0.0, 10.0], [0.0, 40.0])
    assert session_truth(fill, "filling") == 40.0


def test_intermediate_pairs_spacing():
    steps = [StepResult(i, 15.0 + 30.0 * i, 3, False, 0.0, 0.0, 0.0, float(i)) for i in range(10)]
    tr = VolumeTrace([0.0, 300.0], [0.0, 10.0])
    p = intermediate_pairs(steps, tr, MeasurementContext.FILLING)
    assert p.shape == (4, 2)
    assert np.allclose(p[:, 0], [2.0, 4.0, 6.0, 8.0])
    assert np.allclose(p[:, 1], [2.0, 4.0, 6.0, 8.0])


# ----------------------------------------------------------------- reporting


def test_emit_report_files_and_determinism(tmp_path):
    rng = np.random.default_rng(0)
    cases = [(f"C{k:02d}", float(gt), float(gt + rng.normal(0, 30))) for k, gt in enumerate(rng.uniform(200, 700, 14))]
    t = np.linspace(0, 50, 60)
    traces = {"BV3": (t, 14.0 * t, 14.5 * t)}
    a = emit_report(cases, tmp_path / "a", traces=traces)
    b = emit_report(cases, tmp_path / "b", traces=traces)
    assert [p.name for p in a] == ["endpoints.csv", "agreement.csv", "bland_altman.svg", "traces.svg"]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    assert "max error" in (tmp_path / "a" / "traces.svg").read_text()
    back = read_endpoints(a[0])
    assert [(e.case_id, e.ground_truth, e.estimate) for e in back] == cases


def test_emit_report_rejects_bad_input(tmp_path):
    with pytest.raises(PreconditionError):
        emit_report([], tmp_path)
    with pytest.raises(PreconditionError):
        emit_report([("A", 1.0, 2.0), ("A", 3.0, 4.0)], tmp_path)
