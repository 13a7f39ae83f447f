import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tpbr.analysis import (METRICS_KEYS, MetricsReport, UndefinedMetric, compute_metrics,
                           harmonic_magnitudes, output_stats, power_factor, steady_window,
                           switching_stats, thd, trend_report)
from tpbr.model import DomainError
from tpbr.sim import Trace

F = 60.0
FS = 60 * 1800.0
N = 1800 * 4
T = np.arange(N) / FS
W = 2 * np.pi * F


def _sine(*harmonics, phase=0.0):
    x = np.sin(W * T + phase)
    for h, a, p in harmonics:
        x = x + a * np.sin(h * W * T + p)
    return x


def _trace(i, v_c=None, v_in=None, mode=None, fs=FS):
    n = len(i)
    t = np.arange(n) / fs
    return Trace(t, np.asarray(i, float), np.full(n, 380.0) if v_c is None else v_c,
                 np.sin(W * t) if v_in is None else v_in, np.zeros(n),
                 np.ones(n, dtype=np.int8) if mode is None else mode, {"f_r": F})


def test_thd_oracles():
    assert thd(_sine(), F, FS) == pytest.approx(0.0, abs=1e-12)
    assert thd(_sine((3, 0.08, 0.0)), F, FS) == pytest.approx(0.08, abs=1e-6)
    assert thd(_sine((5, 0.03, 0.4), (7, 0.04, 1.0)), F, FS) == pytest.approx(0.05, abs=1e-6)


def test_harmonic_magnitudes_and_errors():
    M = harmonic_magnitudes(2.0 + 3.0 * _sine((2, 0.5, 0.0)), F, FS, 5)
    np.testing.assert_allclose(M, [2.0, 3.0, 1.5, 0, 0, 0], atol=1e-9)
    with pytest.raises(UndefinedMetric):
        thd(np.zeros(N), F, FS)
    with pytest.raises(DomainError):
        thd(_sine()[:-7], F, FS)
    with pytest.raises(DomainError):
        thd(_sine(), F, FS, max_harmonic=1000)


def test_power_factor_oracles():
    v = _sine()
    assert power_factor(v, 2 * v, F, FS) == pytest.approx(1.0, abs=1e-12)
    assert power_factor(v, _sine(phase=math.pi / 3), F, FS) == pytest.approx(0.5, abs=1e-9)
    assert power_factor(v, _sine((3, 0.1, 0.0)), F, FS) == pytest.approx(0.99504, abs=1e-5)
    with pytest.raises(UndefinedMetric):
        power_factor(v, np.zeros(N), F, FS)
    with pytest.raises(DomainError):
        power_factor(v, v[:-1], F, FS)


@given(scale=st.floats(1e-3, 1e3), shift=st.integers(0, N - 1),
       a3=st.floats(0, 0.5), p3=st.floats(-math.pi, math.pi))
def test_thd_and_pf_invariances(scale, shift, a3, p3):
    x = _sine((3, a3, p3))
    base = thd(x, F, FS)
    assert thd(scale * x, F, FS) == pytest.approx(base, rel=1e-9, abs=1e-12)
    assert thd(np.roll(x, shift), F, FS) == pytest.approx(base, rel=1e-9, abs=1e-12)
    v = _sine()
    pf = power_factor(v, x, F, FS)
    assert -1 - 1e-12 <= pf <= 1 + 1e-12
    assert power_factor(v, scale * x, F, FS) == pytest.approx(pf, rel=1e-9, abs=1e-12)
    assert power_factor(v, -x, F, FS) == pytest.approx(-pf, rel=1e-9, abs=1e-12)


def test_output_stats():
    v = 380 + 4 * _sine()
    mean, pp = output_stats(_trace(np.ones(N), v_c=v))
    assert mean == pytest.approx(380.0, abs=1e-9)
    assert pp == pytest.approx(8.0, rel=1e-4)
    with pytest.raises(DomainError):
        output_stats(_trace(np.ones(N)), window=(10.0, 11.0))


def test_switching_stats():
    fs = 6.48e6
    assert switching_stats(_trace(np.ones(1000), fs=fs))[0] == 0.0
    period = np.r_[np.ones(50), 2 * np.ones(50)].astype(np.int8)
    mode = np.tile(period, 2000)
    freq, hist = switching_stats(_trace(np.ones(mode.size), mode=mode, fs=fs))
    assert freq == pytest.approx(64.8e3, rel=1e-3)
    assert hist["mean"] == pytest.approx(50 / fs)
    # modes 2 and 4 share a gate state, so 2 -> 4 is not a switching event
    same = np.tile(np.array([2, 4], dtype=np.int8), 500)
    assert switching_stats(_trace(np.ones(same.size), mode=same, fs=fs))[0] == 0.0


def test_compute_metrics_on_synthetic_trace(tmp_path):
    n = 1800 * 8
    t = np.arange(n) / FS
    v_in = 170 * np.sin(W * t)
    i = 3.5 * np.sin(W * t) + 0.35 * np.sin(3 * W * t)
    tr = _trace(i, v_in=v_in)
    rep = compute_metrics(tr, periods=6)
    assert rep.window == pytest.approx((2 / 60, 8 / 60))
    assert rep.thd_i == pytest.approx(0.1, abs=1e-6)
    assert rep.thd_v == pytest.approx(0.0, abs=1e-9)
    assert rep.p_in_avg == pytest.approx(170 * 3.5 / 2, rel=1e-9)
    assert rep.clamp_duty == 0.0
    doc = json.loads(rep.to_json(tmp_path / "m.json"))
    assert set(METRICS_KEYS) <= set(doc) and doc["schema"] == "tpbr-metrics/1"
    with pytest.raises(DomainError):
        steady_window(tr, F, periods=20)
    with pytest.raises(DomainError):
        steady_window(_trace(i, v_in=v_in, fs=1000.7 * 60), F)


def test_metrics_report_validation():
    args = dict(thd_i=0.1, thd_v=0.0, power_factor=0.99, p_in_avg=1, v_o_mean=380,
                v_o_ripple_pp=1, i_rms=1, avg_switching_freq=1, clamp_duty=0, window=(0, 1))
    MetricsReport(**args)
    with pytest.raises(DomainError):
        MetricsReport(**{**args, "power_factor": 1.01})
    with pytest.raises(DomainError):
        MetricsReport(**{**args, "thd_i": -0.1})


def test_trend_examples():
    good = {(85, 25): 0.09, (85, 300): 0.025, (250, 25): 0.8, (250, 300): 0.077}
    rep = trend_report(good)
    assert rep.passed and len(rep.rows) == 4
    assert "pass" in rep.table() and rep.to_dict()["schema"] == "tpbr-trend/1"
    flat = trend_report({k: 0.05 for k in good})
    assert not flat.passed and not any(r.passed for r in flat.rows)
    swapped = dict(good)
    swapped[(85, 25)], swapped[(85, 300)] = good[(85, 300)], good[(85, 25)]
    bad = trend_report(swapped)
    assert [r.passed for r in bad.rows] == [False, True, True, False]


def test_trend_single_voltage_and_missing_corner():
    rep = trend_report({(120, 25): {"thd_i": 0.1}, (120, 300): {"thd_i": 0.03}})
    assert [r.kind for r in rep.rows] == ["power"] and rep.passed
    with pytest.raises(DomainError):
        trend_report({(85, 25): 0.1, (85, 300): 0.03, (250, 25): 0.5})
    with pytest.raises(DomainError):
        trend_report({})
