"""Power-quality and switching metrics over simulation traces."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Mapping, Optional

import numpy as np

from .model import DomainError
from .sim import CLAMPED, Trace

DEFAULT_MAX_HARMONIC = 40
DEFAULT_PERIODS = 6


class UndefinedMetric(DomainError):
    """Metric undefined on this input (zero fundamental, zero RMS)."""


def _periods(n_samples: int, f_r: float, sample_rate: float, tol: float = 1e-6) -> int:
    cycles = n_samples * f_r / sample_rate
    k = int(round(cycles))
    if k < 1 or abs(cycles - k) > tol * max(1.0, cycles):
        raise DomainError(f"window holds {cycles:.6f} line periods; need an integer count")
    return k


def harmonic_magnitudes(signal, f_r: float, sample_rate: float,
                        max_harmonic: int = DEFAULT_MAX_HARMONIC) -> np.ndarray:
    """Amplitudes ``M_h`` for h = 0..max_harmonic by direct correlation.

    Exact for integer-period windows; entry 0 is the mean.
    """
    x = np.asarray(signal, dtype=float)
    if sample_rate <= 2 * max_harmonic * f_r:
        raise DomainError("sample rate too low for the requested harmonic range")
    _periods(x.size, f_r, sample_rate)
    n = np.arange(x.size)
    out = np.empty(max_harmonic + 1)
    out[0] = x.mean()
    for h in range(1, max_harmonic + 1):
        z = np.exp(-2j * np.pi * h * f_r * n / sample_rate)
        out[h] = 2.0 * abs(np.dot(x, z)) / x.size
    return out


def thd(signal, f_r: float, sample_rate: float, max_harmonic: int = DEFAULT_MAX_HARMONIC) -> float:
    """``sqrt(sum_{h>=2} M_h^2) / M_1`` over an integer number of line periods."""
    M = harmonic_magnitudes(signal, f_r, sample_rate, max_harmonic)
    if not M[1] > 0 or M[1] < 1e-12 * max(1.0, np.max(np.abs(signal))):
        raise UndefinedMetric("fundamental component is zero")
    return float(math.sqrt(np.sum(M[2:] ** 2)) / M[1])


def power_factor(v, i, f_r: float, sample_rate: float) -> float:
    """``mean(v i) / (rms(v) rms(i))`` over an integer-period window."""
    v = np.asarray(v, dtype=float)
    i = np.asarray(i, dtype=float)
    if v.shape != i.shape:
        raise DomainError("voltage and current windows differ in length")
    _periods(v.size, f_r, sample_rate)
    rv = math.sqrt(np.mean(v * v))
    ri = math.sqrt(np.mean(i * i))
    if rv == 0 or ri == 0:
        raise UndefinedMetric("zero RMS signal")
    return float(np.mean(v * i) / (rv * ri))


def output_stats(trace: Trace, window: Optional[tuple] = None) -> tuple[float, float]:
    """Mean and peak-to-peak output voltage over ``window``."""
    w = trace if window is None else trace.window(*window)
    if len(w) == 0:
        raise DomainError("empty window")
    return float(w.v_C.mean()), float(w.v_C.max() - w.v_C.min())


def _gate_code(trace: Trace) -> np.ndarray:
    g = trace.gates
    return g[:, 0] * 2 + g[:, 1]


def switching_stats(trace: Trace, bins: int = 20) -> tuple[float, dict]:
    """Average switching frequency and the dwell-time histogram of gate states.

    A switching period holds two gate transitions, so the average frequency is
    ``transitions / (2 duration)``.
    """
    if len(trace) < 2:
        return 0.0, {"edges": [], "counts": []}
    step = trace.t[1] - trace.t[0]
    duration = len(trace) * step
    code = _gate_code(trace)
    changes = np.flatnonzero(np.diff(code) != 0)
    freq = changes.size / (2.0 * duration)
    if changes.size < 2:
        return float(freq), {"edges": [], "counts": []}
    dwell = np.diff(changes) * step
    counts, edges = np.histogram(dwell, bins=bins)
    return float(freq), {"edges": edges.tolist(), "counts": counts.tolist(),
                         "mean": float(dwell.mean()), "min": float(dwell.min()),
                         "max": float(dwell.max())}


@dataclass
class MetricsReport:
    thd_i: float
    thd_v: float
    power_factor: float
    p_in_avg: float
    v_o_mean: float
    v_o_ripple_pp: float
    i_rms: float
    avg_switching_freq: float
    clamp_duty: float
    window: tuple

    def __post_init__(self):
        # PF <= 1 by Cauchy-Schwarz; a negative value (net reverse flow) is kept visible
        if self.power_factor > 1.0 + 1e-9:
            raise DomainError("power factor above 1")
        if self.thd_i < 0 or self.thd_v < 0:
            raise DomainError("THD must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        d["schema"] = "tpbr-metrics/1"
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


METRICS_KEYS = ("thd_i", "thd_v", "power_factor", "p_in_avg", "v_o_mean", "v_o_ripple_pp",
                "i_rms", "avg_switching_freq", "clamp_duty", "window")


def steady_window(trace: Trace, f_r: float, periods: int = DEFAULT_PERIODS,
                  end: Optional[float] = None) -> tuple[float, float]:
    """Last ``periods`` whole line periods of the trace, ending at a sample boundary."""
    step = trace.t[1] - trace.t[0]
    stop = trace.t[-1] + step if end is None else end
    samples_per_period = 1.0 / (f_r * step)
    n = int(round(periods * samples_per_period))
    if abs(n - periods * samples_per_period) > 1e-6 * n:
        raise DomainError("sample rate is not an integer multiple of the line frequency "
                          f"({samples_per_period:.6f} samples per period)")
    start = stop - n * step
    if start < trace.t[0] - 1e-12:
        raise DomainError("trace shorter than the requested window")
    return (float(start), float(stop))


def compute_metrics(trace: Trace, f_r: Optional[float] = None, periods: int = DEFAULT_PERIODS,
                    window: Optional[tuple] = None,
                    max_harmonic: int = DEFAULT_MAX_HARMONIC) -> MetricsReport:
    """All steady-state metrics over the last ``periods`` line periods (or ``window``)."""
    f_r = f_r if f_r is not None else trace.meta.get("f_r", 60.0)
    window = window or steady_window(trace, f_r, periods)
    w = trace.window(*window)
    fs = trace.sample_rate
    v_mean, ripple = output_stats(w)
    freq, _ = switching_stats(w)
    return MetricsReport(
        thd_i=thd(w.i_L, f_r, fs, max_harmonic),
        thd_v=thd(w.v_in, f_r, fs, max_harmonic),
        power_factor=power_factor(w.v_in, w.i_L, f_r, fs),
        p_in_avg=float(np.mean(w.v_in * w.i_L)),
        v_o_mean=v_mean,
        v_o_ripple_pp=ripple,
        i_rms=float(math.sqrt(np.mean(w.i_L ** 2))),
        avg_switching_freq=freq,
        clamp_duty=float(np.mean(w.mode == CLAMPED)),
        window=tuple(window),
    )


@dataclass
class TrendRow:
    kind: str  # "power" or "voltage"
    fixed: float
    lesser: tuple
    greater: tuple
    thd_lesser: float
    thd_greater: float

    @property
    def passed(self) -> bool:
        return self.thd_greater > self.thd_lesser

    def describe(self) -> str:
        return (f"THD{self.greater} = {self.thd_greater:.4f} > THD{self.lesser} = "
                f"{self.thd_lesser:.4f}")


def _thd_of(entry) -> float:
    if isinstance(entry, MetricsReport):
        return entry.thd_i
    if isinstance(entry, Mapping):
        return float(entry["thd_i"])
    return float(entry)


@dataclass
class TrendReport:
    rows: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_dict(self) -> dict:
        return {"schema": "tpbr-trend/1", "passed": self.passed,
                "rows": [{"kind": r.kind, "fixed": r.fixed, "expect_greater": list(r.greater),
                          "expect_lesser": list(r.lesser), "thd_greater": r.thd_greater,
                          "thd_lesser": r.thd_lesser, "passed": r.passed} for r in self.rows]}

    def table(self) -> str:
        lines = [f"{'trend':<8} {'greater (V, W)':>16} {'lesser (V, W)':>16} "
                 f"{'THD greater':>12} {'THD lesser':>12}  result"]
        for r in self.rows:
            lines.append(f"{r.kind:<8} {str(r.greater):>16} {str(r.lesser):>16} "
                         f"{r.thd_greater:>12.5f} {r.thd_lesser:>12.5f}  "
                         f"{'pass' if r.passed else 'FAIL'}")
        return "\n".join(lines)


def trend_report(metrics: Mapping) -> TrendReport:
    """Check that THD rises as output power falls and as input voltage rises.

    ``metrics`` maps ``(V_rms, P_o)`` to a :class:`MetricsReport`, a metrics
    dict or a bare THD value.  Comparisons run between the extreme levels of
    each axis present: for every voltage, THD at the lowest power must exceed
    THD at the highest; for every power, THD at the highest voltage must exceed
    THD at the lowest.  An axis with a single level contributes no rows; a grid
    missing one of its extreme corners is rejected.
    """
    keys = [(float(v), float(p)) for v, p in metrics]
    values = {(float(v), float(p)): _thd_of(e) for (v, p), e in metrics.items()}
    if not keys:
        raise DomainError("empty metrics grid")
    volts = sorted({v for v, _ in keys})
    powers = sorted({p for _, p in keys})
    corners = {(v, p) for v in (volts[0], volts[-1]) for p in (powers[0], powers[-1])}
    missing = sorted(corners - set(values))
    if missing:
        raise DomainError(f"grid is missing corner(s) {missing}")
    rows = []
    if len(powers) > 1:
        for v in (volts[0], volts[-1]) if len(volts) > 1 else volts:
            lo, hi = (v, powers[-1]), (v, powers[0])
            rows.append(TrendRow("power", v, lo, hi, values[lo], values[hi]))
    if len(volts) > 1:
        for p in (powers[0], powers[-1]) if len(powers) > 1 else powers:
            lo, hi = (volts[0], p), (volts[-1], p)
            rows.append(TrendRow("voltage", p, lo, hi, values[lo], values[hi]))
    return TrendReport(rows)
