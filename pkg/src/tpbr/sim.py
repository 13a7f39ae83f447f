"""Fixed-step closed-loop simulation of the rectifier under the switching rule.

The plant is integrated with classic RK4 at step ``dt`` with input voltage and
load held over each step.  Because every mode is linear time-invariant over a
step, one RK4 step is exactly the affine map ``x -> M x + N b`` with
polynomial propagators ``M = sum_k (hA)^k / k!`` (k <= 4) and
``N = h sum_k (hA)^k / (k+1)!`` (k <= 3); these are precomputed per
(load segment, mode) so the inner loop is a 2x2 multiply-add.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
import scipy.linalg

from .control import GATES, ReferencePolicy, ReferenceSpec, SwitchingLaw
from .model import AffineMode, ConverterParams, DomainError, Polarity, build_mode

log = logging.getLogger(__name__)

CLAMPED = 0  # AllOffClamped pseudo-mode id in traces
TRACE_COLUMNS = ("t", "i_L", "v_C", "v_in", "i_ref", "mode", "s1", "s2")
_CHUNK = 1 << 20


class SimulationAbort(RuntimeError):
    """Non-finite state; ``trace`` holds everything recorded before the failure."""

    def __init__(self, message, trace=None, diagnostic=""):
        super().__init__(message)
        self.trace = trace
        self.diagnostic = diagnostic


@dataclass(frozen=True)
class GridSpec:
    """Distorted grid source.

    ``harmonics`` is a sequence of ``(order, amplitude_fraction, phase)``
    relative to the fundamental.  With ``dc=True`` the source is the constant
    ``V_rms`` (plus noise), used for regulation tests around a fixed point.
    """

    V_rms: float = 120.0
    f_r: float = 60.0
    harmonics: tuple = ()
    noise_std: float = 0.0
    seed: int = 0
    dc: bool = False

    def __post_init__(self):
        harmonics = tuple((int(h), float(a), float(p)) for h, a, p in self.harmonics)
        object.__setattr__(self, "harmonics", harmonics)
        if not (math.isfinite(self.V_rms) and self.V_rms > 0):
            raise DomainError("V_rms must be > 0")
        if not self.f_r > 0:
            raise DomainError("f_r must be > 0")
        if self.noise_std < 0:
            raise DomainError("noise_std must be >= 0")
        for h, a, _ in harmonics:
            if h < 2:
                raise DomainError(f"harmonic order must be >= 2, got {h}")
            if a < 0:
                raise DomainError("harmonic amplitude fraction must be >= 0")

    @property
    def peak(self) -> float:
        return self.V_rms if self.dc else math.sqrt(2) * self.V_rms

    @property
    def harmonic_thd(self) -> float:
        return math.sqrt(sum(a * a for _, a, _ in self.harmonics))

    @property
    def thd_plus_noise(self) -> float:
        """Harmonic distortion with the white-noise RMS counted as distortion."""
        return math.hypot(self.harmonic_thd, self.noise_std / self.V_rms)


@dataclass(frozen=True)
class LoadProfile:
    segments: tuple = ((0.0, 481.33),)

    def __post_init__(self):
        segs = tuple((float(t), float(r)) for t, r in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise DomainError("load profile needs at least one segment")
        if segs[0][0] != 0.0:
            raise DomainError("first load segment must start at t = 0")
        for (t0, _), (t1, _) in zip(segs, segs[1:]):
            if not t1 > t0:
                raise DomainError("segment start times must be strictly increasing")
        if any(not (math.isfinite(r) and r > 0) for _, r in segs):
            raise DomainError("R_L must be > 0")

    @classmethod
    def constant(cls, R_L: float) -> "LoadProfile":
        return cls(((0.0, R_L),))

    @classmethod
    def for_power(cls, params: ConverterParams, power: float) -> "LoadProfile":
        return cls.constant(params.V_o ** 2 / power)

    def resistance_at(self, t: float) -> float:
        r = self.segments[0][1]
        for start, value in self.segments:
            if t >= start:
                r = value
        return r


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1.0 / (64.8e3 * 100)
    f_eval: float = 259.2e3
    t_end: float = 0.5
    x0: tuple = (0.0, 380.0)
    dcm_clamp: bool = True
    diode_drop: float = 0.0
    decimation: int = 6

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise DomainError("dt must be > 0")
        if not self.f_eval > 0:
            raise DomainError("f_eval must be > 0")
        if self.dt * self.f_eval > 1 + 1e-9:
            raise DomainError("dt * f_eval must be <= 1")
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise DomainError("t_end must be > 0")
        if int(self.decimation) < 1:
            raise DomainError("decimation must be >= 1")
        if self.diode_drop < 0:
            raise DomainError("diode_drop must be >= 0")
        if len(self.x0) != 2 or not all(math.isfinite(v) for v in self.x0):
            raise DomainError("x0 must be two finite numbers")

    @property
    def eval_every(self) -> int:
        """Integration steps per controller period."""
        return max(1, int(round(1.0 / (self.f_eval * self.dt))))

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_end / self.dt - 1e-9))


@dataclass
class Trace:
    t: np.ndarray
    i_L: np.ndarray
    v_C: np.ndarray
    v_in: np.ndarray
    i_ref: np.ndarray
    mode: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.t.size

    @property
    def sample_rate(self) -> float:
        return 1.0 / (self.t[1] - self.t[0]) if self.t.size > 1 else float("nan")

    @property
    def gates(self) -> np.ndarray:
        table = np.array([[0, 0], *[GATES[m] for m in (1, 2, 3, 4)]], dtype=np.int8)
        return table[self.mode]

    def window(self, t_start: float, t_end: float) -> "Trace":
        sel = (self.t >= t_start - 1e-12) & (self.t < t_end - 1e-12)
        return Trace(self.t[sel], self.i_L[sel], self.v_C[sel], self.v_in[sel],
                     self.i_ref[sel], self.mode[sel], dict(self.meta))

    def to_csv(self, path) -> None:
        g = self.gates
        cols = np.column_stack([self.t, self.i_L, self.v_C, self.v_in, self.i_ref,
                                self.mode, g[:, 0], g[:, 1]])
        fmt = ["%.12g"] * 5 + ["%d"] * 3
        np.savetxt(path, cols, delimiter=",", header=",".join(TRACE_COLUMNS), comments="",
                   fmt=fmt)

    @classmethod
    def from_csv(cls, path) -> "Trace":
        data = np.genfromtxt(path, delimiter=",", names=True)
        if tuple(data.dtype.names) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {data.dtype.names}")
        data = np.atleast_1d(data)
        return cls(data["t"], data["i_L"], data["v_C"], data["v_in"], data["i_ref"],
                   data["mode"].astype(np.int8))


def grid_voltage(spec: GridSpec, t, rng: Optional[np.random.Generator] = None):
    """Grid voltage at time(s) ``t``; one noise draw per sample when ``noise_std > 0``."""
    t = np.asarray(t, dtype=float)
    if spec.dc:
        v = np.full(t.shape, spec.V_rms)
    else:
        w = 2.0 * math.pi * spec.f_r
        v = np.sin(w * t)
        for h, a, phi in spec.harmonics:
            v = v + a * np.sin(h * w * t + phi)
        v = math.sqrt(2) * spec.V_rms * v
    if spec.noise_std > 0:
        if rng is None:
            raise DomainError("a seeded rng is required when noise_std > 0")
        v = v + rng.normal(0.0, spec.noise_std, size=t.shape)
    return v if v.ndim else float(v)


def rk4_propagators(A: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """``(M, N)`` such that one RK4 step of ``x' = A x + b`` is ``M x + N b``."""
    I = np.eye(A.shape[0])
    hA = h * A
    hA2 = hA @ hA
    hA3 = hA2 @ hA
    M = I + hA + hA2 / 2 + hA3 / 6 + hA3 @ hA / 24
    N = h * (I + hA / 2 + hA2 / 6 + hA3 / 24)
    return M, N


def exact_propagators(A: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Matrix exponential of the augmented system ``[[A, I], [0, 0]]``."""
    n = A.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = A
    aug[:n, n:] = np.eye(n)
    E = scipy.linalg.expm(aug * h)
    return E[:n, :n], E[:n, n:]


def step_state(mode: AffineMode, x, dt: float, method: str = "rk4") -> np.ndarray:
    """Advance ``x' = A x + b`` by ``dt`` with frozen ``A, b``."""
    if not dt > 0:
        raise DomainError("dt must be > 0")
    x = np.asarray(x, dtype=float)
    if method == "rk4":
        k1 = mode.rhs(x)
        k2 = mode.rhs(x + 0.5 * dt * k1)
        k3 = mode.rhs(x + 0.5 * dt * k2)
        k4 = mode.rhs(x + dt * k3)
        out = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    elif method == "exact":
        M, N = exact_propagators(mode.A, dt)
        out = M @ x + N @ mode.b
    else:
        raise DomainError(f"unknown method {method!r}")
    if not np.all(np.isfinite(out)):
        raise SimulationAbort(f"non-finite state after step from {x}")
    return out


def _clamp_matrix(params: ConverterParams, R_L: float) -> np.ndarray:
    return np.array([[0.0, 0.0], [0.0, -1.0 / (R_L * params.C_o)]])


def _segment_tables(params, load, dt, diode_drop):
    """Per-segment propagators indexed ``[segment, mode]`` with mode 0 = clamped."""
    n_seg = len(load.segments)
    M = np.zeros((n_seg, 5, 2, 2))
    G = np.zeros((n_seg, 5, 2))  # response to v_in
    g = np.zeros((n_seg, 5, 2))  # constant offset (diode drop)
    for s, (_, R_L) in enumerate(load.segments):
        M[s, 0], _ = rk4_propagators(_clamp_matrix(params, R_L), dt)
        for mode in (1, 2, 3, 4):
            A = build_mode(mode, params, 0.0, R_L).A
            Ms, Ns = rk4_propagators(A, dt)
            M[s, mode] = Ms
            G[s, mode] = Ns[:, 0] / params.L_B
            if mode in (2, 4) and diode_drop > 0:
                sign = 1.0 if mode == 2 else -1.0
                g[s, mode] = -sign * diode_drop / params.L_B * Ns[:, 0]
    return M, G, g


def _segment_starts(load: LoadProfile, dt: float) -> np.ndarray:
    """First step index whose time ``k dt`` is at or after each segment start."""
    starts = []
    for start, _ in load.segments:
        k = int(math.ceil(start / dt))
        while k > 0 and (k - 1) * dt >= start:
            k -= 1
        while k * dt < start:
            k += 1
        starts.append(k)
    return np.array(starts, dtype=np.int64)


@numba.njit(cache=True)
def _kernel(k0, n, x, ctrl, v_in, M, G, g, seg_start, seg_amp, s_table, P_ctrl,
            every, dec, dt, dcm_clamp, rec_t, rec_x, rec_vin, rec_iref, rec_mode, rec_pos):
    """Advance ``n`` steps starting at global step ``k0``.

    ``ctrl`` = [polarity(+-1), mode, clamped, i_ref, lock(+-1), phase_origin,
    phase_offset, segment].  ``P_ctrl`` = [policy(0 voltage, 1 sine), V_o,
    hysteresis, f_r, sqrt2*V_rms, v_peak].  Returns the local index of a
    non-finite state or -1.
    """
    pol = ctrl[0]
    mode = int(ctrl[1])
    clamped = ctrl[2] > 0.5
    i_ref = ctrl[3]
    lock = ctrl[4]
    ph0 = ctrl[5]
    ph_off = ctrl[6]
    seg = int(ctrl[7])
    policy = int(P_ctrl[0])
    V_o = P_ctrl[1]
    hyst = P_ctrl[2]
    w = 2.0 * math.pi * P_ctrl[3]
    vscale = P_ctrl[4]
    v_pk = P_ctrl[5]
    delay = math.asin(min(1.0, hyst / v_pk)) if v_pk > 0 else 0.0
    n_seg = seg_start.shape[0]
    pos = rec_pos[0]
    x0 = x[0]
    x1 = x[1]
    for j in range(n):
        k = k0 + j
        while seg + 1 < n_seg and k >= seg_start[seg + 1]:
            seg += 1
        vin = v_in[j]
        t = k * dt
        if k % every == 0:
            # phase lock comparator, shared by both policies
            if lock > 0 and vin < -hyst:
                lock = -1.0
                ph0 = t
                ph_off = math.pi + delay
            elif lock < 0 and vin > hyst:
                lock = 1.0
                ph0 = t
                ph_off = delay
            amp = seg_amp[seg]
            if policy == 0:
                i_ref = amp * vin / vscale
                new_pol = pol
                if pol < 0 and vin > hyst:
                    new_pol = 1.0
                elif pol > 0 and vin < -hyst:
                    new_pol = -1.0
            else:
                phase = w * (t - ph0) + ph_off
                i_ref = amp * math.sin(phase)
                r = phase - 2.0 * math.pi * math.floor(phase / (2.0 * math.pi))
                new_pol = 1.0 if r < math.pi else -1.0
            pol = new_pol
            p = 0 if pol > 0 else 1
            e0 = x0 - i_ref
            e1 = x1 - V_o
            s_a = e0 * s_table[p, 0, 0] + e1 * s_table[p, 0, 1]
            s_b = e0 * s_table[p, 1, 0] + e1 * s_table[p, 1, 1]
            base = 1 if p == 0 else 3
            mode = base + 1 if s_b > s_a else base
            if mode == 1 or mode == 3:
                clamped = False
        if k % dec == 0:
            rec_t[pos] = t
            rec_x[pos, 0] = x0
            rec_x[pos, 1] = x1
            rec_vin[pos] = vin
            rec_iref[pos] = i_ref
            rec_mode[pos] = 0 if clamped else mode
            pos += 1
        m = 0 if clamped else mode
        y0 = M[seg, m, 0, 0] * x0 + M[seg, m, 0, 1] * x1 + G[seg, m, 0] * vin + g[seg, m, 0]
        y1 = M[seg, m, 1, 0] * x0 + M[seg, m, 1, 1] * x1 + G[seg, m, 1] * vin + g[seg, m, 1]
        if dcm_clamp and pol * y0 < 0.0:
            y0 = 0.0
            clamped = True
        x0 = y0
        x1 = y1
        if not (math.isfinite(x0) and math.isfinite(x1)):
            x[0] = x0
            x[1] = x1
            rec_pos[0] = pos
            return j
    x[0] = x0
    x[1] = x1
    ctrl[0] = pol
    ctrl[1] = mode
    ctrl[2] = 1.0 if clamped else 0.0
    ctrl[3] = i_ref
    ctrl[4] = lock
    ctrl[5] = ph0
    ctrl[6] = ph_off
    ctrl[7] = seg
    rec_pos[0] = pos
    return -1


def segment_amplitudes(params: ConverterParams, ref: ReferenceSpec, grid: GridSpec,
                       load: LoadProfile) -> np.ndarray:
    """Peak reference current per load segment."""
    amps = []
    for _, R_L in load.segments:
        power = params.V_o ** 2 / R_L if ref.follow_load else ref.power
        amps.append(ref.loss_compensation * math.sqrt(2) * power / grid.V_rms)
    return np.array(amps)


def run_simulation(params: ConverterParams, law: SwitchingLaw, grid: GridSpec,
                   load: LoadProfile, ref: ReferenceSpec, cfg: SimConfig) -> Trace:
    """Closed-loop run; raises :class:`SimulationAbort` on a non-finite state."""
    if grid.dc and ref.policy is ReferencePolicy.PURE_SINE:
        raise DomainError("a sinusoidal reference needs an AC grid")
    dt = cfg.dt
    n_total = cfg.n_steps
    every = cfg.eval_every
    dec = int(cfg.decimation)
    M, G, g = _segment_tables(params, load, dt, cfg.diode_drop)
    seg_start = _segment_starts(load, dt)
    seg_amp = segment_amplitudes(params, ref, grid, load)
    s_table = law.s_table()
    v_pk = grid.peak
    # i_ref = I_pk v / (sqrt(2) V_rms); on a DC source this is P / V_rms
    vscale = math.sqrt(2) * grid.V_rms
    P_ctrl = np.array([0.0 if ref.policy is ReferencePolicy.VOLTAGE_WAVEFORM else 1.0,
                       params.V_o, ref.polarity_hysteresis, grid.f_r, vscale, v_pk])

    rng = np.random.default_rng(grid.seed)
    x = np.array(cfg.x0, dtype=float)
    # The source starts at phase 0 rising (or positive DC), so the controller
    # starts pre-locked: positive half cycle, reference phase 2 pi f_r t.
    ctrl = np.array([1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])

    n_rec = (n_total + dec - 1) // dec
    rec_t = np.empty(n_rec)
    rec_x = np.empty((n_rec, 2))
    rec_vin = np.empty(n_rec)
    rec_iref = np.empty(n_rec)
    rec_mode = np.empty(n_rec, dtype=np.int8)
    rec_pos = np.zeros(1, dtype=np.int64)

    k0 = 0
    failed = -1
    while k0 < n_total:
        n = min(_CHUNK, n_total - k0)
        t = np.arange(k0, k0 + n) * dt
        v_in = np.asarray(grid_voltage(grid, t, rng), dtype=float)
        failed = _kernel(k0, n, x, ctrl, v_in, M, G, g, seg_start, seg_amp, s_table, P_ctrl,
                         every, dec, dt, cfg.dcm_clamp, rec_t, rec_x, rec_vin, rec_iref,
                         rec_mode, rec_pos)
        if failed >= 0:
            failed += k0
            break
        k0 += n

    p = int(rec_pos[0])
    meta = {"dt": dt, "decimation": dec, "f_eval": cfg.f_eval, "eval_every": every,
            "f_r": grid.f_r, "V_rms": grid.V_rms, "V_o": params.V_o,
            "policy": ref.policy.value, "certified": law.certified,
            "load_segments": [list(s) for s in load.segments], "seed": grid.seed}
    trace = Trace(rec_t[:p].copy(), rec_x[:p, 0].copy(), rec_x[:p, 1].copy(),
                  rec_vin[:p].copy(), rec_iref[:p].copy(), rec_mode[:p].copy(), meta)
    if failed >= 0:
        diag = (f"non-finite state at step {failed} (t = {failed * dt:.9g} s); "
                f"last state {x.tolist()}; last recorded sample t = "
                f"{trace.t[-1] if len(trace) else float('nan'):.9g} s")
        trace.meta["aborted"] = True
        raise SimulationAbort(diag, trace=trace, diagnostic=diag)
    return trace


def near_zero_dcm_probe(trace: Trace) -> list[tuple[float, float]]:
    """Maximal time intervals spent in the clamped pseudo-mode."""
    clamped = trace.mode == CLAMPED
    if not clamped.any():
        return []
    edges = np.diff(np.concatenate([[0], clamped.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    step = trace.t[1] - trace.t[0] if len(trace) > 1 else 0.0
    return [(float(trace.t[a]), float(trace.t[b - 1] + step)) for a, b in zip(starts, stops)]
