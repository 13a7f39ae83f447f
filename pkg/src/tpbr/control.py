"""Runtime switching rule: reference generation, polarity, mode selection."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import MODE_POLARITY, DomainError, Polarity

# Gate pattern per mode: (S1 on, S2 on)
GATES = {1: (False, True), 2: (False, False), 3: (True, False), 4: (False, False)}


class ReferencePolicy(enum.Enum):
    VOLTAGE_WAVEFORM = "voltage"
    PURE_SINE = "sine"

    @classmethod
    def parse(cls, value) -> "ReferencePolicy":
        if isinstance(value, ReferencePolicy):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"voltage": cls.VOLTAGE_WAVEFORM, "voltage_waveform": cls.VOLTAGE_WAVEFORM,
                   "voltagewaveform": cls.VOLTAGE_WAVEFORM,
                   "sine": cls.PURE_SINE, "pure_sine": cls.PURE_SINE, "puresine": cls.PURE_SINE}
        try:
            return aliases[key]
        except KeyError:
            raise DomainError(f"unknown reference policy {value!r}") from None


@dataclass(frozen=True)
class ReferenceSpec:
    """Current-reference policy.

    ``power`` is the target output power.  With ``follow_load`` the amplitude
    instead tracks ``V_o^2 / R_L`` of the active load segment (an ideal
    feed-forward; there is no outer voltage loop).
    """

    policy: ReferencePolicy = ReferencePolicy.PURE_SINE
    power: float = 300.0
    loss_compensation: float = 1.0
    polarity_hysteresis: float = 5.0
    follow_load: bool = False

    def __post_init__(self):
        object.__setattr__(self, "policy", ReferencePolicy.parse(self.policy))
        if self.power < 0 or self.loss_compensation < 0:
            raise DomainError("reference amplitude must be >= 0")
        if self.polarity_hysteresis < 0:
            raise DomainError("polarity hysteresis must be >= 0")


@dataclass(frozen=True)
class PolarityLaw:
    """Weights of one half cycle: ``v_i(e) = e' P0 e + 2 e' S_i``."""

    polarity: Polarity
    P0: np.ndarray
    S: np.ndarray  # columns S_i, ordered as polarity.modes

    def __post_init__(self):
        if not (np.all(np.isfinite(self.P0)) and np.all(np.isfinite(self.S))):
            raise DomainError("law entries must be finite")


@dataclass(frozen=True)
class SwitchingLaw:
    positive: PolarityLaw
    negative: PolarityLaw
    source: str = ""
    certified: bool = True

    def __post_init__(self):
        if self.positive.polarity is not Polarity.POSITIVE:
            raise DomainError("positive slot holds a law for the wrong polarity")
        if self.negative.polarity is not Polarity.NEGATIVE:
            raise DomainError("negative slot holds a law for the wrong polarity")

    def __getitem__(self, polarity) -> PolarityLaw:
        polarity = Polarity.parse(polarity)
        return self.positive if polarity is Polarity.POSITIVE else self.negative

    @classmethod
    def from_certificates(cls, positive, negative, source: str = "") -> "SwitchingLaw":
        return cls(PolarityLaw(Polarity.POSITIVE, positive.P0.copy(), positive.S.copy()),
                   PolarityLaw(Polarity.NEGATIVE, negative.P0.copy(), negative.S.copy()),
                   source=source, certified=bool(positive.feasible and negative.feasible))

    def s_table(self) -> np.ndarray:
        """``table[p, j, :]`` = S of the j-th mode of polarity p (0 positive, 1 negative)."""
        return np.stack([self.positive.S.T, self.negative.S.T])

    def scaled_s(self, c: float) -> "SwitchingLaw":
        return SwitchingLaw(PolarityLaw(Polarity.POSITIVE, self.positive.P0, c * self.positive.S),
                            PolarityLaw(Polarity.NEGATIVE, self.negative.P0, c * self.negative.S),
                            self.source, self.certified)


@dataclass
class ControllerState:
    polarity: Polarity = Polarity.POSITIVE
    mode: int = 1
    time: float = 0.0
    lock_polarity: Optional[Polarity] = None
    phase_origin: float = 0.0
    phase_offset: float = 0.0
    transitions: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if MODE_POLARITY[self.mode] is not self.polarity:
            raise DomainError("mode inconsistent with polarity")


def reference_amplitude(spec: ReferenceSpec, V_rms: float, power: Optional[float] = None) -> float:
    if V_rms <= 0:
        raise DomainError("V_rms must be > 0")
    p = spec.power if power is None else power
    return spec.loss_compensation * math.sqrt(2) * p / V_rms


def reference_current(spec: ReferenceSpec, t: float, v_in_sample: float, V_rms: float,
                      f_r: float = 60.0, phase: float = 0.0,
                      power: Optional[float] = None) -> float:
    """Instantaneous current reference.

    VoltageWaveform scales the measured voltage, ``i = I_pk v / (sqrt(2) V_rms)``;
    PureSine returns ``I_pk sin(2 pi f_r t + phase)``.
    """
    amp = reference_amplitude(spec, V_rms, power)
    if spec.policy is ReferencePolicy.VOLTAGE_WAVEFORM:
        return amp * v_in_sample / (math.sqrt(2) * V_rms)
    return amp * math.sin(2.0 * math.pi * f_r * t + phase)


def select_mode(law: SwitchingLaw, e, polarity) -> int:
    """``argmax_i e' S_i`` over the polarity's pair; ties go to the lower index."""
    polarity = Polarity.parse(polarity)
    half = law[polarity]
    scores = np.asarray(e, dtype=float) @ half.S
    best = 0
    for j in range(1, scores.size):
        if scores[j] > scores[best]:
            best = j
    return polarity.modes[best]


def lyapunov_value(law: SwitchingLaw, e, polarity) -> float:
    """``max_i e' P0 e + 2 e' S_i`` over the polarity's modes."""
    half = law[Polarity.parse(polarity)]
    e = np.asarray(e, dtype=float)
    return float(e @ half.P0 @ e + 2.0 * np.max(e @ half.S))


def hysteresis_step(current: Polarity, signal: float, hysteresis: float) -> Polarity:
    """Comparator with dead band ``[-h, +h]`` around zero."""
    if current is Polarity.NEGATIVE and signal > hysteresis:
        return Polarity.POSITIVE
    if current is Polarity.POSITIVE and signal < -hysteresis:
        return Polarity.NEGATIVE
    return current


def polarity_arbiter(spec: ReferenceSpec, signal: float, state: ControllerState) -> Polarity:
    """Update ``state.polarity`` from the arbitration signal.

    VoltageWaveform: ``signal`` is the measured input voltage, compared with
    hysteresis.  PureSine: ``signal`` is the internal reference phase
    (radian); the half cycle is positive on ``[0, pi)``.
    """
    if spec.policy is ReferencePolicy.VOLTAGE_WAVEFORM:
        new = hysteresis_step(state.polarity, signal, spec.polarity_hysteresis)
    else:
        new = Polarity.POSITIVE if math.fmod(signal, 2 * math.pi) % (2 * math.pi) < math.pi \
            else Polarity.NEGATIVE
    if new is not state.polarity:
        state.transitions += 1
        state.polarity = new
        state.mode = new.modes[0]
    return new


def lock_phase(spec: ReferenceSpec, v_in: float, t: float, v_peak: float,
               state: ControllerState) -> None:
    """Re-anchor the PureSine phase at hysteresis crossings of the measured voltage.

    A crossing of ``+h`` is declared at phase ``asin(h / v_peak)`` and a
    crossing of ``-h`` at ``pi`` plus that, so the internal sine stays
    aligned with the grid's zero crossings.
    """
    if state.lock_polarity is None:
        state.lock_polarity = Polarity.POSITIVE if v_in >= 0 else Polarity.NEGATIVE
        return
    new = hysteresis_step(state.lock_polarity, v_in, spec.polarity_hysteresis)
    if new is not state.lock_polarity:
        delay = math.asin(min(1.0, spec.polarity_hysteresis / v_peak)) if v_peak > 0 else 0.0
        state.phase_origin = t
        state.phase_offset = delay if new is Polarity.POSITIVE else math.pi + delay
        state.lock_polarity = new


def gate_commands(mode: int) -> tuple[bool, bool]:
    try:
        return GATES[mode]
    except KeyError:
        raise DomainError(f"invalid mode {mode!r}") from None


def mode_from_gates(gates: tuple[bool, bool], polarity) -> int:
    """Inverse of :func:`gate_commands` given the half cycle (modes 2 and 4 share gates)."""
    polarity = Polarity.parse(polarity)
    for mode in polarity.modes:
        if GATES[mode] == tuple(gates):
            return mode
    raise DomainError(f"gates {gates} not valid in {polarity.name} half cycle")
