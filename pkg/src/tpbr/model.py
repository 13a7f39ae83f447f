"""Affine switched model of the totem-pole bridgeless rectifier.

State is ``x = [i_L, v_C]`` (inductor current, output capacitor voltage).
Each operating mode is ``dx/dt = A_i x + b_i``; modes 1/2 are used while the
input voltage is positive, modes 3/4 while it is negative.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class Polarity(enum.Enum):
    POSITIVE = 1
    NEGATIVE = -1

    @property
    def sign(self) -> int:
        return self.value

    @property
    def modes(self) -> tuple[int, int]:
        """Mode pair for this half cycle: conducting-switch mode first."""
        return (1, 2) if self is Polarity.POSITIVE else (3, 4)

    @classmethod
    def parse(cls, value) -> "Polarity":
        if isinstance(value, Polarity):
            return value
        key = str(value).strip().lower()
        if key in ("positive", "pos", "+", "+1", "1"):
            return cls.POSITIVE
        if key in ("negative", "neg", "-", "-1"):
            return cls.NEGATIVE
        raise DomainError(f"unknown polarity {value!r}")


MODE_POLARITY = {1: Polarity.POSITIVE, 2: Polarity.POSITIVE,
                 3: Polarity.NEGATIVE, 4: Polarity.NEGATIVE}


@dataclass(frozen=True)
class ConverterParams:
    """Physical design point. SI units throughout."""

    L_B: float = 2.4e-3
    R_B: float = 0.42
    C_o: float = 270e-6
    V_o: float = 380.0
    P_o_min: float = 25.0
    P_o_max: float = 300.0
    V_rms_min: float = 85.0
    V_rms_nom: float = 120.0
    V_rms_max: float = 250.0
    f_r: float = 60.0
    f_s: float = 64.8e3

    def __post_init__(self):
        for name in ("L_B", "C_o", "V_o", "P_o_min", "P_o_max",
                     "V_rms_min", "V_rms_nom", "V_rms_max", "f_r", "f_s"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be finite and > 0, got {value!r}")
        if not (math.isfinite(self.R_B) and self.R_B >= 0):
            raise DomainError(f"R_B must be finite and >= 0, got {self.R_B!r}")
        if not self.P_o_min < self.P_o_max:
            raise DomainError("P_o_min must be < P_o_max")
        if not self.V_rms_min <= self.V_rms_nom <= self.V_rms_max:
            raise DomainError("need V_rms_min <= V_rms_nom <= V_rms_max")
        if not self.V_o > math.sqrt(2) * self.V_rms_max:
            raise DomainError("boost condition violated: V_o <= sqrt(2)*V_rms_max")


@dataclass(frozen=True)
class AffineMode:
    index: int
    A: np.ndarray
    b: np.ndarray

    def rhs(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x + self.b


@dataclass(frozen=True)
class HalfCycleModel:
    polarity: Polarity
    modes: tuple[AffineMode, AffineMode]


@dataclass(frozen=True)
class EquilibriumPoint:
    i_eq: float
    v_eq: float

    def __post_init__(self):
        if not self.v_eq > 0:
            raise DomainError("v_eq must be > 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.i_eq, self.v_eq])


def _check_range(name: str, rng) -> tuple[float, float]:
    lo, hi = (float(v) for v in rng)
    if not lo <= hi:
        raise DomainError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
    return lo, hi


@dataclass(frozen=True)
class UncertaintyBox:
    """Axis-aligned parameter box: load resistance, current set point, input voltage."""

    R_L_range: tuple[float, float]
    i_eq_range: tuple[float, float]
    v_in_range: tuple[float, float]

    def __post_init__(self):
        lo, _ = _check_range("R_L_range", self.R_L_range)
        if lo <= 0:
            raise DomainError("R_L_range must be strictly positive")
        _check_range("i_eq_range", self.i_eq_range)
        _check_range("v_in_range", self.v_in_range)

    @classmethod
    def for_polarity(cls, params: ConverterParams, polarity: Polarity,
                     include_v_in: bool = True) -> "UncertaintyBox":
        """Design polytope: load range x current vertices x input voltage excursion."""
        polarity = Polarity.parse(polarity)
        i_lo, i_hi = current_vertices(params, polarity)
        v_pk = polarity.sign * math.sqrt(2) * params.V_rms_max
        if include_v_in:
            v_rng = (min(0.0, v_pk), max(0.0, v_pk))
        else:
            v_nom = polarity.sign * math.sqrt(2) * params.V_rms_nom
            v_rng = (v_nom, v_nom)
        return cls(load_range(params), (min(i_lo, i_hi), max(i_lo, i_hi)), v_rng)

    def sample(self, rng: np.random.Generator) -> tuple[float, float, float]:
        return (rng.uniform(*self.R_L_range), rng.uniform(*self.i_eq_range),
                rng.uniform(*self.v_in_range))


def build_mode(index: int, params: ConverterParams, v_in: float, R_L: float) -> AffineMode:
    if index not in (1, 2, 3, 4):
        raise DomainError(f"mode index must be in 1..4, got {index!r}")
    if not R_L > 0:
        raise DomainError(f"R_L must be > 0, got {R_L!r}")
    L, C = params.L_B, params.C_o
    A = np.array([[-params.R_B / L, 0.0],
                  [0.0, -1.0 / (R_L * C)]])
    if index == 2:
        A[0, 1], A[1, 0] = -1.0 / L, 1.0 / C
    elif index == 4:
        A[0, 1], A[1, 0] = 1.0 / L, -1.0 / C
    b = np.array([v_in / L, 0.0])
    return AffineMode(index, A, b)


def half_cycle_model(polarity, params: ConverterParams, v_in: float, R_L: float) -> HalfCycleModel:
    polarity = Polarity.parse(polarity)
    if v_in * polarity.sign < 0:
        raise DomainError(f"v_in={v_in} inconsistent with {polarity.name} polarity")
    first, second = polarity.modes
    return HalfCycleModel(polarity, (build_mode(first, params, v_in, R_L),
                                     build_mode(second, params, v_in, R_L)))


def error_dynamics(mode: AffineMode, x_eq) -> tuple[np.ndarray, np.ndarray]:
    """Tracking-error dynamics ``de/dt = A e + k`` with ``k = b + A x_eq``."""
    if isinstance(x_eq, EquilibriumPoint):
        x_eq = x_eq.as_array()
    x_eq = np.asarray(x_eq, dtype=float)
    return mode.A, mode.b + mode.A @ x_eq


def current_vertices(params: ConverterParams, polarity) -> tuple[float, float]:
    polarity = Polarity.parse(polarity)
    i_pk = math.sqrt(2) * params.P_o_max / params.V_rms_min
    return 0.0, polarity.sign * i_pk


def load_range(params: ConverterParams) -> tuple[float, float]:
    v2 = params.V_o ** 2
    return v2 / params.P_o_max, v2 / params.P_o_min


def enumerate_delta_vertices(box: UncertaintyBox) -> list[tuple[float, float, float]]:
    axes = []
    for lo, hi in (box.R_L_range, box.i_eq_range, box.v_in_range):
        axes.append((lo,) if lo == hi else (lo, hi))
    return list(itertools.product(*axes))


def dc_equilibrium_current(params: ConverterParams, v_in: float, R_L: float) -> float:
    """Smaller root of the DC power balance ``R_B i^2 - v_in i + V_o^2/R_L = 0``."""
    p_out = params.V_o ** 2 / R_L
    disc = v_in ** 2 - 4.0 * params.R_B * p_out
    if disc < 0:
        raise DomainError("no DC equilibrium: input cannot supply the load")
    if params.R_B == 0:
        return p_out / v_in
    return (abs(v_in) - math.sqrt(disc)) / (2.0 * params.R_B) * math.copysign(1.0, v_in)
