"""INI scenario files with unit-suffixed keys.

Example::

    [converter]
    l_b_henry = 2.4e-3
    c_o_farad = 270e-6

    [grid]
    v_rms_volt = 120
    harmonics = 3:0.05:0, 5:0.04:0      ; order:fraction:phase_rad
    noise_std_fraction = 0.03           ; or noise_std_volt

    [load]
    segments_second_watt = 0:300, 0.854:150

Every key can be overridden from the environment as ``TPBR_<SECTION>__<KEY>``
(e.g. ``TPBR_SIM__T_END_SECOND=0.1``).
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .control import ReferenceSpec
from .model import ConverterParams, DomainError, Polarity, UncertaintyBox
from .sim import GridSpec, LoadProfile, SimConfig

ENV_PREFIX = "TPBR_"
MAX_GRID_THD = 0.08

CONVERTER_KEYS = {
    "l_b_henry": "L_B", "r_b_ohm": "R_B", "c_o_farad": "C_o", "v_o_volt": "V_o",
    "p_o_min_watt": "P_o_min", "p_o_max_watt": "P_o_max", "v_rms_min_volt": "V_rms_min",
    "v_rms_nom_volt": "V_rms_nom", "v_rms_max_volt": "V_rms_max", "f_r_hertz": "f_r",
    "f_s_hertz": "f_s",
}
KNOWN = {
    "scenario": {"name", "law", "base"},
    "converter": set(CONVERTER_KEYS),
    "lmi": {"alpha", "epsilon", "backend", "scaling", "samples", "seed", "r_l_range_ohm",
            "i_eq_peak_ampere"},
    "grid": {"v_rms_volt", "f_r_hertz", "harmonics", "noise_std_volt", "noise_std_fraction",
             "seed", "dc"},
    "load": {"segments_second_ohm", "segments_second_watt", "r_l_ohm", "power_watt"},
    "reference": {"policy", "power_watt", "loss_compensation", "hysteresis_volt",
                  "follow_load"},
    "sim": {"dt_second", "f_eval_hertz", "t_end_second", "x0_ampere", "x0_volt", "dcm_clamp",
            "diode_drop_volt", "decimation"},
    "metrics": {"periods", "max_harmonic"},
    "suite": {"scenarios", "workers"},
}


class ConfigError(Exception):
    """Invalid or missing configuration (CLI exit code 1)."""


@dataclass(frozen=True)
class LmiSettings:
    alpha: float = 1e4
    epsilon: float = 1e-8
    backend: str = "cvxopt"
    scaling: str = "energy"
    samples: int = 1000
    seed: int = 0
    r_l_range: Optional[tuple] = None
    i_eq_peak: Optional[float] = None

    def boxes(self, params: ConverterParams):
        """Per-polarity design boxes, or None for the defaults derived from ``params``."""
        if self.r_l_range is None and self.i_eq_peak is None:
            return None
        out = {}
        for pol in (Polarity.POSITIVE, Polarity.NEGATIVE):
            box = UncertaintyBox.for_polarity(params, pol)
            if self.r_l_range is not None:
                box = replace(box, R_L_range=tuple(self.r_l_range))
            if self.i_eq_peak is not None:
                i = pol.sign * self.i_eq_peak
                box = replace(box, i_eq_range=(min(0.0, i), max(0.0, i)))
            out[pol] = box
        return out


@dataclass
class Scenario:
    name: str
    params: ConverterParams
    grid: GridSpec
    load: LoadProfile
    reference: ReferenceSpec
    sim: SimConfig
    law: str = "synthesize"
    lmi: LmiSettings = field(default_factory=LmiSettings)
    periods: int = 6
    max_harmonic: int = 40
    source: Optional[str] = None

    @property
    def nominal_power(self) -> float:
        """Output power of the first load segment."""
        return self.params.V_o ** 2 / self.load.segments[0][1]


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _pairs(text: str) -> list[tuple[float, ...]]:
    out = []
    for item in text.replace(";", ",").split(","):
        if item.strip():
            out.append(tuple(float(v) for v in item.split(":")))
    return out


def _parser() -> configparser.ConfigParser:
    return configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)


def read_config(path, env: Optional[dict] = None) -> configparser.ConfigParser:
    """Read ``path`` (following ``[scenario] base`` chains) and apply env overrides."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    chain = []
    seen = set()
    current = path
    while current is not None:
        current = current.resolve()
        if current in seen:
            raise ConfigError(f"circular base reference at {current}")
        seen.add(current)
        if not current.is_file():
            raise ConfigError(f"config file not found: {current}")
        chain.append(current)
        probe = _parser()
        try:
            probe.read(current)
        except configparser.Error as exc:
            raise ConfigError(f"{current}: {exc}") from exc
        base = probe.get("scenario", "base", fallback=None)
        current = (current.parent / base) if base else None
    cfg = _parser()
    try:
        cfg.read(list(reversed(chain)))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    apply_env(cfg, os.environ if env is None else env)
    check_keys(cfg, path)
    return cfg


def apply_env(cfg: configparser.ConfigParser, env) -> None:
    for name, value in env.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        section, key = name[len(ENV_PREFIX):].lower().split("__", 1)
        if not cfg.has_section(section):
            cfg.add_section(section)
        cfg.set(section, key, value)


def check_keys(cfg: configparser.ConfigParser, path) -> None:
    for section in cfg.sections():
        if section not in KNOWN:
            raise ConfigError(f"{path}: unknown section [{section}]")
        unknown = set(cfg[section]) - KNOWN[section]
        if unknown:
            raise ConfigError(f"{path}: unknown key(s) in [{section}]: {sorted(unknown)}")


def _section(cfg, name):
    return cfg[name] if cfg.has_section(name) else {}


def params_from(cfg) -> ConverterParams:
    sec = _section(cfg, "converter")
    kwargs = {}
    for key, attr in CONVERTER_KEYS.items():
        if key in sec:
            kwargs[attr] = float(sec[key])
    return ConverterParams(**kwargs)


def lmi_from(cfg) -> LmiSettings:
    sec = _section(cfg, "lmi")
    kw = {}
    for key, cast in (("alpha", float), ("epsilon", float), ("backend", str),
                      ("scaling", str), ("samples", int), ("seed", int)):
        if key in sec:
            kw[key] = cast(sec[key])
    if "r_l_range_ohm" in sec:
        rng = _floats(sec["r_l_range_ohm"])
        if len(rng) != 2:
            raise ConfigError("r_l_range_ohm needs two values")
        kw["r_l_range"] = tuple(rng)
    if "i_eq_peak_ampere" in sec:
        kw["i_eq_peak"] = float(sec["i_eq_peak_ampere"])
    return LmiSettings(**kw)


def _bool(value: str) -> bool:
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def scenario_from(cfg, name: Optional[str] = None, source=None) -> Scenario:
    """Build a fully validated :class:`Scenario`; any failure is a :class:`ConfigError`."""
    try:
        params = params_from(cfg)
        g = _section(cfg, "grid")
        v_rms = float(g.get("v_rms_volt", params.V_rms_nom))
        noise = float(g.get("noise_std_volt", 0.0))
        if "noise_std_fraction" in g:
            noise = float(g["noise_std_fraction"]) * v_rms
        harmonics = [(int(h[0]), h[1], h[2] if len(h) > 2 else 0.0)
                     for h in _pairs(g.get("harmonics", ""))]
        grid = GridSpec(V_rms=v_rms, f_r=float(g.get("f_r_hertz", params.f_r)),
                        harmonics=tuple(harmonics), noise_std=noise,
                        seed=int(g.get("seed", 0)), dc=_bool(g.get("dc", "false")))
        if grid.thd_plus_noise > MAX_GRID_THD + 1e-12:
            raise ConfigError(f"grid distortion {grid.thd_plus_noise:.4f} exceeds the "
                              f"{MAX_GRID_THD:.2f} cap")

        ld = _section(cfg, "load")
        v2 = params.V_o ** 2
        if "segments_second_ohm" in ld:
            segs = [(t, r) for t, r in _pairs(ld["segments_second_ohm"])]
        elif "segments_second_watt" in ld:
            segs = [(t, v2 / p) for t, p in _pairs(ld["segments_second_watt"])]
        elif "r_l_ohm" in ld:
            segs = [(0.0, float(ld["r_l_ohm"]))]
        else:
            segs = [(0.0, v2 / float(ld.get("power_watt", params.P_o_max)))]
        load = LoadProfile(tuple(segs))

        r = _section(cfg, "reference")
        reference = ReferenceSpec(policy=r.get("policy", "sine"),
                                  power=float(r.get("power_watt", v2 / segs[0][1])),
                                  loss_compensation=float(r.get("loss_compensation", 1.0)),
                                  polarity_hysteresis=float(r.get("hysteresis_volt", 5.0)),
                                  follow_load=_bool(r.get("follow_load", "false")))

        s = _section(cfg, "sim")
        defaults = SimConfig()
        sim = SimConfig(dt=float(s.get("dt_second", defaults.dt)),
                        f_eval=float(s.get("f_eval_hertz", defaults.f_eval)),
                        t_end=float(s.get("t_end_second", defaults.t_end)),
                        x0=(float(s.get("x0_ampere", defaults.x0[0])),
                            float(s.get("x0_volt", params.V_o))),
                        dcm_clamp=_bool(s.get("dcm_clamp", "true")),
                        diode_drop=float(s.get("diode_drop_volt", 0.0)),
                        decimation=int(s.get("decimation", defaults.decimation)))
        m = _section(cfg, "metrics")
        sc = _section(cfg, "scenario")
        return Scenario(name=name or sc.get("name", "scenario"), params=params, grid=grid,
                        load=load, reference=reference, sim=sim,
                        law=sc.get("law", "synthesize"), lmi=lmi_from(cfg),
                        periods=int(m.get("periods", 6)),
                        max_harmonic=int(m.get("max_harmonic", 40)),
                        source=str(source) if source else None)
    except ConfigError:
        raise
    except (DomainError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"{source or 'config'}: {exc}") from exc


def load_scenario(path, env=None) -> Scenario:
    cfg = read_config(path, env)
    return scenario_from(cfg, source=path)


def override(scenario: Scenario, dt=None, t_end=None, seed=None) -> Scenario:
    """Apply command-line overrides, re-validating the affected dataclasses."""
    try:
        sim = scenario.sim
        if dt is not None:
            sim = replace(sim, dt=dt)
        if t_end is not None:
            sim = replace(sim, t_end=t_end)
        grid = scenario.grid if seed is None else replace(scenario.grid, seed=seed)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    return replace(scenario, sim=sim, grid=grid)


def suite_entries(path, env=None) -> tuple[list[Path], int]:
    cfg = read_config(path, env)
    sec = _section(cfg, "suite")
    raw = sec.get("scenarios", "") if sec else ""
    entries = [line.strip() for line in raw.replace(",", "\n").splitlines() if line.strip()]
    base = Path(path).resolve().parent
    paths = [base / e for e in entries]
    workers = int(sec.get("workers", 1)) if sec else 1
    return paths, workers
