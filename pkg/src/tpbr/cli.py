"""Command-line front end: synthesize, simulate, suite, verify, report.

Exit codes: 0 ok, 1 configuration error, 2 infeasible or verification
failure, 3 simulation abort, 4 partial suite failure.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analysis import compute_metrics, trend_report
from .config import (ConfigError, LmiSettings, Scenario, load_scenario, lmi_from, override,
                     params_from, read_config, suite_entries)
from .control import ReferencePolicy, SwitchingLaw
from .lmi import LmiCertificate, build_feasibility_problem, synthesize_pair, verify_certificate
from .model import ConverterParams, Polarity
from .sim import SimulationAbort, Trace, run_simulation

log = logging.getLogger("tpbr")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_ABORT, EXIT_SUITE = 0, 1, 2, 3, 4
CERT_NAMES = {Polarity.POSITIVE: "certificate_positive.json",
              Polarity.NEGATIVE: "certificate_negative.json"}


# --------------------------------------------------------------------------- laws

def synthesize_certificates(params: ConverterParams, lmi: LmiSettings):
    certs, errors = synthesize_pair(params, alpha=lmi.alpha, epsilon=lmi.epsilon,
                                    backend=lmi.backend, scaling=lmi.scaling,
                                    boxes=lmi.boxes(params))
    return certs, errors


def verify_pair(params, lmi: LmiSettings, certs, samples=None, seed=None):
    reports = {}
    boxes = lmi.boxes(params) or {}
    for pol, cert in certs.items():
        problem = build_feasibility_problem(params, pol, alpha=lmi.alpha, epsilon=lmi.epsilon,
                                            box=boxes.get(pol), scaling=lmi.scaling)
        reports[pol] = verify_certificate(cert, problem,
                                          lmi.samples if samples is None else samples,
                                          seed=lmi.seed if seed is None else seed)
    return reports


def load_law(source: str, scenario: Scenario) -> SwitchingLaw:
    """Law from a directory of certificates, or synthesized on the fly."""
    if source == "synthesize":
        certs, errors = synthesize_certificates(scenario.params, scenario.lmi)
        if errors:
            log.warning("no certificate with positive margin (%s); simulating with the "
                        "uncertified max-margin law",
                        "; ".join(f"{p.name.lower()}: {e}" for p, e in errors.items()))
        return SwitchingLaw.from_certificates(certs[Polarity.POSITIVE],
                                              certs[Polarity.NEGATIVE], source="synthesize")
    base = Path(source)
    if scenario.source and not base.is_absolute():
        base = Path(scenario.source).resolve().parent / base
    certs = {}
    for pol, name in CERT_NAMES.items():
        path = base / name
        if not path.is_file():
            raise ConfigError(f"certificate not found: {path}")
        try:
            certs[pol] = LmiCertificate.load(path)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return SwitchingLaw.from_certificates(certs[Polarity.POSITIVE], certs[Polarity.NEGATIVE],
                                          source=str(base))


# --------------------------------------------------------------------------- plotting

def svg_plot(trace: Trace, path, title: str = "", max_points: int = 4000) -> None:
    """Three stacked panels: i_L with i_ref, v_in scaled to the current axis, v_o."""
    width, height, pad = 900, 600, 50
    panel_h = (height - 2 * pad) / 2
    step = max(1, len(trace) // max_points)
    t = trace.t[::step]
    if t.size < 2:
        t = np.array([0.0, 1.0])
    t0, t1 = float(t[0]), float(t[-1])

    def poly(y, lo, hi, top, colour):
        y = np.asarray(y[::step], dtype=float)
        if hi - lo <= 0:
            hi = lo + 1.0
        xs = pad + (t - t0) / max(t1 - t0, 1e-15) * (width - 2 * pad)
        ys = top + panel_h - (y - lo) / (hi - lo) * panel_h
        pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(xs, ys))
        return f'<polyline fill="none" stroke="{colour}" stroke-width="0.8" points="{pts}"/>'

    i_lo, i_hi = float(min(trace.i_L.min(), trace.i_ref.min())), float(
        max(trace.i_L.max(), trace.i_ref.max()))
    i_span = max(abs(i_lo), abs(i_hi), 1e-6)
    v_span = max(float(np.abs(trace.v_in).max()), 1e-6)
    vin_scaled = trace.v_in / v_span * i_span
    vo_lo, vo_hi = float(trace.v_C.min()), float(trace.v_C.max())
    top1, top2 = pad, pad + panel_h + pad / 2
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{pad}" y="20" font-size="13">{title}</text>',
        f'<rect x="{pad}" y="{top1}" width="{width - 2 * pad}" height="{panel_h}" '
        f'fill="none" stroke="#888"/>',
        f'<rect x="{pad}" y="{top2}" width="{width - 2 * pad}" height="{panel_h}" '
        f'fill="none" stroke="#888"/>',
        poly(vin_scaled, -i_span, i_span, top1, "#bbbbbb"),
        poly(trace.i_ref, -i_span, i_span, top1, "#d62728"),
        poly(trace.i_L, -i_span, i_span, top1, "#1f77b4"),
        poly(trace.v_C, vo_lo, vo_hi, top2, "#2ca02c"),
        f'<text x="{pad + 5}" y="{top1 + 14}">i_L (blue), i_ref (red), v_in scaled (grey); '
        f'+-{i_span:.3g} A</text>',
        f'<text x="{pad + 5}" y="{top2 + 14}">v_o: {vo_lo:.2f} .. {vo_hi:.2f} V</text>',
        f'<text x="{pad}" y="{height - 15}">t = {t0:.4g} s</text>',
        f'<text x="{width - pad - 90}" y="{height - 15}">t = {t1:.4g} s</text>',
        "</svg>",
    ]
    Path(path).write_text("\n".join(parts))


# --------------------------------------------------------------------------- commands

def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2))


def cmd_synthesize(args) -> int:
    cfg = read_config(args.config)
    try:
        params = params_from(cfg)
        lmi = lmi_from(cfg)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{args.config}: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    certs, errors = synthesize_certificates(params, lmi)
    for pol, cert in certs.items():
        cert.save(out / CERT_NAMES[pol])
    reports = verify_pair(params, lmi, certs, args.samples, args.seed)
    doc = {"schema": "tpbr-verification/1",
           "polarities": {p.name.lower(): {"margin": certs[p].margin,
                                           "feasible": certs[p].feasible,
                                           "error": str(errors[p]) if p in errors else None,
                                           **reports[p].to_dict()} for p in certs}}
    _write_json(out / "verification.json", doc)
    for pol in certs:
        status = "feasible" if pol not in errors else f"INFEASIBLE ({errors[pol]})"
        print(f"{pol.name.lower():>8}: margin {certs[pol].margin:+.4e} {status}")
        print(f"{'':>8}  {reports[pol].summary()}")
    if errors or not all(r.passed for r in reports.values()):
        print("synthesis did not produce a verified law; best-effort certificates written "
              f"to {out}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def run_scenario(scenario: Scenario, out: Path, law: Optional[SwitchingLaw] = None) -> dict:
    """Simulate one scenario and write its artifacts.  Returns a summary row."""
    out.mkdir(parents=True, exist_ok=True)
    law = law or load_law(scenario.law, scenario)
    row = {"name": scenario.name, "V_rms": scenario.grid.V_rms,
           "P_o": scenario.nominal_power, "policy": scenario.reference.policy.value,
           "steps": len(scenario.load.segments) > 1, "certified": law.certified}
    try:
        trace = run_simulation(scenario.params, law, scenario.grid, scenario.load,
                               scenario.reference, scenario.sim)
    except SimulationAbort as exc:
        if exc.trace is not None:
            exc.trace.to_csv(out / "trace.csv")
        (out / "abort.txt").write_text(exc.diagnostic + "\n")
        row.update(status="FAILED", error=str(exc))
        return row
    trace.to_csv(out / "trace.csv")
    svg_plot(trace, out / "plot.svg", title=scenario.name)
    try:
        metrics = compute_metrics(trace, scenario.grid.f_r, periods=scenario.periods,
                                  max_harmonic=scenario.max_harmonic)
    except ValueError as exc:
        row.update(status="FAILED", error=f"metrics: {exc}")
        return row
    doc = metrics.to_dict()
    doc["scenario"] = scenario.name
    doc["certified_law"] = law.certified
    _write_json(out / "metrics.json", doc)
    row.update(status="ok", thd_i=metrics.thd_i, power_factor=metrics.power_factor,
               v_o_mean=metrics.v_o_mean, metrics=doc)
    return row


def cmd_simulate(args) -> int:
    scenario = override(load_scenario(args.config), args.dt, args.t_end, args.seed)
    row = run_scenario(scenario, Path(args.out))
    if row["status"] != "ok":
        print(f"{scenario.name}: {row['error']}", file=sys.stderr)
        return EXIT_ABORT
    print(f"{scenario.name}: THD {row['thd_i']:.4f}  PF {row['power_factor']:.4f}  "
          f"v_o {row['v_o_mean']:.2f} V")
    return EXIT_OK


def _suite_worker(item):
    scenario, out = item
    try:
        return run_scenario(scenario, out)
    except ConfigError as exc:
        return {"name": scenario.name, "status": "FAILED", "error": str(exc),
                "V_rms": scenario.grid.V_rms, "P_o": scenario.nominal_power,
                "policy": scenario.reference.policy.value}


def summary_table(rows) -> str:
    lines = [f"{'scenario':<22} {'V_rms':>6} {'P_o':>6} {'ref':>8} {'THD':>8} {'PF':>7} "
             f"{'v_o':>8}  status"]
    for r in rows:
        if r["status"] == "ok":
            lines.append(f"{r['name']:<22} {r['V_rms']:>6.0f} {r['P_o']:>6.0f} "
                         f"{r['policy']:>8} {r['thd_i']:>8.4f} {r['power_factor']:>7.4f} "
                         f"{r['v_o_mean']:>8.2f}  ok")
        else:
            lines.append(f"{r['name']:<22} {r['V_rms']:>6.0f} {r['P_o']:>6.0f} "
                         f"{r['policy']:>8} {'-':>8} {'-':>7} {'-':>8}  FAILED")
    return "\n".join(lines)


def trend_from_rows(rows):
    """Trend report over constant-load PureSine scenarios."""
    grid = {}
    for r in rows:
        if (r["status"] == "ok" and r["policy"] == ReferencePolicy.PURE_SINE.value
                and not r.get("steps")):
            grid[(r["V_rms"], r["P_o"])] = r["thd_i"]
    return trend_report(grid)


def cmd_suite(args) -> int:
    paths, workers = suite_entries(args.config)
    if not paths:
        raise ConfigError(f"{args.config}: suite lists no scenarios")
    scenarios = []
    for p in paths:
        sc = override(load_scenario(p), args.dt, args.t_end, args.seed)
        scenarios.append(sc)
    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        raise ConfigError("scenario names must be unique within a suite")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    items = [(s, out / s.name) for s in sorted(scenarios, key=lambda s: s.name)]
    workers = args.workers or workers
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_suite_worker, items))
    else:
        rows = [_suite_worker(item) for item in items]
    rows.sort(key=lambda r: r["name"])
    table = summary_table(rows)
    print(table)
    (out / "summary.txt").write_text(table + "\n")
    _write_json(out / "summary.json", {"schema": "tpbr-suite/1", "rows": [
        {k: v for k, v in r.items() if k != "metrics"} for r in rows]})
    try:
        trend = trend_from_rows(rows)
        (out / "trend.txt").write_text(trend.table() + "\n")
        _write_json(out / "trend.json", trend.to_dict())
        print()
        print(trend.table())
    except ValueError as exc:
        print(f"trend report unavailable: {exc}", file=sys.stderr)
    if any(r["status"] != "ok" for r in rows):
        return EXIT_SUITE
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        cert = LmiCertificate.load(args.certificate)
    except FileNotFoundError as exc:
        raise ConfigError(f"certificate not found: {args.certificate}") from exc
    except ValueError as exc:
        raise ConfigError(f"{args.certificate}: {exc}") from exc
    if cert.polarity is None:
        raise ConfigError(f"{args.certificate}: certificate has no polarity")
    if args.config:
        cfg = read_config(args.config)
        params, lmi = params_from(cfg), lmi_from(cfg)
    else:
        params, lmi = ConverterParams(), LmiSettings()
    lmi = replace(lmi, alpha=float(cert.alpha[0]) if cert.alpha is not None else lmi.alpha)
    boxes = lmi.boxes(params) or {}
    problem = build_feasibility_problem(params, cert.polarity, alpha=lmi.alpha,
                                        epsilon=lmi.epsilon, box=boxes.get(cert.polarity),
                                        scaling=cert.scaling if cert.scaling is not None
                                        else lmi.scaling)
    samples = lmi.samples if args.samples is None else args.samples
    report = verify_certificate(cert, problem, samples, seed=args.seed or 0)
    print(f"positivity  min eig(P0)        = {report.p0_min_eig:+.4e}")
    print(f"decrease    worst vertex eig   = {report.worst_vertex_eig:+.4e} "
          f"({report.n_vertex_blocks} blocks)")
    if samples:
        print(f"decrease    worst sample eig   = {report.worst_sample_eig:+.4e} "
              f"({samples} samples)")
    print("PASS" if report.passed else f"FAIL ({len(report.violations)} violations)")
    return EXIT_OK if report.passed else EXIT_INFEASIBLE


def cmd_report(args) -> int:
    target = Path(args.path)
    if target.is_dir() and (target / "summary.json").is_file():
        rows = json.loads((target / "summary.json").read_text())["rows"]
        print(summary_table(rows))
        try:
            print()
            print(trend_from_rows(rows).table())
        except ValueError as exc:
            print(f"trend report unavailable: {exc}")
        return EXIT_OK
    trace_path = target / "trace.csv" if target.is_dir() else target
    if not trace_path.is_file():
        raise ConfigError(f"no trace found at {target}")
    try:
        trace = Trace.from_csv(trace_path)
    except ValueError as exc:
        raise ConfigError(f"{trace_path}: {exc}") from exc
    metrics = compute_metrics(trace, args.f_r, periods=args.periods)
    text = metrics.to_json()
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


# --------------------------------------------------------------------------- entry

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tpbr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="INI file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--samples", type=int, default=None,
                       help="interior samples for certificate verification")
        p.add_argument("--dt", type=float, default=None, help="integration step (s)")
        p.add_argument("--t-end", type=float, default=None, help="simulated time (s)")
        return p

    p = common(sub.add_parser("synthesize", help="solve the LMIs and verify the certificates"))
    p.set_defaults(func=cmd_synthesize)
    p = common(sub.add_parser("simulate", help="run one scenario"))
    p.set_defaults(func=cmd_simulate)
    p = common(sub.add_parser("suite", help="run a scenario suite and the trend report"))
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_suite)
    p = common(sub.add_parser("verify", help="re-check a certificate"), config_required=False)
    p.add_argument("certificate")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("report", help="metrics for a trace, or the summary of a suite")
    p.add_argument("path")
    p.add_argument("--out", default=None)
    p.add_argument("--periods", type=int, default=6)
    p.add_argument("--f-r", type=float, default=60.0)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "t_end", None) is not None and args.t_end <= 0:
        print("error: --t-end must be > 0", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
