"""Sampled Lyapunov value around the DC operating point.

At a finite evaluation rate the closed loop settles into a periodic orbit, so
the sampled value oscillates instead of decreasing; the band shrinks roughly
in proportion to the evaluation period.
"""
import argparse
from dataclasses import replace

import numpy as np

from tpbr.control import ReferenceSpec, SwitchingLaw, lyapunov_value
from tpbr.lmi import synthesize_pair
from tpbr.model import ConverterParams, Polarity, dc_equilibrium_current
from tpbr.sim import GridSpec, LoadProfile, SimConfig, run_simulation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--v-in", type=float, default=170.0)
    ap.add_argument("--r-l", type=float, default=481.33)
    ap.add_argument("--t-end", type=float, default=0.4)
    ap.add_argument("--rates", type=float, nargs="+", default=[259.2e3, 1.296e6, 6.48e6])
    args = ap.parse_args()
    params = ConverterParams()
    certs, _ = synthesize_pair(params)
    law = SwitchingLaw.from_certificates(certs[Polarity.POSITIVE], certs[Polarity.NEGATIVE])
    i_eq = dc_equilibrium_current(params, args.v_in, args.r_l)
    ref = ReferenceSpec(policy="voltage", power=args.v_in * i_eq)
    print(f"i_eq = {i_eq:.5f} A")
    print(f"{'f_eval (Hz)':>12} {'rising periods':>15} {'V max':>10} {'mean v_o':>9}")
    for rate in args.rates:
        cfg = SimConfig(f_eval=rate, t_end=args.t_end)
        cfg = replace(cfg, decimation=cfg.eval_every)
        tr = run_simulation(params, law, GridSpec(V_rms=args.v_in, dc=True),
                            LoadProfile.constant(args.r_l), ref, cfg)
        w = tr.window(args.t_end - 0.1, args.t_end)
        e = np.column_stack([w.i_L - i_eq, w.v_C - params.V_o])
        V = np.array([lyapunov_value(law, x, Polarity.POSITIVE) for x in e])
        rises = np.diff(V) > 1e-3 * np.abs(V[:-1])
        print(f"{rate:>12.4g} {rises.mean():>15.3f} {V.max():>10.3e} {w.v_C.mean():>9.2f}")


if __name__ == "__main__":
    main()
