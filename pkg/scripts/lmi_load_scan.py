"""Max LMI margin versus the light-load end of the design box.

Bisects for the largest R_L upper bound that still admits a certificate and
prints the margin at a few points on either side.
"""
import argparse
from dataclasses import replace

import numpy as np

from tpbr.lmi import Infeasible, build_feasibility_problem, solve_feasibility
from tpbr.model import ConverterParams, Polarity, UncertaintyBox


def margin(params, r_max, polarity=Polarity.POSITIVE, alpha=1e4):
    box = UncertaintyBox.for_polarity(params, polarity)
    box = replace(box, R_L_range=(box.R_L_range[0], r_max))
    try:
        problem = build_feasibility_problem(params, polarity, alpha, box=box)
        return solve_feasibility(problem).margin
    except Infeasible as exc:
        return exc.best.margin if exc.best is not None else -np.inf


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--alpha", type=float, default=1e4)
    ap.add_argument("--iters", type=int, default=20)
    args = ap.parse_args()
    params = ConverterParams()
    lo_r = params.V_o ** 2 / params.P_o_max
    hi_r = params.V_o ** 2 / params.P_o_min
    print(f"{'R_L max (ohm)':>14} {'P_o min (W)':>12} {'margin':>12}")
    for r in np.geomspace(lo_r * 1.05, hi_r, 8):
        value = margin(params, r, alpha=args.alpha)
        print(f"{r:>14.1f} {params.V_o ** 2 / r:>12.1f} {value:>12.3e}")
    a, b = lo_r * 1.05, hi_r
    for _ in range(args.iters):
        mid = np.sqrt(a * b)
        if margin(params, mid, alpha=args.alpha) > 1e-8:
            a = mid
        else:
            b = mid
    print(f"largest certifiable R_L max ~ {a:.0f} ohm (P_o min ~ {params.V_o ** 2 / a:.1f} W)")


if __name__ == "__main__":
    main()
