"""Input-current THD and switching frequency versus controller evaluation rate."""
import argparse

from tpbr.analysis import compute_metrics
from tpbr.control import ReferenceSpec, SwitchingLaw
from tpbr.lmi import synthesize_pair
from tpbr.model import ConverterParams, Polarity
from tpbr.sim import GridSpec, LoadProfile, SimConfig, run_simulation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--v-rms", type=float, default=120.0)
    ap.add_argument("--power", type=float, default=300.0)
    ap.add_argument("--t-end", type=float, default=0.3)
    ap.add_argument("--rates", type=float, nargs="+",
                    default=[129.6e3, 259.2e3, 648e3, 1.296e6, 6.48e6])
    args = ap.parse_args()
    params = ConverterParams()
    certs, _ = synthesize_pair(params)
    law = SwitchingLaw.from_certificates(certs[Polarity.POSITIVE], certs[Polarity.NEGATIVE])
    grid = GridSpec(V_rms=args.v_rms)
    load = LoadProfile.for_power(params, args.power)
    ref = ReferenceSpec(policy="sine", power=args.power)
    print(f"{'f_eval (Hz)':>12} {'THD':>8} {'PF':>8} {'f_sw avg (Hz)':>14} {'clamp':>7}")
    for rate in args.rates:
        tr = run_simulation(params, law, grid, load, ref, SimConfig(f_eval=rate, t_end=args.t_end))
        m = compute_metrics(tr)
        print(f"{rate:>12.4g} {m.thd_i:>8.4f} {m.power_factor:>8.4f} "
              f"{m.avg_switching_freq:>14.0f} {m.clamp_duty:>7.3f}")


if __name__ == "__main__":
    main()
