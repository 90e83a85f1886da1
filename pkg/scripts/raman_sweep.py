"""Raman click probability against P_IN * T_B, closed form and Monte-Carlo.

Writes one CSV row per reference power with the analytic p_Raman, the
linear fit residual and (with --pulses > 0) a Monte-Carlo dark-light
estimate taken with the signal switched off.
"""
import argparse
import csv
import sys

import numpy as np

from scmqkd import experiments, physics
from scmqkd.core import Outcome, load_config, paper_baseline
from scmqkd.simulator import SessionSpec, run_session


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=None)
    ap.add_argument("--powers", default="-35:-15:1", help="start:stop:step in dBm (stop inclusive)")
    ap.add_argument("--pulses", type=int, default=0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    cfg = load_config(args.config) if args.config else paper_baseline()
    start, stop, step = (float(x) for x in args.powers.split(":"))
    powers = np.arange(start, stop + step / 2, step)
    # no signal photons: every click is Raman, crosstalk floor or dark count
    dark = experiments.set_field(cfg, "subcarrier.mean_photon_number", 1e-12)

    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["power_dbm", "pin_tb_w", "p_raman", "p_raman_over_d_b", "mc_noise_click_prob"])
    xs, ys = [], []
    for p in powers:
        c = experiments.set_field(dark, "reference.power_dbm", p)
        x = physics.dbm_to_watts(p) * physics.db_to_linear(-c.link.bob_loss_db)
        y = physics.raman_click_probability(c.reference, c.link.bob_loss_db, c.link.reference_active)
        mc = ""
        if args.pulses:
            o = run_session(SessionSpec(c, args.pulses, args.seed)).outcome[0]
            mc = repr((np.count_nonzero(o == Outcome.USB) + np.count_nonzero(o == Outcome.LSB)
                       + 2 * np.count_nonzero(o == Outcome.DOUBLE)) / args.pulses)
        xs.append(x)
        ys.append(y)
        writer.writerow([repr(float(p)), repr(float(x)), repr(float(y)), repr(float(y / c.detectors.dark_count_prob)), mc])
    slope, icpt = np.polyfit(xs, ys, 1)
    print(f"# slope {slope:.6g} per W per gate, intercept {icpt:.3g}", file=sys.stderr)


if __name__ == "__main__":
    main()
