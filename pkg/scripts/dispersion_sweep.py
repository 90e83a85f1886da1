"""QBER per subcarrier against residual dispersion (net D*L in ps/nm)."""
import argparse
import csv
import sys

import numpy as np

from scmqkd import experiments, physics
from scmqkd.core import load_config, paper_baseline


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=None)
    ap.add_argument("--residual", default="-200:200:10", help="start:stop:step in ps/nm (stop inclusive)")
    ap.add_argument("--pulses", type=int, default=0, help="Monte-Carlo pulses per point (0 = analytic only)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    cfg = load_config(args.config) if args.config else paper_baseline()
    start, stop, step = (float(x) for x in args.residual.split(":"))
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["residual_ps_nm", "subcarrier_idx", "frequency_ghz", "theta_d_rad", "qber_analytic",
                     "qber_mc"])
    for dl in np.arange(start, stop + step / 2, step):
        c = experiments.set_field(cfg, "link.dcf_residual_ps_nm", dl)
        mc = {}
        if args.pulses:
            _log, result = experiments.simulate(c, args.seed, args.pulses)
            mc = result.qber_measured
        for w, s in c.channels():
            writer.writerow([repr(float(dl)), s, c.subcarrier(w, s).frequency_ghz,
                             repr(physics.channel_dispersion_offset(c, w, s)),
                             repr(physics.channel_qber(c, w, s)), repr(mc[(w, s)]) if mc else ""])


if __name__ == "__main__":
    main()
