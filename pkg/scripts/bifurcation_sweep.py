"""Tabulate the spectrum at E and the periodic orbit across the Hopf point.

    python3 scripts/bifurcation_sweep.py --k3 1 --k5 1 --k-min 1.5 --k-max 4 --k-step 0.1 --out sweep.csv
"""
import argparse
import csv
import logging
import math

import numpy as np

from minhopf.model import Params, Regime, classify_regime, interior_equilibrium, jacobian
from minhopf.orbits import NewtonFailure, find_periodic_orbit, orbit_samples
from minhopf.spectral import eigvals3

log = logging.getLogger("sweep")


def row(p: Params) -> dict:
    spectrum = eigvals3(jacobian(p, interior_equilibrium(p)))
    out = {
        "k": p.k,
        "regime": classify_regime(p).value,
        "max_re": spectrum.max_real,
        "max_im": max(abs(r.imag) for r in spectrum.roots),
        "period": math.nan,
        "amp_x": math.nan,
        "floquet_max": math.nan,
    }
    if classify_regime(p) is Regime.OSCILLATORY:
        try:
            orb = find_periodic_orbit(p)
        except NewtonFailure as exc:
            log.warning("k=%g: %s", p.k, exc)
            return out
        _, ys, _ = orbit_samples(p, orb, n=500)
        out.update(period=orb.period, amp_x=float(np.ptp(ys[:, 0])), floquet_max=orb.max_nontrivial_modulus)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k3", type=float, default=1.0)
    ap.add_argument("--k5", type=float, default=1.0)
    ap.add_argument("--k-min", type=float, default=1.5)
    ap.add_argument("--k-max", type=float, default=4.0)
    ap.add_argument("--k-step", type=float, default=0.1)
    ap.add_argument("--out", default="bifurcation_sweep.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    n = int(round((args.k_max - args.k_min) / args.k_step)) + 1
    rows = [row(Params(args.k_min + i * args.k_step, args.k3, args.k5)) for i in range(n)]
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        log.info("k=%6.3f  %-15s  max Re=%+.4f  period=%8.4f  amp_x=%8.4f  |m|=%.4f",
                 r["k"], r["regime"], r["max_re"], r["period"], r["amp_x"], r["floquet_max"])
    # near onset the period should approach 2 pi / sqrt(k3 k5)
    log.info("linear period at onset: %.6f", 2 * math.pi / math.sqrt(args.k3 * args.k5))


if __name__ == "__main__":
    main()
