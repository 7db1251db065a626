"""Count distinct periodic orbits reached from low-discrepancy seeds.

The count is numerical evidence for uniqueness at each parameter point,
not a proof.
"""
import argparse
import sys

from minhopf.model import Params
from minhopf.orbits import orbit_census
from minhopf.reports import dumps


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=float, nargs="+", default=[2.5, 3.0, 4.0, 5.0])
    ap.add_argument("--k3", type=float, default=1.0)
    ap.add_argument("--k5", type=float, default=1.0)
    ap.add_argument("--starts", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=None)
    args = ap.parse_args()

    results = []
    for k in args.k:
        p = Params(k, args.k3, args.k5)
        found = orbit_census(p, n_starts=args.starts, seed=args.seed, jobs=args.jobs)
        results.append(
            {
                "params": p.to_dict(),
                "n_starts": args.starts,
                "distinct_orbits": len(found),
                "orbits": [o.to_dict() for o in found],
            }
        )
        print(f"k={k:g}: {len(found)} distinct orbit(s) from {args.starts} seeds")
    sys.stdout.write(dumps(results))


if __name__ == "__main__":
    main()
