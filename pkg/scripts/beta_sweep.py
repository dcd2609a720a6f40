"""Invariant-set area as a function of the pole-placement parameter beta.

    python3 scripts/beta_sweep.py --betas 0.05 0.1 0.15 0.2 0.25 0.3 --out out/sweep.csv
"""

import argparse
import csv
import time

from hgosafe.presets import double_integrator
from hgosafe.reach import ReachConfig, beta_sweep


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--betas", type=float, nargs="+", default=[round(0.05 * i, 2) for i in range(1, 11)])
    ap.add_argument("--horizon", default="converged", help="'converged' or a horizon in seconds")
    ap.add_argument("--counts", type=int, default=101, help="grid nodes per axis")
    ap.add_argument("--threads", type=int, default=0)
    ap.add_argument("--out", default="sweep.csv")
    args = ap.parse_args()

    cfg = double_integrator().with_overrides(grid={"counts": args.counts})
    m = cfg.build()
    horizon = args.horizon if args.horizon == "converged" else float(args.horizon)
    start = time.perf_counter()
    res = beta_sweep(args.betas, m.system, m.sets, m.grid, horizon, cfg=ReachConfig(threads=args.threads))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["beta", "area"])
        for b, a in zip(res.betas, res.areas):
            w.writerow([b, "" if a is None else a])
            print(f"beta {b:<6g} area {a if a is None else round(a, 3)}")
    for b, err in res.errors.items():
        print(f"beta {b:g} failed: {err}")
    print(f"best beta {res.best_beta:g} ({time.perf_counter() - start:.0f} s)")


if __name__ == "__main__":
    main()
