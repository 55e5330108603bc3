"""Largest y3(T) of the toy model over unit-norm mean-free controls, for T around pi.

    python scripts/toy_threshold.py --out toy_threshold.csv
"""

import argparse
import csv

import numpy as np

from kdvlab.toy_ode import maximise_y3


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--fractions", default="0.8,0.9,0.95,0.99,1.01,1.05,1.1,1.2")
    ap.add_argument("--n-coef", type=int, default=64)
    ap.add_argument("--out", default="toy_threshold.csv")
    args = ap.parse_args()

    rows = []
    for f in (float(s) for s in args.fractions.split(",")):
        res = maximise_y3(f * np.pi, n_coef=args.n_coef)
        rows.append({"T_over_pi": f, "best_y3": res["best_y3"], "rk4_y3": res["rk4_y3"], "positive": res["found_positive"]})
        print(f"T = {f:.2f} pi   max y3 = {res['best_y3']:+.3e}   (rk4 {res['rk4_y3']:+.3e})")
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
