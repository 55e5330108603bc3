"""Sign and coercivity of I_psi over random null controls for several horizons.

    python scripts/obstruction_sweep.py --T 0.25,0.5,1.0 --samples 50 --jobs 3
"""

import argparse
import os

from kdvlab.critical_lengths import make_pair
from kdvlab.obstruction_experiments import sign_definiteness_sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--k", type=int, default=2)
    ap.add_argument("--l", type=int, default=1)
    ap.add_argument("--T", default="0.25,0.5,1.0")
    ap.add_argument("--samples", type=int, default=50)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--N", type=int, default=512)
    ap.add_argument("--jobs", type=int, default=min(3, os.cpu_count() or 1))
    ap.add_argument("--out", default="obstruction")
    args = ap.parse_args()

    pair = make_pair(args.k, args.l)
    T_list = [float(s) for s in args.T.split(",")]
    rep = sign_definiteness_sweep(pair, T_list, args.samples, seed=args.seed, N=args.N, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    rep.write_json(os.path.join(args.out, "report.json"))
    rep.write_csv(os.path.join(args.out, "records.csv"))
    for T in T_list:
        v = rep.verdicts[repr(T)]
        print(f"T={T:g}: {v['verdict']:12s} used {v['n_used']:3d}  min coercivity {v['min_ratio']:.3f}  "
              f"median |I/N^2 - E|/|E| {v['median_ratio_gap_E']:.3f}  max Parseval gap {v['parseval_max_gap']:.2e}")


if __name__ == "__main__":
    main()
