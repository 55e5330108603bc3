"""Three routes to the constant E of a critical pair, and their ratios.

The direct sum, the closed form and the large-z limit of the integrated
kernel are printed side by side; the kernel limit is evaluated at a few
large |z| to show the convergence.
"""

import argparse

import numpy as np

from kdvlab.critical_lengths import compute_E, e_closed_form, integral_B_closed, make_pair


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--k", type=int, default=2)
    ap.add_argument("--l", type=int, default=1)
    args = ap.parse_args()

    pair = make_pair(args.k, args.l)
    direct = compute_E(pair, "direct")
    closed = e_closed_form(args.k, args.l)
    asym = compute_E(pair, "asymptotic")
    print(f"pair ({args.k},{args.l})  L = {pair.L:.10f}  p = {pair.p:.10f}")
    print(f"E direct      {direct:.10f}")
    print(f"E closed form {closed:.10f}   ratio to direct {closed / direct:.6f}")
    print(f"E asymptotic  {asym:.10f}   ratio to direct {asym / direct:.6f}")
    for z in (1e2, 1e3, 1e4, 1e5):
        val = integral_B_closed(z, pair) * z ** (4.0 / 3.0)
        print(f"  z = {z:8.0e}: z^(4/3) int B dx = {complex(val):.6f}")


if __name__ == "__main__":
    main()
