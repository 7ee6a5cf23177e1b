"""F(q) on a grid for several sampling ratios at one noise level.

Output columns: delta, q, F.  A verdict line per delta goes to stderr.
"""

import argparse
import csv
import sys

from haarweak.free_energy import GridSpec, ModelParams, check_condition


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigma", type=float, default=0.05)
    ap.add_argument("--deltas", type=float, nargs="+", default=[1.0, 1.5, 1.9, 2.1, 2.5])
    ap.add_argument("--Delta", type=float, default=0.0)
    ap.add_argument("--grid-n", type=int, default=120)
    ap.add_argument("--gaussian", action="store_true")
    ap.add_argument("-o", "--output", default="-")
    args = ap.parse_args()

    grid = GridSpec(n=args.grid_n)
    fh = sys.stdout if args.output == "-" else open(args.output, "w", newline="")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["delta", "q", "F"])
    for delta in args.deltas:
        curve = check_condition(ModelParams(args.sigma, delta, args.Delta), grid, gaussian=args.gaussian)
        for q, f in zip(curve.grid, curve.values):
            w.writerow([delta, f"{q:.8f}", f"{f:.10g}"])
        print(f"delta={delta}: {curve.verdict} F''(0)={curve.curvature_at_zero:.5f} "
              f"min F={curve.min_interior:.4g} {curve.reason}", file=sys.stderr)
    if fh is not sys.stdout:
        fh.close()


if __name__ == "__main__":
    main()
