"""Xi1 and the overlap curvature at q = 0 across noise levels.

Both Xi1 routes (Newton on the concave problem and the one-dimensional
minimization) are reported side by side.
"""

import argparse
import csv
import sys

from haarweak.variational import solve_xi1, xi1_via_min_t, xi2_curvature_at_zero
from haarweak.y_model import YMeasure


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigmas", type=float, nargs="+", default=[1.0, 0.5, 0.3, 0.2, 0.1, 0.05, 0.02, 0.01])
    args = ap.parse_args()

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["sigma", "xi1_newton", "xi1_min_t", "route_gap", "xi2_curvature_at_zero"])
    for s in args.sigmas:
        meas = YMeasure.population(s)
        a, b = solve_xi1(meas).value, xi1_via_min_t(meas)
        w.writerow([s, f"{a:.12f}", f"{b:.12f}", f"{abs(a - b):.1e}", f"{xi2_curvature_at_zero(meas):.8f}"])
        sys.stdout.flush()


if __name__ == "__main__":
    main()
