"""Run every verification suite and write one CSV per suite.

Exits non-zero if any row fails.
"""

import argparse
import sys
import time
from pathlib import Path

from haarweak import verify
from haarweak.clt import write_report


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--suites", nargs="+", default=sorted(verify.SUITE_FUNCS))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--outdir", default="verify_out")
    args = ap.parse_args()

    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    failed = 0
    for name in args.suites:
        t0 = time.perf_counter()
        rows = verify.run_suite(name, seed=args.seed)
        write_report(rows, out / f"verify_{name}.csv")
        bad = [r for r in rows if not r["passed"]]
        failed += len(bad)
        print(f"{name}: {len(rows) - len(bad)}/{len(rows)} rows pass in {time.perf_counter() - t0:.0f}s")
        for r in bad:
            print(f"  FAIL {r['experiment']} {r['statistic']} = {r['value']:.4g} (tol {r['tolerance']:.4g})")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
