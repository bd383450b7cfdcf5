"""Sweep the four bias operators of the graduation scheme over n and print a CSV.

    python3 scripts/bias_sweep.py --phi "cos(x0)" --chi 1 --law normal > sweep.csv

Each row holds the estimate, its stderr and the n -> infinity reference, so the
O(1/n^2) approach to the limit can be read off directly.
"""

import argparse
import csv
import sys

from errorcalc.estimation import KINDS, estimate_kinds, reference_value
from errorcalc.laws import law_from_json
from errorcalc.schemes import graduation_scheme


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--phi", default="cos(x0)")
    p.add_argument("--chi", default="1")
    p.add_argument("--law", default="normal")
    p.add_argument("--levels", default="4,8,16,32,64")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    scheme = graduation_scheme(law_from_json({"kind": args.law}))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["n", "kind", "value", "stderr", "reference"])
    refs = {k: reference_value(k, scheme.reference, args.phi, args.chi) for k in KINDS}
    for n in (int(t) for t in args.levels.split(",")):
        for kind, e in estimate_kinds(scheme, args.phi, args.chi, n, args.samples, seed=args.seed).items():
            w.writerow([n, kind.value, repr(e.value), repr(e.stderr), repr(refs[kind])])
    return 0


if __name__ == "__main__":
    sys.exit(main())
