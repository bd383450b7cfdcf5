"""Run every registered experiment and write one CSV/JSON pair per experiment.

    python3 scripts/run_all.py --out results --seed 0
"""

import argparse
import sys

from errorcalc.cli import main as cli_main
from errorcalc.experiments import REGISTRY


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()
    codes = {}
    for exp_id in REGISTRY:
        codes[exp_id] = cli_main(["run", "--experiment", exp_id, "--out", args.out,
                                  "--seed", str(args.seed), "--workers", str(args.workers)])
    failed = [k for k, c in codes.items() if c != 0]
    print(f"{len(codes) - len(failed)}/{len(codes)} experiments passed" + (f"; failed: {failed}" if failed else ""))
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
