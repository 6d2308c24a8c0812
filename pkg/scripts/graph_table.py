"""Tabulate graph-benchmark results: median final test MSE per family and training fraction."""

import argparse
import csv
from collections import defaultdict
from pathlib import Path
from statistics import median


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", type=Path, help="directory written by `qmet graph-bench`")
    args = parser.parse_args(argv)
    with open(args.out / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    last = {}
    for r in rows:
        key = (r["fraction"], r["family"], r["seed"])
        if key not in last or int(r["epoch"]) > int(last[key]["epoch"]):
            last[key] = r
    cells = defaultdict(list)
    for (fraction, family, _), r in last.items():
        cells[(family, float(fraction))].append(float(r["test_mse"]))
    fractions = sorted({f for _, f in cells})
    families = sorted({fam for fam, _ in cells})
    print("family".ljust(28) + "".join(f"{f:>10g}" for f in fractions))
    for fam in families:
        vals = [f"{median(cells[(fam, f)]):>10.4f}" if (fam, f) in cells else " " * 10 for f in fractions]
        print(fam.ljust(28) + "".join(vals))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
