"""Print the summary records of one or more experiment output directories."""

import argparse
import json
from pathlib import Path


def summaries(out: Path) -> list:
    lines = (out / "report.jsonl").read_text().splitlines()
    return [r for r in map(json.loads, lines) if "summary" in r or "status" in r]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("dirs", nargs="+", type=Path, help="directories written by `qmet ... --out DIR`")
    args = parser.parse_args(argv)
    for out in args.dirs:
        print(f"# {out}")
        for rec in summaries(out):
            kind = rec.pop("summary", rec.pop("experiment", ""))
            print(kind, " ".join(f"{k}={v}" for k, v in sorted(rec.items())))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
