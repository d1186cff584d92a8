"""One end-to-end run through the staged CLI, with artifacts written to --out.

    python scripts/single_run.py --seed 7 --out runs/single
"""

import argparse
import sys

from covsteer.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/single")
    ap.add_argument("--mode", choices=["dd", "rdd", "mb"], default="rdd")
    args = ap.parse_args()
    common = ["--seed", str(args.seed), "--out", args.out, "--mode", args.mode]
    for stage in ("collect", "estimate", "synthesize", "validate"):
        extra = ["--oracle"] if stage == "estimate" else []
        code = cli([stage] + common + extra)
        if code:
            sys.exit(code)


if __name__ == "__main__":
    main()
