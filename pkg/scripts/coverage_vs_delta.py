"""Empirical coverage of the realization-error radius for several confidence levels.

    python scripts/coverage_vs_delta.py --runs 1000
"""

import argparse
import json

from covsteer.cli import coverage_study, scenario_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=1000)
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.5, 0.2, 0.1, 0.01, 0.001])
    args = ap.parse_args()
    cfg = scenario_config("coverage")
    results = []
    for d in args.deltas:
        res = coverage_study(cfg, args.runs, d)
        results.append(res)
        print(f"delta {d:<6g} nominal {1 - d:.3f}  empirical {res['coverage']:.3f}", flush=True)
    print(json.dumps(results, indent=1))


if __name__ == "__main__":
    main()
