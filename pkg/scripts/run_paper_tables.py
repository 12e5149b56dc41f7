#!/usr/bin/env python3
"""Run every shipped experiment config and collect the artifacts.

Usage:
    python scripts/run_paper_tables.py [--out results] [--only PATTERN]

The convergence configs ship with levels 1-4 (a few minutes total). The
two T=10 conservation runs take about half a minute each. Pass
``--only table`` (or ``fig``, ``maxcfl``, or any substring) to run a
subset.
"""

import argparse
import sys
import time
from pathlib import Path

from sbpdp.cli import load_config, run


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="results")
    parser.add_argument("--only", default="")
    parser.add_argument("--parallel", action="store_true")
    args = parser.parse_args()

    config_dir = Path(__file__).resolve().parents[1] / "configs"
    configs = sorted(config_dir.glob("*.json"))
    if args.only:
        configs = [c for c in configs if args.only in c.name]
    if not configs:
        print("no configs matched", file=sys.stderr)
        return 2

    failures = 0
    for path in configs:
        config = load_config(path)
        t0 = time.time()
        try:
            artifacts = run(config, args.out, parallel=args.parallel)
        except Exception as err:  # keep going; report at the end
            print(f"{path.name}: FAILED ({err})")
            failures += 1
            continue
        named = {k: v for k, v in artifacts.items() if isinstance(v, str)}
        print(f"{path.name}: ok in {time.time() - t0:.1f}s -> "
              + ", ".join(named.values()))
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
