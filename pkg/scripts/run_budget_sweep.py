#!/usr/bin/env python3
"""Ablation sweep over the memory budget knobs.

Crosses temporal bank size, retrieval fan-out, and temporal pooling grid
against a fixed stream, checking the budget cap and weight conservation in
every cell. Cells whose config cannot pool the input grid are skipped with a
reason rather than failing the sweep.
"""

import argparse
import json
import sys

from streammem import default_config, sweep_ablation

DEFAULT_GRID = {
    "n_tem": [4, 8, 16, 25],
    "n_ret": [1, 3],
    "p_tem": [2, 4],
}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", default=None,
                    help="JSON object field -> values (default: built-in grid)")
    ap.add_argument("--frames", type=int, default=120)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv", default="sweep.csv", help="output CSV path")
    args = ap.parse_args()

    grid = json.loads(args.grid) if args.grid else DEFAULT_GRID
    base = default_config(dim=args.dim)
    report = sweep_ablation(grid, base, frames=args.frames, seed=args.seed)

    with open(args.csv, "w") as fh:
        fh.write(report.to_csv())

    ok_rows = [r for r in report.rows if r.ok]
    skipped = [r for r in report.rows if not r.ok]
    for row in ok_rows:
        knobs = " ".join(f"{k}={v}" for k, v in row.overrides)
        flag = "ok" if row.invariants_ok else "INVARIANT VIOLATION"
        print(f"{knobs:<30} budget {row.budget:>5}  final {row.final_tokens:>5}  {flag}")
    for row in skipped:
        knobs = " ".join(f"{k}={v}" for k, v in row.overrides)
        print(f"{knobs:<30} skipped: {row.reason}")
    print(f"{len(ok_rows)} cells run, {len(skipped)} skipped; wrote {args.csv}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
