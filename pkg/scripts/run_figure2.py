"""Per-step MSE / accuracy curves of a rolled-out executor on ER test sets.

    python scripts/run_figure2.py --checkpoint runs/table1/MPNN-Sum/checkpoint.json --out runs/figure2

Writes ``curves/*.csv`` (step, mse, accuracy) and prints a coarse text view.
"""

import argparse
import sys
from pathlib import Path

from gnnvi import cli
from gnnvi.evaluation import SuiteEntry


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--out", default="runs/figure2")
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)

    cfg = cli.parse_config(cli.preset_text("figure2"))
    cfg.seed = args.seed
    cfg.evaluate.suite = [SuiteEntry(e.spec, args.count) for e in cfg.evaluate.suite]
    table = cli.cmd_evaluate(cfg, [Path(args.checkpoint)], Path(args.out), workers=args.workers)
    for row in table.rows:
        print(f"{row.family} {row.num_states}/{row.num_actions}  converged {row.converged_fraction:.0%}")
        for step, mse, acc in row.curve:
            if step in (1, 2, 5, 10, 20, 50, 100, 200) or step == len(row.curve):
                print(f"  step {step:4d}  mse {mse:10.4g}  acc {100 * acc:6.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
