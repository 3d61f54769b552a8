"""Evaluate one MPNN-Sum checkpoint on every graph family and the maze.

    python scripts/run_table2.py --checkpoint runs/table1/MPNN-Sum/checkpoint.json --out runs/table2

Without ``--checkpoint`` a model is trained first with the default recipe.
"""

import argparse
import sys
from pathlib import Path

from gnnvi import cli
from gnnvi.evaluation import SuiteEntry


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/table2")
    ap.add_argument("--checkpoint")
    ap.add_argument("--count", type=int, default=100, help="test MDPs per cell")
    ap.add_argument("--max-states", type=int, default=100, help="skip sizes above this")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)

    out = Path(args.out)
    cfg = cli.parse_config(cli.preset_text("table2"))
    cfg.seed = args.seed
    cfg.evaluate.suite = [
        SuiteEntry(e.spec, args.count) for e in cfg.evaluate.suite if e.spec.num_states <= args.max_states
    ]
    if args.checkpoint:
        ck = Path(args.checkpoint)
    else:
        ck = out / "train" / "checkpoint.json"
        if not ck.exists():
            cli.cmd_train(cfg, ck.parent)
    table = cli.cmd_evaluate(cfg, [ck], out / "eval", workers=args.workers)
    print(table.to_text(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
