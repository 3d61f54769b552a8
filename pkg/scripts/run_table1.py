"""Train every executor variant with the default recipe and evaluate the size-generalisation grid.

    python scripts/run_table1.py --out runs/table1 [--variants MPNN-Sum MPNN-Max] [--count 100]

Checkpoints already present under ``<out>/<variant>/`` are reused.
"""

import argparse
import sys
from pathlib import Path

from gnnvi import cli
from gnnvi.evaluation import SuiteEntry
from gnnvi.executor import VARIANTS


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/table1")
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    ap.add_argument("--count", type=int, default=100, help="test MDPs per cell")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)

    out = Path(args.out)
    cfg = cli.parse_config(cli.preset_text("table1"))
    cfg.seed = args.seed
    cfg.evaluate.suite = [SuiteEntry(e.spec, args.count) for e in cfg.evaluate.suite]
    checkpoints = []
    for variant in args.variants:
        ck = out / variant / "checkpoint.json"
        if not ck.exists():
            print(f"== training {variant}", flush=True)
            cfg.train = {"model": {"variant": variant}}
            cli.cmd_train(cfg, ck.parent)
        checkpoints.append(ck)
    table = cli.cmd_evaluate(cfg, checkpoints, out / "eval", workers=args.workers)
    print(table.to_text(by="variant"), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
