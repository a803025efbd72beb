"""One-factor ablations of GALOT: eps_max, sigma_GAL, B_GAL rule and retention.

    python scripts/ablation.py --factor eps_max --values 0,0.25,0.5,1.0
    python scripts/ablation.py --factor sigma_gal --values entropy,margin,least_confidence,bald

Each value runs joint mode over the given seeds; prints a budget x value table.
"""
import argparse
import logging
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from galforge.checkpoint import atomic_write
from galforge.cli import _csv_text
from galforge.engine import ExperimentConfig, run_experiment

from _common import world_and_generator


def main():
    names = {f.name for f in fields(ExperimentConfig)}
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--factor", required=True, choices=sorted(names - {"classifier", "seeds"}))
    ap.add_argument("--values", required=True)
    ap.add_argument("--out", default="results/ablation")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--cycles", type=int, default=10)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world, gen = world_and_generator(out)
    typ = type(getattr(ExperimentConfig(), args.factor))
    base = ExperimentConfig(cycles=args.cycles, seeds=tuple(int(s) for s in args.seeds.split(",")))
    table = {}
    for raw in args.values.split(","):
        if typ is bool:
            value = raw.lower() in ("1", "true", "yes")
        elif typ in (int, float, str):
            value = typ(raw)
        else:  # optional float such as eps_fixed
            value = None if raw.lower() == "none" else float(raw)
        logging.info("%s = %r", args.factor, value)
        rows = run_experiment(replace(base, **{args.factor: value}), world, gen)
        atomic_write(out / f"{args.factor}={raw}.csv", _csv_text(rows))
        budgets = sorted({r.annotation_budget for r in rows})
        table[raw] = (budgets, [np.mean([r.test_accuracy for r in rows if r.annotation_budget == b]) for b in budgets])
    budgets = next(iter(table.values()))[0]
    print(f"{args.factor:>16} " + " ".join(f"{b:>7}" for b in budgets) + "     avg")
    for raw, (_, accs) in table.items():
        print(f"{raw:>16} " + " ".join(f"{a:7.4f}" for a in accs) + f" {np.mean(accs):7.4f}")


if __name__ == "__main__":
    main()
