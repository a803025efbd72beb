"""Accuracy vs. annotation budget for AL baselines, GALOT and GALOT-basic.

    python scripts/table1.py --out results/table1 --seeds 0,1,2,3,4

Writes one CSV per method plus report.csv (mean over seeds per budget).
"""
import argparse
import logging
from dataclasses import replace
from pathlib import Path

from galforge.cli import _csv_text, build_report
from galforge.checkpoint import atomic_write
from galforge.engine import ExperimentConfig, run_experiment

from _common import world_and_generator

BASELINES = ("random", "entropy", "margin", "least_confidence", "bald", "kmeans", "coreset")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="results/table1")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--cycles", type=int, default=10)
    ap.add_argument("--b-al", type=int, default=50)
    ap.add_argument("--baselines", default=",".join(BASELINES))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world, gen = world_and_generator(out)
    base = ExperimentConfig(cycles=args.cycles, b_al=args.b_al, seeds=tuple(int(s) for s in args.seeds.split(",")))
    runs = {f"al-{s}": replace(base, mode="al", sigma_al=s) for s in args.baselines.split(",") if s}
    runs["galot"] = replace(base, mode="joint")
    runs["galot-basic"] = replace(base, mode="joint_basic")
    runs["full"] = replace(base, mode="full")
    rows = []
    for name, cfg in runs.items():
        logging.info("running %s", name)
        got = run_experiment(cfg, world, gen if cfg.mode != "al" else None)
        atomic_write(out / f"{name}.csv", _csv_text(got))
        rows.extend(got)
    report = build_report(rows)
    atomic_write(out / "report.csv", report)
    print(report)


if __name__ == "__main__":
    main()
