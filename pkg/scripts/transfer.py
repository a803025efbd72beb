"""Reuse saved GALOT datasets (L and G) to train other architectures.

    python scripts/transfer.py --archs mlp-32,mlp-128x128x128 --seeds 0,1,2,3,4

Compares each architecture on L+G against the same architecture on L alone.
"""
import argparse
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from galforge.engine import ExperimentConfig, reuse_dataset, run_seed
from galforge.pools import pools_snapshot, read_snapshot, write_snapshot

from _common import world_and_generator


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="results/transfer")
    ap.add_argument("--archs", default="mlp-32,mlp-128x128x128")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--cycles", type=int, default=10)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world, gen = world_and_generator(out)
    cfg = ExperimentConfig(mode="joint", cycles=args.cycles)
    snaps = {}
    for s in (int(v) for v in args.seeds.split(",")):
        path = out / f"seed{s}.csv"
        if not path.exists():
            logging.info("joint run, seed %d", s)
            write_snapshot(path, pools_snapshot(run_seed(replace(cfg, seeds=(s,)), world, gen, s).pools))
        snaps[s] = read_snapshot(path)
    pool_only = {s: sn.select(np.array([p == "pool" for p in sn.provenance])) for s, sn in snaps.items()}
    print(f"{'arch':>18} {'L+G':>8} {'L only':>8}")
    for arch in args.archs.split(","):
        both = reuse_dataset(snaps, arch, world, cfg, cycles=[args.cycles])
        alone = reuse_dataset(pool_only, arch, world, cfg, cycles=[args.cycles])
        print(f"{arch:>18} {np.mean([r.test_accuracy for r in both]):8.4f} "
              f"{np.mean([r.test_accuracy for r in alone]):8.4f}")


if __name__ == "__main__":
    main()
