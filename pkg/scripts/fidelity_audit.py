"""Oracle-judged pseudo-label accuracy over an eps grid and all templates.

    python scripts/fidelity_audit.py --out results/audit
"""
import argparse
import logging
from pathlib import Path

import numpy as np

from galforge.checkpoint import atomic_write
from galforge.engine import audit_pseudo_labels

from _common import world_and_generator


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="results/audit")
    ap.add_argument("--eps", default="0,0.25,0.5,0.75,1.0,1.5")
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world, gen = world_and_generator(out)
    grid = [float(e) for e in args.eps.split(",")]
    templates = list(range(gen.table.n_templates))
    acc = np.zeros((args.seeds, len(templates), len(grid)))
    for s in range(args.seeds):
        cells = audit_pseudo_labels(gen, world, grid, templates, args.n, s)
        acc[s] = np.array([c.accuracy for c in cells]).reshape(len(templates), len(grid))
    lines = ["template," + ",".join(f"eps={e}" for e in grid)]
    for i, tau in enumerate(templates):
        lines.append(f"{tau}," + ",".join(f"{v:.4f}" for v in acc[:, i].mean(axis=0)))
    text = "\n".join(lines) + "\n"
    atomic_write(out / "audit.csv", text)
    print(text)


if __name__ == "__main__":
    main()
