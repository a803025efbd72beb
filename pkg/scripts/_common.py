"""Shared setup for the experiment scripts: world plus a cached generator."""
import logging
from pathlib import Path

from galforge import generator as G
from galforge.worldgen import WorldSpec, make_world

log = logging.getLogger("scripts")


def world_and_generator(out_dir: Path, spec: WorldSpec | None = None, gen_cfg: G.GeneratorConfig | None = None):
    world = make_world(spec or WorldSpec())
    ckpt = out_dir / "generator.glt"
    if ckpt.exists():
        return world, G.load_generator(ckpt)
    log.info("pre-training generator (one-off, cached at %s)", ckpt)
    x, y = world.splits["pretrain"]
    gen = G.pretrain_generator(x, y, world.table, gen_cfg or G.GeneratorConfig())
    G.save_generator(gen, ckpt)
    return world, gen
