"""Synthetic Gaussian-mixture worlds with a Bayes-optimal labeling oracle."""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import atomic_write
from .embedding import EmbeddingTable, make_table
from .pools import Snapshot, read_snapshot, write_snapshot

SPLITS = ("pretrain", "pool", "test")


@dataclass(frozen=True)
class WorldSpec:
    classes: int = 10
    dim: int = 2
    layout: str = "ring"
    class_std: float = 0.15
    overlap: float = 1.0  # ring radius / grid spacing
    pretrain_n: int = 20000
    pool_n: int = 4000
    test_n: int = 2000
    cond_dim: int = 8
    seed: int = 0

    @classmethod
    def preset(cls, name: str, **overrides) -> "WorldSpec":
        presets = {
            "default": {},
            "hard100": dict(classes=100, dim=8, layout="grid", class_std=0.25, overlap=1.0),
        }
        if name not in presets:
            raise ValueError(f"unknown world preset {name!r}")
        return cls(**{**presets[name], **overrides})


@dataclass
class World:
    spec: WorldSpec
    means: np.ndarray  # raw-space class means, (C, d)
    shift: np.ndarray  # z-scoring: x_z = (x_raw - shift) / scale
    scale: np.ndarray
    splits: dict[str, tuple[np.ndarray, np.ndarray]]
    table: EmbeddingTable
    bayes_accuracy: float = field(default=float("nan"))

    @property
    def n_classes(self) -> int:
        return self.spec.classes

    @property
    def dim(self) -> int:
        return self.spec.dim

    def means_z(self) -> np.ndarray:
        return (self.means - self.shift) / self.scale

    def std_z(self) -> np.ndarray:
        return self.spec.class_std / self.scale


def class_means(spec: WorldSpec) -> np.ndarray:
    C, d = spec.classes, spec.dim
    if spec.layout == "ring":
        if d < 2:
            raise ValueError("ring layout needs dim >= 2")
        ang = 2 * np.pi * np.arange(C) / C
        means = np.zeros((C, d))
        means[:, 0] = spec.overlap * np.cos(ang)
        means[:, 1] = spec.overlap * np.sin(ang)
        return means
    if spec.layout == "grid":
        side = max(2, math.ceil(C ** (1.0 / d)))
        pts = list(itertools.islice(itertools.product(range(side), repeat=d), C))
        if len(pts) < C:
            raise ValueError("grid too small for class count")
        return spec.overlap * np.array(pts, dtype=np.float64)
    raise ValueError(f"unknown layout {spec.layout!r}")


def make_world(spec: WorldSpec) -> World:
    if spec.classes < 2:
        raise ValueError(f"need at least 2 classes, got {spec.classes}")
    rng = np.random.default_rng(spec.seed)
    means = class_means(spec)
    raw = {}
    for name, n in zip(SPLITS, (spec.pretrain_n, spec.pool_n, spec.test_n)):
        y = rng.integers(0, spec.classes, size=n)
        x = means[y] + spec.class_std * rng.standard_normal((n, spec.dim))
        raw[name] = (x, y.astype(np.int64))
    shift = raw["pretrain"][0].mean(axis=0)
    scale = raw["pretrain"][0].std(axis=0)
    splits = {k: ((x - shift) / scale, y) for k, (x, y) in raw.items()}
    table = make_table(spec.classes, spec.cond_dim, np.random.default_rng([spec.seed, 1]))
    world = World(spec, means, shift, scale, splits, table)
    xt, yt = splits["test"]
    world.bayes_accuracy = float(np.mean(oracle_label(world, xt) == yt))
    return world


def log_posterior(world: World, x: np.ndarray) -> np.ndarray:
    """Unnormalized log p(c|x) for z-scored points; (n, C)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    diff = (x[:, None, :] - world.means_z()[None, :, :]) / world.std_z()
    return -0.5 * np.sum(diff * diff, axis=-1)


def oracle_label(world: World, x: np.ndarray) -> np.ndarray:
    """Posterior argmax; near-exact ties go to the lowest class id."""
    lp = log_posterior(world, x)
    best = lp.max(axis=1, keepdims=True)
    tol = 1e-12 * np.maximum(1.0, np.abs(best))
    return np.argmax(lp >= best - tol, axis=1).astype(np.int64)


# ---------------------------------------------------------------- persistence


def _fmt(v) -> str:
    if isinstance(v, np.ndarray):
        return " ".join(repr(float(a)) for a in v.ravel())
    return str(v)


def save_world(world: World, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, (x, y) in world.splits.items():
        write_snapshot(out / f"{name}.csv", Snapshot(x, y, [name] * len(y), np.zeros(len(y), dtype=np.int64)))
    meta = {f"spec.{k}": v for k, v in asdict(world.spec).items()}
    meta.update(
        {
            "means": world.means,
            "shift": world.shift,
            "scale": world.scale,
            "class_embeddings": world.table.class_embeddings,
            "template_offsets": world.table.template_offsets,
            "bayes_accuracy": repr(world.bayes_accuracy),
        }
    )
    atomic_write(out / "world.meta", "".join(f"{k} = {_fmt(v)}\n" for k, v in meta.items()))


def load_world(in_dir) -> World:
    src = Path(in_dir)
    meta = {}
    for line in (src / "world.meta").read_text().splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            meta[k.strip()] = v.strip()
    fields = WorldSpec.__dataclass_fields__
    spec_kw = {}
    for k, f in fields.items():
        raw = meta[f"spec.{k}"]
        spec_kw[k] = raw if f.type in ("str", str) else (int(raw) if f.type in ("int", int) else float(raw))
    spec = WorldSpec(**spec_kw)

    def arr(key, shape):
        return np.array([float(t) for t in meta[key].split()], dtype=np.float64).reshape(shape)

    C, d, ds = spec.classes, spec.dim, spec.cond_dim
    means = arr("means", (C, d))
    table = EmbeddingTable(arr("class_embeddings", (C, ds)), arr("template_offsets", (-1, ds)))
    splits = {}
    for name in SPLITS:
        snap = read_snapshot(src / f"{name}.csv")
        if snap.x.shape[1] != d:
            raise ValueError(f"{name}.csv has dimension {snap.x.shape[1]}, metadata says {d}")
        splits[name] = (snap.x, snap.label)
    return World(spec, means, arr("shift", (d,)), arr("scale", (d,)), splits, table, float(meta["bayes_accuracy"]))
