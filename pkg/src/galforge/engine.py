"""Active-learning cycles mixing pool selection with optimized generation."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Iterable

import numpy as np

from . import acquisition as acq
from . import classifier as clf
from .embedding import predefined_condition
from .generator import GeneratorModel, generate, sample
from .pools import Pools, Snapshot, pools_snapshot
from .textopt import OptimizerConfig, epsilon_schedule, text_opt
from .worldgen import World, oracle_label

log = logging.getLogger(__name__)

MODES = ("al", "gal", "joint", "full", "joint_basic")
RETENTION = ("accumulate", "replace")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "joint"
    cycles: int = 10
    b_al: int = 50
    b_gal: str = "equal_L"  # equal_L | ratio:<r> | fixed:<m>
    sigma_al: str = "margin"
    sigma_gal: str = "margin"
    mc_passes: int = 10
    gen_multiplier: int = 1
    retention: str = "accumulate"
    reset_labeled: bool = False
    template_id: int = 0
    eps_max: float = 0.5
    eps_fixed: float | None = None
    alpha_ratio: float = 0.2
    steps: int = 10
    k: int = 6
    prop1_factor: bool = True
    classifier: clf.ClassifierConfig = field(default_factory=clf.ClassifierConfig)
    seeds: tuple[int, ...] = (0,)
    record_wall_time: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.retention not in RETENTION:
            raise ValueError(f"unknown retention {self.retention!r}")
        if self.gen_multiplier < 1:
            raise ValueError("gen_multiplier must be >= 1")
        parse_b_gal(self.b_gal)
        acq.AcquisitionFn(self.sigma_al)
        if self.sigma_gal not in acq.SCORE_KINDS + ("random",):
            raise ValueError(f"{self.sigma_gal!r} cannot be used for generation")

    def resolved(self) -> "ExperimentConfig":
        """Apply mode-implied overrides (joint_basic: zero-offset template, no optimization)."""
        if self.mode == "joint_basic":
            return replace(self, template_id=0, eps_fixed=0.0)
        return self

    @property
    def method(self) -> str:
        if self.mode == "al":
            return f"al:{self.sigma_al}"
        return {"gal": "gal", "joint": "galot", "joint_basic": "galot_basic", "full": "full"}[self.mode]

    def epsilon(self, cycle: int) -> float:
        if self.eps_fixed is not None:
            return self.eps_fixed
        return epsilon_schedule(cycle, self.cycles, self.eps_max)

    def optimizer(self, cycle: int) -> OptimizerConfig:
        return OptimizerConfig(eps=self.epsilon(cycle), alpha_ratio=self.alpha_ratio, steps=self.steps, k=self.k,
                               sigma=self.sigma_gal, passes=self.mc_passes, prop1_factor=self.prop1_factor)


def parse_b_gal(rule: str) -> tuple[str, float]:
    if rule == "equal_L":
        return "equal_L", 1.0
    name, _, arg = rule.partition(":")
    if name == "ratio" and arg:
        return "ratio", float(arg)
    if name == "fixed" and arg:
        return "fixed", float(int(arg))
    raise ValueError(f"bad B_GAL rule {rule!r}; expected equal_L, ratio:<r> or fixed:<m>")


def b_gal_count(rule: str, n_labeled: int) -> int:
    name, arg = parse_b_gal(rule)
    if name == "equal_L":
        return n_labeled
    if name == "ratio":
        return int(round(arg * n_labeled))
    return int(arg)


def class_counts(total: int, n_classes: int) -> list[int]:
    """Round-robin split: counts differ by at most one, low class ids first."""
    base, extra = divmod(total, n_classes)
    return [base + (1 if c < extra else 0) for c in range(n_classes)]


@dataclass
class ResultRow:
    run_id: str
    seed: int
    method: str
    cycle: int
    annotation_budget: int
    test_accuracy: float
    mean_sigma_generated: float = float("nan")
    pseudo_label_accuracy: float = float("nan")
    wall_ms: int = 0


ROW_FIELDS = [f.name for f in fields(ResultRow)]


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def format_row(row: ResultRow) -> str:
    return ",".join(_fmt(getattr(row, k)) for k in ROW_FIELDS)


def parse_rows(text: str) -> list[ResultRow]:
    rows = []
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        return rows
    header = lines[0].split(",")
    if header != ROW_FIELDS:
        raise ValueError(f"unexpected results header {lines[0]!r}")
    types = {f.name: f.type for f in fields(ResultRow)}
    for ln in lines[1:]:
        vals = ln.split(",")
        kw = {}
        for k, v in zip(header, vals):
            t = types[k]
            kw[k] = int(v) if t in ("int", int) else float(v) if t in ("float", float) else v
        rows.append(ResultRow(**kw))
    return rows


# ---------------------------------------------------------------- runs


@dataclass
class RunState:
    pools: Pools
    model: clf.ClassifierModel
    rows: list[ResultRow] = field(default_factory=list)


def _training_set(pools: Pools, cycle: int, mode: str, reset_labeled: bool, retention: str):
    d = pools.pool_x.shape[1]
    parts_x, parts_y = [], []
    if mode != "gal":
        c = cycle if reset_labeled else None
        parts_x.append(pools.labeled_x(c))
        parts_y.append(pools.labeled_labels(c))
    if mode != "al":
        gx, gy = pools.generated_arrays(None if retention == "accumulate" else {cycle})
        parts_x.append(gx)
        parts_y.append(gy)
    x = np.concatenate([p.reshape(-1, d) for p in parts_x])
    y = np.concatenate(parts_y).astype(np.int64)
    return x, y


def _score_generated(cfg: ExperimentConfig, model, xs, seed) -> float:
    if len(xs) == 0:
        return float("nan")
    kind = cfg.sigma_gal if cfg.sigma_gal in acq.SCORE_KINDS else "entropy"
    fn = acq.AcquisitionFn(kind, passes=cfg.mc_passes)
    return float(np.mean(acq.model_scores(fn, model, xs, seed)))


def generate_for_cycle(cfg: ExperimentConfig, gen: GeneratorModel, world: World, model, pools: Pools,
                       cycle: int, total: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Optimize one condition per class, then generate ``total`` samples round-robin."""
    eps = cfg.epsilon(cycle)
    ocfg = cfg.optimizer(cycle)
    xs_all, ys_all = [], []
    for c, count in enumerate(class_counts(total, world.n_classes)):
        if count == 0:
            continue
        anchor = predefined_condition(gen.table, c, cfg.template_id)
        cond = text_opt(anchor, ocfg, gen, model, [seed, cycle, 2, c])
        xs = generate(gen, cond, count * cfg.gen_multiplier, [seed, cycle, 3, c])
        if cfg.gen_multiplier > 1:
            keep = np.sort(np.random.default_rng([seed, cycle, 4, c]).choice(len(xs), size=count, replace=False))
            xs = xs[keep]
        pools.append_generated(xs, cond, cycle, eps)
        xs_all.append(xs)
        ys_all.append(np.full(count, c))
    if not xs_all:
        return np.zeros((0, world.dim)), np.zeros(0, dtype=np.int64)
    return np.concatenate(xs_all), np.concatenate(ys_all)


def run_seed(config: ExperimentConfig, world: World, gen: GeneratorModel | None, seed: int,
             on_row: Callable[[ResultRow], None] | None = None) -> RunState:
    cfg = config.resolved()
    pool_x, pool_y = world.splits["pool"]
    test_x, test_y = world.splits["test"]
    C = world.n_classes
    pools = Pools(pool_x, lambda x: oracle_label(world, x))
    ccfg = cfg.classifier
    method = cfg.method
    run_id = f"{method}-s{seed}"
    state = RunState(pools, clf.init_classifier(ccfg.arch, world.dim, C, [seed, 0, 0], ccfg.dropout))

    def emit(row):
        state.rows.append(row)
        if on_row is not None:
            on_row(row)

    if cfg.mode == "full":
        t0 = time.perf_counter()
        pre_x, pre_y = world.splits["pretrain"]
        x, y = np.concatenate([pool_x, pre_x]), np.concatenate([pool_y, pre_y])
        model = clf.train(ccfg.arch, x, y, C, [seed, 0, 5], ccfg)
        wall = int((time.perf_counter() - t0) * 1000) if cfg.record_wall_time else 0
        emit(ResultRow(run_id, seed, method, 0, len(x), clf.accuracy(model, test_x, test_y), wall_ms=wall))
        state.model = model
        return state

    if cfg.mode != "al" and gen is None:
        raise ValueError(f"mode {cfg.mode} needs a pre-trained generator")
    if gen is not None and gen.data_dim != world.dim:
        raise ValueError(f"generator data dim {gen.data_dim} != world dim {world.dim}")

    for cycle in range(1, cfg.cycles + 1):
        t0 = time.perf_counter()
        prev = state.model
        if cfg.mode != "gal":
            if cfg.b_al > len(pools.unlabeled):
                raise ValueError(f"cycle {cycle}: B_AL={cfg.b_al} exceeds remaining pool {len(pools.unlabeled)}")
            fn = acq.AcquisitionFn(cfg.sigma_al, passes=cfg.mc_passes)
            labeled = pools.labeled_x() if len(pools.labeled_idx) else None
            picks = acq.select_top(fn, pools.unlabeled_x(), prev, cfg.b_al, [seed, cycle, 1], labeled)
            pools.move_selected(picks, cycle)
        mean_sigma = pseudo_acc = float("nan")
        if cfg.mode != "al":
            n_l = cycle * cfg.b_al if cfg.mode == "gal" else len(pools.labeled_x(cycle if cfg.reset_labeled else None))
            total = b_gal_count(cfg.b_gal, n_l)
            if total > 0:
                gx, gy = generate_for_cycle(cfg, gen, world, prev, pools, cycle, total, seed)
                mean_sigma = _score_generated(cfg, prev, gx, [seed, cycle, 6])
                pseudo_acc = float(np.mean(oracle_label(world, gx) == gy))
        x, y = _training_set(pools, cycle, cfg.mode, cfg.reset_labeled, cfg.retention)
        model = clf.train(ccfg.arch, x, y, C, [seed, cycle, 5], ccfg)
        state.model = model
        acc = clf.accuracy(model, test_x, test_y)
        wall = int((time.perf_counter() - t0) * 1000) if cfg.record_wall_time else 0
        budget = 0 if cfg.mode == "gal" else pools.annotations
        emit(ResultRow(run_id, seed, method, cycle, budget, acc, mean_sigma, pseudo_acc, wall))
        log.info("%s cycle %d budget %d acc %.4f", run_id, cycle, budget, acc)
    return state


def run_experiment(config: ExperimentConfig, world: World, gen: GeneratorModel | None,
                   on_row: Callable[[ResultRow], None] | None = None) -> list[ResultRow]:
    rows: list[ResultRow] = []
    for seed in config.seeds:
        rows.extend(run_seed(config, world, gen, seed, on_row).rows)
    return rows


# ---------------------------------------------------------------- reuse


def reuse_dataset(snapshots: dict[int, Snapshot], new_arch: str, world: World, config: ExperimentConfig,
                  cycles: Iterable[int] | None = None) -> list[ResultRow]:
    """Retrain ``new_arch`` cycle by cycle on saved L and G; nothing is regenerated.

    ``cycles`` restricts retraining to the listed cycles (default: all).
    """
    wanted = None if cycles is None else set(cycles)
    cfg = config.resolved()
    ccfg = replace(cfg.classifier, arch=new_arch)
    test_x, test_y = world.splits["test"]
    method = f"reuse:{new_arch}"
    rows = []
    for seed in sorted(snapshots):
        snap = snapshots[seed]
        if snap.x.shape[1] != world.dim:
            raise ValueError(f"snapshot dimension {snap.x.shape[1]} != world dimension {world.dim}")
        is_pool = np.array([p == "pool" for p in snap.provenance], dtype=bool)
        for cycle in range(1, int(snap.cycle.max(initial=0)) + 1):
            if wanted is not None and cycle not in wanted:
                continue
            lmask = is_pool & ((snap.cycle == cycle) if cfg.reset_labeled else (snap.cycle <= cycle))
            gmask = ~is_pool & ((snap.cycle <= cycle) if cfg.retention == "accumulate" else (snap.cycle == cycle))
            x = np.concatenate([snap.x[lmask], snap.x[gmask]])
            y = np.concatenate([snap.label[lmask], snap.label[gmask]])
            model = clf.train(new_arch, x, y, world.n_classes, [seed, cycle, 5], ccfg)
            gx = snap.x[~is_pool & (snap.cycle == cycle)]
            gy = snap.label[~is_pool & (snap.cycle == cycle)]
            pacc = float(np.mean(oracle_label(world, gx) == gy)) if len(gx) else float("nan")
            budget = int(np.sum(is_pool & (snap.cycle <= cycle)))
            rows.append(ResultRow(f"{method}-s{seed}", seed, method, cycle, budget,
                                  clf.accuracy(model, test_x, test_y), float("nan"), pacc, 0))
    return rows


# ---------------------------------------------------------------- audit


@dataclass
class AuditCell:
    template_id: int
    eps: float
    n: int
    correct: int
    per_class_correct: np.ndarray
    per_class_total: np.ndarray

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else float("nan")


def audit_pseudo_labels(gen: GeneratorModel, world: World, eps_grid: Iterable[float], templates: Iterable[int],
                        n_per_cell: int, seed: int = 0) -> list[AuditCell]:
    """Oracle-judged pseudo-label accuracy for random conditions inside each eps-ball.

    Class draws, ball directions/radii and sampler noise are shared across
    cells (common random numbers), so cells differ only in template and eps.
    """
    C, ds = world.n_classes, gen.cond_dim
    classes = np.empty(n_per_cell, dtype=np.int64)
    dirs = np.empty((n_per_cell, ds))
    for i in range(n_per_cell):
        rng = np.random.default_rng([seed, i])
        classes[i] = rng.integers(C)
        u = rng.standard_normal(ds)
        dirs[i] = u / np.linalg.norm(u) * rng.random() ** (1.0 / ds)
    cells = []
    for tau in templates:
        anchors = gen.table.class_embeddings[classes] + gen.table.template_offsets[tau]
        for eps in eps_grid:
            xs = sample(gen, anchors + eps * dirs, [seed, 1_000_003], n=n_per_cell).x0
            ok = oracle_label(world, xs) == classes
            cells.append(AuditCell(int(tau), float(eps), n_per_cell, int(ok.sum()),
                                   np.bincount(classes[ok], minlength=C), np.bincount(classes, minlength=C)))
    return cells

