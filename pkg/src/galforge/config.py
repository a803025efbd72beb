"""Dotted-key configuration: defaults < config file < command line.

Config files are line-oriented ``key = value`` text; ``#`` starts a comment.
"""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from .classifier import ClassifierConfig
from .engine import ExperimentConfig
from .generator import GeneratorConfig
from .worldgen import WorldSpec

_w, _g, _c, _e = WorldSpec(), GeneratorConfig(), ClassifierConfig(), ExperimentConfig()

# key -> (type, default, doc)
KEYS: dict[str, tuple[type, object, str]] = {
    "world.preset": (str, "default", "stock world: default | hard100"),
    "world.classes": (int, _w.classes, "class count C"),
    "world.dim": (int, _w.dim, "data dimension d"),
    "world.layout": (str, _w.layout, "ring | grid"),
    "world.class_std": (float, _w.class_std, "per-class isotropic std"),
    "world.overlap": (float, _w.overlap, "ring radius / grid spacing"),
    "world.pretrain_n": (int, _w.pretrain_n, "generator pre-training split size"),
    "world.pool_n": (int, _w.pool_n, "unlabeled pool size"),
    "world.test_n": (int, _w.test_n, "test split size"),
    "world.cond_dim": (int, _w.cond_dim, "condition dimension d_s"),
    "world.seed": (int, _w.seed, "world seed"),
    "generator.T": (int, _g.T, "diffusion steps"),
    "generator.epochs": (int, _g.epochs, "pre-training epochs"),
    "generator.batch": (int, _g.batch, "pre-training batch size"),
    "generator.lr": (float, _g.lr, "peak Adam learning rate"),
    "generator.cond_jitter": (float, _g.cond_jitter, "condition noise std during pre-training"),
    "generator.variance": (str, _g.variance, "sampler variance: posterior | beta"),
    "generator.seed": (int, _g.seed, "initialization / shuffling seed"),
    "classifier.arch": (str, _c.arch, "architecture id, e.g. mlp-64x64"),
    "classifier.epochs": (int, _c.epochs, "passes over the training set per cycle"),
    "classifier.epochs_multiplier": (int, _c.epochs_multiplier, "training-scale multiplier"),
    "classifier.batch": (int, _c.batch, "minibatch size"),
    "classifier.lr": (float, _c.lr, "Adam learning rate"),
    "classifier.dropout": (float, _c.dropout, "dropout rate"),
    "run.mode": (str, _e.mode, "al | gal | joint | full | joint_basic"),
    "run.seeds": (str, "0", "comma-separated replicate seeds"),
    "run.record_wall_time": (bool, _e.record_wall_time, "write wall_ms (breaks byte-identical reruns)"),
    "al.cycles": (int, _e.cycles, "number of cycles N"),
    "al.b_al": (int, _e.b_al, "pool samples labeled per cycle"),
    "al.sigma": (str, _e.sigma_al, "pool acquisition"),
    "al.reset_labeled": (bool, _e.reset_labeled, "re-initialize L every cycle"),
    "al.mc_passes": (int, _e.mc_passes, "MC-dropout passes for var_ratio/mean_std/bald"),
    "gal.b_gal": (str, _e.b_gal, "equal_L | ratio:<r> | fixed:<m>"),
    "gal.gen_multiplier": (int, _e.gen_multiplier, "generate m*B_GAL then subsample"),
    "gal.retention": (str, _e.retention, "accumulate | replace"),
    "gal.template": (int, _e.template_id, "template id"),
    "opt.epsilon_max": (float, _e.eps_max, "final eps of the linear schedule"),
    "opt.epsilon_fixed": (str, "none", "constant eps for every cycle, or none"),
    "opt.alpha_ratio": (float, _e.alpha_ratio, "step size alpha = eps * ratio"),
    "opt.steps": (int, _e.steps, "update steps n"),
    "opt.k": (int, _e.k, "samples per gradient estimate"),
    "opt.sigma_gal": (str, _e.sigma_gal, "acquisition maximized over conditions"),
    "opt.prop1_factor": (bool, _e.prop1_factor, "scale the last-step gradient by T"),
}


class ConfigError(ValueError):
    pass


def _convert(key: str, raw: str):
    typ = KEYS[key][0]
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_text(text: str) -> dict[str, object]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {n}: expected 'key = value'")
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _convert(key, val)
    return out


def resolve(file: str | Path | None = None, overrides: dict[str, str] | None = None) -> dict[str, object]:
    cfg = {k: v[1] for k, v in KEYS.items()}
    if file is not None:
        cfg.update(parse_text(Path(file).read_text()))
    for k, v in (overrides or {}).items():
        if k not in KEYS:
            raise ConfigError(f"unknown config key {k!r}")
        cfg[k] = _convert(k, str(v))
    return cfg


def dump(cfg: dict[str, object]) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def world_spec(cfg) -> WorldSpec:
    base = WorldSpec.preset(cfg["world.preset"])
    over = {}
    for key in ("classes", "dim", "layout", "class_std", "overlap", "pretrain_n", "pool_n", "test_n", "cond_dim", "seed"):
        v = cfg[f"world.{key}"]
        if v != KEYS[f"world.{key}"][1]:
            over[key] = v
    return replace(base, **over)


def generator_config(cfg) -> GeneratorConfig:
    return GeneratorConfig(T=cfg["generator.T"], epochs=cfg["generator.epochs"], batch=cfg["generator.batch"],
                           lr=cfg["generator.lr"], cond_jitter=cfg["generator.cond_jitter"],
                           variance=cfg["generator.variance"], seed=cfg["generator.seed"])


def classifier_config(cfg) -> ClassifierConfig:
    return ClassifierConfig(arch=cfg["classifier.arch"], epochs=cfg["classifier.epochs"],
                            epochs_multiplier=cfg["classifier.epochs_multiplier"], batch=cfg["classifier.batch"],
                            lr=cfg["classifier.lr"], dropout=cfg["classifier.dropout"])


def parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in str(text).split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None
    if not seeds:
        raise ConfigError("empty seed list")
    return seeds


def experiment_config(cfg) -> ExperimentConfig:
    fixed = cfg["opt.epsilon_fixed"]
    eps_fixed = None if str(fixed).lower() == "none" else float(fixed)
    try:
        return ExperimentConfig(
            mode=cfg["run.mode"], cycles=cfg["al.cycles"], b_al=cfg["al.b_al"], b_gal=cfg["gal.b_gal"],
            sigma_al=cfg["al.sigma"], sigma_gal=cfg["opt.sigma_gal"], mc_passes=cfg["al.mc_passes"],
            gen_multiplier=cfg["gal.gen_multiplier"], retention=cfg["gal.retention"],
            reset_labeled=cfg["al.reset_labeled"], template_id=cfg["gal.template"], eps_max=cfg["opt.epsilon_max"],
            eps_fixed=eps_fixed, alpha_ratio=cfg["opt.alpha_ratio"], steps=cfg["opt.steps"], k=cfg["opt.k"],
            prop1_factor=cfg["opt.prop1_factor"], classifier=classifier_config(cfg),
            seeds=parse_seeds(cfg["run.seeds"]), record_wall_time=cfg["run.record_wall_time"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
