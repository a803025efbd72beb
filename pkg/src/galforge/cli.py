"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import math
import os
import sys
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from . import config as C
from .checkpoint import atomic_write, digest
from .engine import (ROW_FIELDS, ExperimentConfig, ResultRow, audit_pseudo_labels, format_row, parse_rows,
                     reuse_dataset, run_seed)
from .generator import load_generator, pretrain_generator, save_generator
from .pools import pools_snapshot, read_snapshot, write_snapshot
from .worldgen import load_world, make_world, save_world

log = logging.getLogger("galforge")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in getattr(args, "set", None) or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = val.strip()
    flag_keys = {
        "mode": "run.mode", "cycles": "al.cycles", "b_al": "al.b_al", "b_gal": "gal.b_gal", "seeds": "run.seeds",
        "arch": "classifier.arch", "sigma_al": "al.sigma", "sigma_gal": "opt.sigma_gal",
        "epsilon_max": "opt.epsilon_max", "epsilon_fixed": "opt.epsilon_fixed", "template": "gal.template",
    }
    for attr, key in flag_keys.items():
        v = getattr(args, attr, None)
        if v is not None:
            out[key] = str(v)
    return out


def _resolve(args) -> dict:
    return C.resolve(getattr(args, "config", None), _overrides(args))


def _world(args, cfg):
    if getattr(args, "world", None):
        w = load_world(args.world)
        h = hashlib.sha256(Path(args.world, "world.meta").read_bytes())
        for name in ("pretrain", "pool", "test"):
            h.update(Path(args.world, f"{name}.csv").read_bytes())
        return w, h.hexdigest()
    w = make_world(C.world_spec(cfg))
    return w, "in-process:" + hashlib.sha256(repr(C.world_spec(cfg)).encode()).hexdigest()


def _generator(args, cfg, world, needed: bool):
    if getattr(args, "generator_ckpt", None):
        return load_generator(args.generator_ckpt), digest(args.generator_ckpt)
    if not needed:
        return None, "none"
    log.info("no --generator-ckpt given; pre-training in process")
    x, y = world.splits["pretrain"]
    return pretrain_generator(x, y, world.table, C.generator_config(cfg)), "in-process"


def _threads() -> int:
    raw = os.environ.get("GALFORGE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"GALFORGE_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1 if n == 0 else max(1, n)


def _csv_text(rows: list[ResultRow], aborted: bool = False) -> str:
    text = ",".join(ROW_FIELDS) + "\n" + "".join(format_row(r) + "\n" for r in rows)
    return text + ("# ABORTED\n" if aborted else "")


def write_manifest(path, cfg: dict, extra: dict) -> None:
    lines = [f"tool.version = {__version__}\n"]
    lines += [f"{k} = {v}\n" for k, v in sorted(extra.items())]
    lines.append(C.dump(cfg))
    atomic_write(path, "".join(lines))


def _seed_job(payload):
    exp, world, gen, seed = payload
    state = run_seed(exp, world, gen, seed)
    return state.rows, pools_snapshot(state.pools)


def execute_runs(exp: ExperimentConfig, world, gen, out: Path, snapshots: Path | None) -> None:
    """Run every seed, in parallel when GALFORGE_THREADS allows; flush partial results on failure.

    Rows are always written in seed-major order regardless of completion order.
    """
    rows: list[ResultRow] = []
    threads = min(_threads(), len(exp.seeds))
    try:
        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as ex:
                futures = [ex.submit(_seed_job, (exp, world, gen, s)) for s in exp.seeds]
                for seed, fut in zip(exp.seeds, futures):
                    seed_rows, snap = fut.result()
                    rows.extend(seed_rows)
                    if snapshots is not None:
                        write_snapshot(snapshots / f"seed{seed}.csv", snap)
        else:
            for seed in exp.seeds:
                state = run_seed(exp, world, gen, seed, on_row=rows.append)
                if snapshots is not None:
                    write_snapshot(snapshots / f"seed{seed}.csv", pools_snapshot(state.pools))
    except BaseException:
        atomic_write(out, _csv_text(rows, aborted=True))
        raise
    atomic_write(out, _csv_text(rows))


# ---------------------------------------------------------------- subcommands


def cmd_world_make(args) -> None:
    cfg = _resolve(args)
    world = make_world(C.world_spec(cfg))
    save_world(world, args.out)
    print(f"world written to {args.out} (Bayes accuracy on test split {world.bayes_accuracy:.4f})")


def cmd_generator_pretrain(args) -> None:
    cfg = _resolve(args)
    world, _ = _world(args, cfg)
    x, y = world.splits["pretrain"]
    model = pretrain_generator(x, y, world.table, C.generator_config(cfg))
    save_generator(model, args.out)
    print(f"generator written to {args.out} (held-out denoising MSE {model.heldout_mse:.4f})")


def _prepare_run(args, cfg, manifest_path: Path, extra: dict | None = None):
    exp = C.experiment_config(cfg)
    world, world_digest = _world(args, cfg)
    gen, gen_digest = _generator(args, cfg, world, needed=exp.mode not in ("al", "full"))
    meta = {"world.digest": world_digest, "generator.digest": gen_digest,
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "argv": " ".join(sys.argv[1:])}
    meta.update(extra or {})
    write_manifest(manifest_path, cfg, meta)
    return exp, world, gen


def cmd_run(args) -> None:
    cfg = _resolve(args)
    out = Path(args.out)
    exp, world, gen = _prepare_run(args, cfg, Path(args.manifest or f"{out}.manifest"))
    snaps = Path(args.snapshots) if args.snapshots else None
    execute_runs(exp, world, gen, out, snaps)
    print(f"results written to {out}")


def cmd_ablate(args) -> None:
    if args.key not in C.KEYS:
        raise UsageError(f"unknown config key {args.key!r}")
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise UsageError("--values needs at least one value")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = _resolve(args)
    world = gen = None
    for v in values:
        cfg = dict(base)
        cfg[args.key] = C._convert(args.key, v)
        out = out_dir / f"{args.key}={v}.csv"
        exp = C.experiment_config(cfg)
        if world is None:
            exp, world, gen = _prepare_run(args, cfg, Path(f"{out}.manifest"))
        else:
            write_manifest(f"{out}.manifest", cfg, {"ablate.key": args.key, "ablate.value": v})
        execute_runs(exp, world, gen, out, None)
        print(f"{args.key}={v}: {out}")


def cmd_audit(args) -> None:
    cfg = _resolve(args)
    world, _ = _world(args, cfg)
    gen, _ = _generator(args, cfg, world, needed=True)
    eps = [float(e) for e in args.eps.split(",")]
    templates = [int(t) for t in args.templates.split(",")]
    seeds = C.parse_seeds(args.audit_seeds)
    lines = ["seed,template,eps,n,correct,accuracy," + ",".join(f"class{c}" for c in range(world.n_classes))]
    for s in seeds:
        for cell in audit_pseudo_labels(gen, world, eps, templates, args.n, s):
            per = [f"{a}/{b}" for a, b in zip(cell.per_class_correct, cell.per_class_total)]
            lines.append(f"{s},{cell.template_id},{cell.eps!r},{cell.n},{cell.correct},{cell.accuracy!r}," + ",".join(per))
    atomic_write(args.out, "\n".join(lines) + "\n")
    print(f"audit written to {args.out}")


def cmd_reuse(args) -> None:
    cfg = _resolve(args)
    out = Path(args.out)
    exp, world, _ = _prepare_run(args, {**cfg, "run.mode": "al"}, Path(f"{out}.manifest"))
    exp = C.experiment_config(cfg)
    snaps = {}
    for path in sorted(Path(args.snapshots).glob("seed*.csv")):
        snaps[int(path.stem[4:])] = read_snapshot(path)
    if not snaps:
        raise UsageError(f"no seed*.csv snapshots in {args.snapshots}")
    rows = reuse_dataset(snaps, args.new_arch, world, exp)
    atomic_write(out, _csv_text(rows))
    print(f"results written to {out}")


def build_report(rows: list[ResultRow]) -> str:
    """Accuracy-vs-budget matrix: mean over seeds per (method, cycle), plus averages and improvement."""
    acc = defaultdict(lambda: defaultdict(list))
    budget_of: dict[int, int] = {}
    ceiling = {}
    for r in rows:
        if r.cycle == 0:
            ceiling.setdefault(r.method, []).append(r.test_accuracy)
            continue
        acc[r.method][r.cycle].append(r.test_accuracy)
        if r.annotation_budget:
            budget_of.setdefault(r.cycle, r.annotation_budget)
    cycles = sorted({c for m in acc.values() for c in m})
    header = ["method"] + [str(budget_of.get(c, f"cycle{c}")) for c in cycles] + ["average"]
    lines = [",".join(header)]
    means = {}
    for method in sorted(acc):
        vals = [sum(acc[method][c]) / len(acc[method][c]) if acc[method][c] else float("nan") for c in cycles]
        means[method] = vals
        finite = [v for v in vals if not math.isnan(v)]
        avg = sum(finite) / len(finite) if finite else float("nan")
        lines.append(",".join([method] + [repr(v) for v in vals] + [repr(avg)]))
    baselines = [m for m in means if m.startswith("al:")]
    if "galot" in means and baselines:
        imp = [means["galot"][i] - max(means[b][i] for b in baselines) for i in range(len(cycles))]
        lines.append(",".join(["improvement"] + [repr(v) for v in imp] + [repr(sum(imp) / len(imp))]))
    for method, vals in sorted(ceiling.items()):
        lines.append(f"# ceiling {method} = {sum(vals) / len(vals)!r}")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> None:
    rows = []
    for path in args.csv:
        rows.extend(parse_rows(Path(path).read_text()))
    text = build_report(rows)
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- parser


def _common(p, world=True, gen=False):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    if world:
        p.add_argument("--world", help="world directory from `world make` (default: build in process)")
    if gen:
        p.add_argument("--generator-ckpt", help="GLT1 generator checkpoint (default: pre-train in process)")


def _run_flags(p):
    p.add_argument("--mode", choices=["al", "gal", "joint", "full", "joint_basic"])
    p.add_argument("--cycles", type=int)
    p.add_argument("--b-al", type=int)
    p.add_argument("--b-gal")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--arch")
    p.add_argument("--sigma-al")
    p.add_argument("--sigma-gal")
    p.add_argument("--epsilon-max", type=float)
    p.add_argument("--epsilon-fixed")
    p.add_argument("--template", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="galforge", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    world = sub.add_parser("world", help="synthetic world construction")
    wsub = world.add_subparsers(dest="action", required=True)
    p = wsub.add_parser("make")
    _common(p, world=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_world_make)

    gen = sub.add_parser("generator", help="generator pre-training")
    gsub = gen.add_subparsers(dest="action", required=True)
    p = gsub.add_parser("pretrain")
    _common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generator_pretrain)

    p = sub.add_parser("run", help="run active-learning cycles")
    _common(p, gen=True)
    _run_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.add_argument("--snapshots", help="directory for per-seed L/G snapshot files")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="sweep one config key")
    _common(p, gen=True)
    _run_flags(p)
    p.add_argument("key")
    p.add_argument("--values", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("audit", help="pseudo-label fidelity audit")
    _common(p, gen=True)
    p.add_argument("--eps", default="0,0.25,0.5,1.0")
    p.add_argument("--templates", default="0,1,2")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--audit-seeds", default="0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("reuse", help="retrain another architecture on saved snapshots")
    _common(p)
    p.add_argument("--snapshots", required=True)
    p.add_argument("--new-arch", "--arch", dest="new_arch", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reuse)

    p = sub.add_parser("report", help="merge result CSVs into an accuracy-vs-budget matrix")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except (UsageError, C.ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"galforge: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"galforge: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
