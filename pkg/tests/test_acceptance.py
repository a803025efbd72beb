"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in the pytest terminal summary.
Run directly with ``python tests/test_acceptance.py`` for the lines alone.
"""
import math
import subprocess
import sys
import time
from dataclasses import replace
from math import comb

import numpy as np
import pytest
from scipy import stats

from galforge import acquisition as acq
from galforge import classifier as clf
from galforge import generator as G
from galforge import mlp
from galforge import autodiff as ad
from galforge.embedding import predefined_condition, project_to_ball
from galforge.engine import ExperimentConfig, audit_pseudo_labels, reuse_dataset, run_experiment, run_seed
from galforge.pools import pools_snapshot
from galforge.textopt import OptimizerConfig, estimate_grad, text_opt
from galforge.worldgen import WorldSpec, make_world, save_world

from conftest import ACCEPTANCE_LINES, FAST_CLF
from oracles import brute_force_top, max_rel_err, primitive_cases

SEEDS5 = (0, 1, 2, 3, 4)


def report(n: int, ok: bool, detail: str) -> bool:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def _clock():
    t0 = time.perf_counter()
    return lambda: time.perf_counter() - t0


# ---------------------------------------------------------------- 1


def test_criterion_01_autodiff_finite_differences():
    elapsed = _clock()
    worst = {}
    for seed in range(3):
        for name, build, inputs in primitive_cases(np.random.default_rng(seed)):
            worst[name] = max(worst.get(name, 0.0), max_rel_err(build, inputs))
    model = clf.init_classifier("mlp-16x16", 2, 10, [1], dropout=0.0)
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal((8, 2)), rng.integers(0, 10, 8)
    names = sorted(model.params)

    def build(*ts):
        out, _ = mlp.forward(dict(zip(names, ts)), ad.Tensor(x))
        return ad.cross_entropy(out, y)

    worst["classifier 2-16-16-10"] = max_rel_err(build, [model.params[k].data for k in names])
    err, secs = max(worst.values()), elapsed()
    ok = report(1, err < 1e-4 and secs < 10,
                f"{len(worst) - 1} primitives + classifier, max rel err {err:.2e} (< 1e-4), {secs:.1f}s (< 10s)")
    assert ok


# ---------------------------------------------------------------- 2


def test_criterion_02_forward_moments():
    elapsed = _clock()
    sched = G.NoiseSchedule.linear(50)
    x0 = np.array([0.7, -1.3])
    n = 10_000
    worst = 0.0
    for t in (1, 25, 50):
        noise = np.random.default_rng(t).standard_normal((n, 2))
        xt = G.forward_diffuse(sched, np.tile(x0, (n, 1)), t, noise)
        ab = sched.alpha_bar[t]
        mean, var = math.sqrt(ab) * x0, 1.0 - ab
        se_mean = math.sqrt(var / n)
        se_var = var * math.sqrt(2.0 / (n - 1))
        z_mean = np.abs(xt.mean(axis=0) - mean) / se_mean
        z_var = np.abs(xt.var(axis=0, ddof=1) - var) / se_var
        worst = max(worst, z_mean.max(), z_var.max())
    secs = elapsed()
    ok = report(2, worst <= 3 and secs < 5, f"worst deviation {worst:.2f} SE (<= 3) at t in {{1,25,50}}, {secs:.2f}s")
    assert ok


# ---------------------------------------------------------------- 3


def test_criterion_03_prop1_direction():
    elapsed = _clock()
    world = make_world(WorldSpec(pretrain_n=5000))
    x, y = world.splits["pretrain"]
    gen = G.pretrain_generator(x, y, world.table,
                               G.GeneratorConfig(T=3, beta_start=0.2, beta_end=0.9, hidden=(64, 64), epochs=15))
    px, py = world.splits["pool"]
    model = clf.train("mlp-64x64", px[:100], py[:100], world.n_classes, [0])
    rng = np.random.default_rng(0)
    positive = 0
    for trial in range(100):
        s = predefined_condition(world.table, trial % 10, 0).vector + 0.2 * rng.standard_normal(world.spec.cond_dim)
        est = estimate_grad(s, gen, model, "entropy", 6, [trial])
        full = estimate_grad(s, gen, model, "entropy", 6, [trial], prop1_factor=False, taped_steps=gen.T)
        cos = est @ full / (np.linalg.norm(est) * np.linalg.norm(full))
        positive += bool(cos > 0)
    secs = elapsed()
    ok = report(3, positive >= 80 and secs < 60, f"{positive}/100 trials with positive cosine (>= 80), {secs:.1f}s (< 60s)")
    assert ok


# ---------------------------------------------------------------- 4


def test_criterion_04_projection_fuzz():
    rng = np.random.default_rng(4)
    bad_dist = bad_idem = 0
    for _ in range(10_000):
        d = int(rng.integers(1, 17))
        anchor = rng.standard_normal(d) * 10.0 ** rng.uniform(-3, 3)
        s = anchor + rng.standard_normal(d) * 10.0 ** rng.uniform(-6, 4)
        eps = 0.0 if rng.random() < 0.05 else 10.0 ** rng.uniform(-6, 3)
        p = project_to_ball(s, anchor, eps)
        bad_dist += np.linalg.norm(p - anchor) > eps + 1e-9
        bad_idem += not np.array_equal(project_to_ball(p, anchor, eps), p)
    ok = report(4, bad_dist == 0 and bad_idem == 0,
                f"10000 triples: {bad_dist} outside eps + 1e-9, {bad_idem} non-idempotent (both must be 0)")
    assert ok


# ---------------------------------------------------------------- 5


def _budgets(n, limit=3000):
    return [b for b in range(1, n) if comb(n, min(b, n - b)) <= limit]


def test_criterion_05_selection_oracle():
    mismatches = {}
    for k, kind in enumerate(("entropy", "margin", "least_confidence", "var_ratio")):
        bad = 0
        for case in range(200):
            rng = np.random.default_rng([5, k, case])
            n = int(rng.integers(2, 33))
            C = int(rng.integers(2, 6))
            model = clf.init_classifier("mlp-8", 2, C, [k, case], dropout=0.3)
            base = rng.standard_normal((max(1, n // 2), 2))
            xs = base[rng.integers(0, len(base), n)]  # duplicates force tied scores
            B = int(rng.choice(_budgets(n)))
            got = set(acq.select_top(kind, xs, model, B, seed=case).tolist())
            want = brute_force_top(acq.model_scores(kind, model, xs, case), B)
            bad += got != want
        mismatches[kind] = bad
    ok = report(5, not any(mismatches.values()), f"mismatches per kind over 200 cases: {mismatches}")
    assert ok


# ---------------------------------------------------------------- 6


def test_criterion_06_acquisition_analytic():
    errs = {C: abs(acq.score("entropy", np.full(C, 1.0 / C)) - math.log(C)) for C in (2, 10, 100)}
    one_hot = np.array([0.0, 1.0, 0.0])
    checks = {
        "entropy(one-hot)=0": acq.score("entropy", one_hot) == 0.0,
        "margin(one-hot)=-1": acq.score("margin", one_hot) == -1.0,
        "lc(one-hot)=0": acq.score("least_confidence", one_hot) == 0.0,
        "var_ratio(one-hot stack)=0": acq.score("var_ratio", np.tile(one_hot, (5, 1))) == 0.0,
        "bald(identical passes)=0": abs(acq.score("bald", np.tile([0.2, 0.5, 0.3], (6, 1)))) < 1e-15,
        "margin([.5,.3,.2])=-0.2": abs(acq.score("margin", [0.5, 0.3, 0.2]) + 0.2) < 1e-15,
    }
    ok = report(6, max(errs.values()) < 1e-12 and all(checks.values()),
                f"|H(uniform)-ln C| max {max(errs.values()):.1e} (< 1e-12); one-hot cases "
                f"{sum(checks.values())}/{len(checks)} exact")
    assert ok


# ---------------------------------------------------------------- 7


def test_criterion_07_optimizer_effectiveness(default_world, pretrained_gen):
    elapsed = _clock()
    px, py = default_world.splits["pool"]
    model = clf.train("mlp-64x64", px[:100], py[:100], default_world.n_classes, [0])
    cfg = OptimizerConfig(eps=0.5, sigma="entropy")
    anchors, optimized = [], []
    for seed in range(30):
        a, b = [], []
        for c in range(default_world.n_classes):
            s0 = predefined_condition(pretrained_gen.table, c, 0)
            s1 = text_opt(s0, cfg, pretrained_gen, model, [seed, c])
            noise_seed = [10_000 + seed, c]  # common noise for the pair
            a.append(acq.model_scores("entropy", model, G.generate(pretrained_gen, s0, 20, noise_seed)).mean())
            b.append(acq.model_scores("entropy", model, G.generate(pretrained_gen, s1, 20, noise_seed)).mean())
        anchors.append(np.mean(a))
        optimized.append(np.mean(b))
    p = stats.ttest_rel(optimized, anchors, alternative="greater").pvalue
    secs = elapsed()
    ok = report(7, p < 0.05 and secs < 300,
                f"mean entropy optimized {np.mean(optimized):.4f} vs anchor {np.mean(anchors):.4f}, "
                f"30 paired seeds, one-sided p={p:.2e} (< 0.05), {secs:.0f}s (< 300s)")
    assert ok


# ---------------------------------------------------------------- 8


def test_criterion_08_pseudo_label_fidelity(default_world, pretrained_gen):
    elapsed = _clock()
    grid = (0.0, 0.25, 0.5, 1.0)
    acc = np.array([[c.accuracy for c in audit_pseudo_labels(pretrained_gen, default_world, grid, [0], 400, seed)]
                    for seed in SEEDS5])
    mean = acc.mean(axis=0)
    monotone = bool(np.all(np.diff(mean) <= 0))
    secs = elapsed()
    ok = report(8, mean[0] >= 0.95 and monotone and secs < 180,
                f"mean accuracy over 5 seeds at eps {list(grid)}: {np.round(mean, 4).tolist()} "
                f"(eps=0 >= 0.95, non-increasing: {monotone}), {secs:.0f}s (< 180s)")
    assert ok


# ---------------------------------------------------------------- 9 and 11 share the runs


@pytest.fixture(scope="module")
def table_runs(default_world, pretrained_gen):
    elapsed = _clock()
    base = ExperimentConfig(cycles=10, b_al=50, b_gal="equal_L", seeds=SEEDS5)
    al = run_experiment(replace(base, mode="al", sigma_al="margin"), default_world, None)
    joint, snaps = [], {}
    for seed in SEEDS5:
        state = run_seed(replace(base, mode="joint"), default_world, pretrained_gen, seed)
        joint.extend(state.rows)
        snaps[seed] = pools_snapshot(state.pools)
    return base, al, joint, snaps, elapsed()


def _curve(rows):
    budgets = sorted({r.annotation_budget for r in rows})
    return budgets, np.array([np.mean([r.test_accuracy for r in rows if r.annotation_budget == b]) for b in budgets])


def test_criterion_09_end_to_end(table_runs):
    _, al, joint, _, secs = table_runs
    budgets, a = _curve(al)
    budgets_j, j = _curve(joint)
    assert budgets == budgets_j
    diff = j - a
    never_worse = bool(np.all(diff >= 0))
    early = bool(np.all(diff[:2] >= 0.01))
    worst = int(np.argmin(diff))
    ok = report(9, never_worse and early and secs < 900,
                f"joint minus margin-AL per budget {budgets}: {np.round(diff, 4).tolist()}; "
                f"smallest two >= 0.01: {early}; all >= 0: {never_worse} "
                f"(worst {diff[worst]:+.4f} at budget {budgets[worst]}); {secs:.0f}s (< 900s)")
    assert ok


# ---------------------------------------------------------------- 10


def test_criterion_10_zero_annotation(default_world, pretrained_gen):
    elapsed = _clock()
    cfg = ExperimentConfig(mode="gal", cycles=10, b_al=50, seeds=SEEDS5)
    rows = run_experiment(cfg, default_world, pretrained_gen)
    final = [r.test_accuracy for r in rows if r.cycle == cfg.cycles]
    budgets = {r.annotation_budget for r in rows}
    secs = elapsed()
    ok = report(10, np.mean(final) > 0.3 and budgets == {0} and secs < 300,
                f"gal final accuracy mean {np.mean(final):.4f} over 5 seeds (> 0.3), annotations {sorted(budgets)}, "
                f"{secs:.0f}s (< 300s)")
    assert ok


# ---------------------------------------------------------------- 11


def test_criterion_11_reuse(default_world, table_runs):
    base, _, _, snaps, _ = table_runs
    arch = "mlp-128x128x128"
    final = base.cycles
    reused = reuse_dataset(snaps, arch, default_world, base, cycles=[final])
    pool_only = {s: snap.select(np.array([p == "pool" for p in snap.provenance])) for s, snap in snaps.items()}
    baseline = reuse_dataset(pool_only, arch, default_world, base, cycles=[final])
    r = np.mean([row.test_accuracy for row in reused])
    b = np.mean([row.test_accuracy for row in baseline])
    ok = report(11, r >= b, f"{arch} at budget {reused[0].annotation_budget}: L+G {r:.4f} vs pool-only {b:.4f} "
                            f"(mean over 5 seeds, must be >=)")
    assert ok


# ---------------------------------------------------------------- 12


def test_criterion_12_determinism(tmp_path, small_world, tiny_gen):
    save_world(small_world, tmp_path / "world")
    G.save_generator(tiny_gen, tmp_path / "gen.glt")
    outs = []
    for name in ("a.csv", "b.csv"):
        argv = [sys.executable, "-m", "galforge", "run", "--world", str(tmp_path / "world"),
                "--generator-ckpt", str(tmp_path / "gen.glt"), "--mode", "joint", "--cycles", "2", "--b-al", "15",
                "--seeds", "0,1", "--set", "classifier.epochs=10", "--out", str(tmp_path / name)]
        proc = subprocess.run(argv, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outs.append((tmp_path / name).read_bytes())
    same = outs[0] == outs[1]
    ok = report(12, same and len(outs[0]) > 0, f"two separate `run` processes, {len(outs[0])} bytes each, "
                                               f"byte-identical: {same}")
    assert ok


# ---------------------------------------------------------------- 13


def test_criterion_13_degeneracy_lattice(small_world, tiny_gen):
    base = ExperimentConfig(cycles=3, b_al=20, seeds=(0, 1), classifier=FAST_CLF, steps=3, k=2)
    al = run_experiment(replace(base, mode="al"), small_world, None)
    joint = run_experiment(replace(base, mode="joint", b_gal="fixed:0"), small_world, tiny_gen)
    same_rows = [(r.seed, r.cycle, r.annotation_budget, r.test_accuracy) for r in al] == \
                [(r.seed, r.cycle, r.annotation_budget, r.test_accuracy) for r in joint]

    px, py = small_world.splits["pool"]
    model = clf.train("mlp-16x16", px[:60], py[:60], small_world.n_classes, [0], FAST_CLF)
    s = predefined_condition(tiny_gen.table, 2, 1)
    calls = tiny_gen.counter.calls
    out = text_opt(s, OptimizerConfig(eps=0.0), tiny_gen, model, [0])
    zero_eps = out is s and np.array_equal(out.vector, s.anchor) and tiny_gen.counter.calls == calls

    scaled = text_opt(s, OptimizerConfig(eps=0.4, steps=4, k=2), tiny_gen, model, [9])
    raw = text_opt(s, OptimizerConfig(eps=0.4, steps=4, k=2, prop1_factor=False), tiny_gen, model, [9])
    sign_invariant = np.array_equal(scaled.vector, raw.vector)
    ok = report(13, same_rows and zero_eps and sign_invariant,
                f"joint(B_GAL=0)==al: {same_rows}; eps=0 returns s* with 0 generator calls: {zero_eps}; "
                f"factor-T no-op: {sign_invariant}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
