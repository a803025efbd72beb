from dataclasses import replace

import numpy as np
import pytest

from galforge import classifier as clf
from galforge.engine import (ROW_FIELDS, ExperimentConfig, ResultRow, audit_pseudo_labels, b_gal_count, class_counts,
                             format_row, parse_rows, reuse_dataset, run_experiment, run_seed)
from galforge.pools import pools_snapshot
from galforge.worldgen import oracle_label

from conftest import FAST_CLF

BASE = ExperimentConfig(cycles=3, b_al=20, seeds=(0,), classifier=FAST_CLF, steps=2, k=2)


def _acc(rows):
    return [(r.cycle, r.annotation_budget, r.test_accuracy) for r in rows]


def test_b_gal_rules():
    assert b_gal_count("equal_L", 40) == 40
    assert b_gal_count("ratio:0.5", 40) == 20
    assert b_gal_count("fixed:7", 40) == 7
    with pytest.raises(ValueError):
        b_gal_count("twice", 4)


def test_round_robin_counts():
    assert class_counts(23, 10) == [3, 3, 3, 2, 2, 2, 2, 2, 2, 2]
    assert max(class_counts(7, 3)) - min(class_counts(7, 3)) <= 1


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(mode="semi")
    with pytest.raises(ValueError):
        ExperimentConfig(retention="forget")
    basic = ExperimentConfig(mode="joint_basic", template_id=2).resolved()
    assert basic.template_id == 0 and basic.epsilon(5) == 0.0
    assert ExperimentConfig().method == "galot"
    assert ExperimentConfig(mode="al", sigma_al="bald").method == "al:bald"


def test_joint_run_shape_and_accounting(small_world, tiny_gen):
    state = run_seed(BASE, small_world, tiny_gen, 0)
    assert [r.cycle for r in state.rows] == [1, 2, 3]
    assert [r.annotation_budget for r in state.rows] == [20, 40, 60]
    assert state.pools.annotations == 60
    # B_GAL = |L| fresh each cycle, accumulated
    assert [sum(g.cycle == c for g in state.pools.generated) for c in (1, 2, 3)] == [20, 40, 60]
    for c in (1, 2, 3):
        labels = [g.label for g in state.pools.generated if g.cycle == c]
        counts = np.bincount(labels, minlength=small_world.n_classes)
        assert counts.max() - counts.min() <= 1
    eps = sorted({g.eps for g in state.pools.generated})
    assert eps == [0.0, 0.25, 0.5]
    assert all(0.0 <= r.pseudo_label_accuracy <= 1.0 for r in state.rows)


def test_gal_mode_is_annotation_free(small_world, tiny_gen):
    state = run_seed(replace(BASE, mode="gal"), small_world, tiny_gen, 0)
    assert state.pools.annotations == 0
    assert all(r.annotation_budget == 0 for r in state.rows)
    assert [sum(g.cycle == c for g in state.pools.generated) for c in (1, 2, 3)] == [20, 40, 60]


def test_degenerate_b_gal_equals_al(small_world, tiny_gen):
    al = run_experiment(replace(BASE, mode="al", seeds=(0, 1)), small_world, None)
    joint = run_experiment(replace(BASE, mode="joint", b_gal="fixed:0", seeds=(0, 1)), small_world, tiny_gen)
    assert _acc(al) == _acc(joint)


def test_random_sigma_zero_eps_is_basic(small_world, tiny_gen):
    a = run_seed(replace(BASE, sigma_gal="random", eps_fixed=0.0, template_id=0), small_world, tiny_gen, 0)
    b = run_seed(replace(BASE, mode="joint_basic"), small_world, tiny_gen, 0)
    assert _acc(a.rows) == _acc(b.rows)
    for g in a.pools.generated:
        assert np.array_equal(g.condition, tiny_gen.table.class_embeddings[g.label])


def test_full_budget_al_is_fully_supervised(small_world):
    n = len(small_world.splits["pool"][0])
    rows = run_experiment(replace(BASE, mode="al", cycles=1, b_al=n), small_world, None)
    x = small_world.splits["pool"][0]
    ref = clf.train(FAST_CLF.arch, x, oracle_label(small_world, x), small_world.n_classes, [0, 1, 5], FAST_CLF)
    assert rows[0].test_accuracy == clf.accuracy(ref, *small_world.splits["test"])
    assert rows[0].annotation_budget == n


def test_budget_exceeding_pool_fails_before_cycle(small_world):
    rows = []
    with pytest.raises(ValueError, match="exceeds"):
        run_seed(replace(BASE, mode="al", cycles=3, b_al=100), small_world, None, 0, on_row=rows.append)
    assert len(rows) == 2


def test_generator_required(small_world):
    with pytest.raises(ValueError):
        run_seed(BASE, small_world, None, 0)


def test_full_mode_single_row(small_world):
    rows = run_experiment(replace(BASE, mode="full"), small_world, None)
    assert len(rows) == 1 and rows[0].cycle == 0
    assert rows[0].annotation_budget == 240 + 600


def test_runs_are_deterministic(small_world, tiny_gen):
    cfg = replace(BASE, seeds=(3,))
    a = [format_row(r) for r in run_experiment(cfg, small_world, tiny_gen)]
    b = [format_row(r) for r in run_experiment(cfg, small_world, tiny_gen)]
    assert a == b


def test_row_round_trip():
    row = ResultRow("x-s0", 0, "galot", 2, 100, 0.1 + 0.2, float("nan"), 1 / 3, 0)
    back = parse_rows(",".join(ROW_FIELDS) + "\n" + format_row(row) + "\n# ABORTED\n")
    assert len(back) == 1
    assert back[0].test_accuracy == row.test_accuracy and np.isnan(back[0].mean_sigma_generated)
    assert back[0].pseudo_label_accuracy == 1 / 3


def test_reuse_same_arch_reproduces_run(small_world, tiny_gen):
    cfg = replace(BASE, seeds=(0, 1))
    snaps, original = {}, []
    for s in cfg.seeds:
        st = run_seed(cfg, small_world, tiny_gen, s)
        snaps[s] = pools_snapshot(st.pools)
        original.extend(st.rows)
    calls = tiny_gen.counter.calls
    rows = reuse_dataset(snaps, FAST_CLF.arch, small_world, cfg)
    assert tiny_gen.counter.calls == calls
    assert [r.test_accuracy for r in rows] == [r.test_accuracy for r in original]
    assert [r.annotation_budget for r in rows] == [r.annotation_budget for r in original]
    assert all(r.method == "reuse:mlp-64x64" for r in rows)


def test_reuse_dimension_mismatch(small_world):
    from galforge.pools import Snapshot

    bad = Snapshot(np.zeros((2, 3)), np.array([0, 1]), ["pool", "generated"], np.array([1, 1]))
    with pytest.raises(ValueError, match="dimension"):
        reuse_dataset({0: bad}, "mlp-8", small_world, BASE)


def test_audit_table(small_world, tiny_gen):
    cells = audit_pseudo_labels(tiny_gen, small_world, [0.0, 0.5], [0, 2], 12, seed=1)
    assert [(c.template_id, c.eps) for c in cells] == [(0, 0.0), (0, 0.5), (2, 0.0), (2, 0.5)]
    for c in cells:
        assert c.n == 12 and 0 <= c.correct <= 12
        assert c.per_class_total.sum() == 12 and c.per_class_correct.sum() == c.correct
        assert c.accuracy == c.correct / 12
