from dataclasses import replace

import numpy as np
import pytest

from sprkit import dataio, groups, pipeline, spr
from sprkit.pipeline import ModelConfig, PipelineConfig, TrainConfig


def small_config(p1_epochs=2, ft_epochs=1, lam=0.5, alpha=0.3, seed=0):
    cfg = PipelineConfig(
        model=ModelConfig(c1=2, c2=3),
        baseline=TrainConfig(phase="baseline", regularizer="none", epochs=2, batch_size=32, lr_milestones=()),
        phase1=TrainConfig(epochs=p1_epochs, batch_size=32, lr_milestones=()),
        finetune=TrainConfig(phase="finetune", epochs=ft_epochs, batch_size=32, lr0=0.005, lr_milestones=()),
        seed=seed,
    )
    return cfg.with_spr(lam, alpha)


def test_derive_seed_is_stable_and_purpose_specific():
    assert pipeline.derive_seed(0, "data") == pipeline.derive_seed(0, "data")
    assert pipeline.derive_seed(0, "data") != pipeline.derive_seed(0, "init")
    assert pipeline.derive_seed(0, "data") != pipeline.derive_seed(1, "data")


def test_milestones_scale_to_short_runs():
    p1, ft = pipeline.desk_milestones(60, 30)
    assert p1 == (24, 40, 46, 50)
    assert ft == (8, 15, 22)
    assert pipeline.scale_milestones((10, 20), 10, 5) == ()


def test_lr_schedule_steps_at_milestones():
    cfg = TrainConfig(lr0=1.0, lr_milestones=(2, 4), lr_factor=0.5)
    assert [cfg.lr_at(e) for e in range(6)] == [1.0, 1.0, 0.5, 0.5, 0.25, 0.25]
    with pytest.raises(ValueError):
        TrainConfig(lr_milestones=(4, 2))
    with pytest.raises(ValueError):
        TrainConfig(lr_factor=1.0)
    with pytest.raises(ValueError):
        TrainConfig(phase="other")


def test_topk_against_recount_oracle(rng):
    scores = rng.standard_normal((50, 6))
    labels = rng.integers(0, 6, 50)
    for k in (1, 2, 6):
        hits = sum(labels[i] in np.argsort(-scores[i], kind="stable")[:k] for i in range(50))
        assert pipeline.topk_accuracy(scores, labels, k) == pytest.approx(100 * hits / 50)
    assert pipeline.topk_accuracy(scores, labels, 6) == 100.0


def test_topk_ties_favour_lower_class_ids():
    scores = np.zeros((2, 3))
    assert pipeline.topk_accuracy(scores, np.array([0, 1]), 1) == 50.0
    assert pipeline.topk_accuracy(scores, np.array([], dtype=int).reshape(0), 1) == 0.0


def test_lambda_zero_phase1_is_bit_equal_to_baseline(tiny_images):
    train, test = tiny_images
    cfg = small_config(lam=0.0)
    a = pipeline.fresh_network(cfg, train)
    b = a.copy()
    part = groups.build_filter_partition(a)
    pipeline.train_phase1(a, part, train, test, cfg.phase1)
    pipeline.train_baseline(b, train, test, replace(cfg.phase1, phase="baseline", regularizer="none"))
    assert a.params.tobytes() == b.params.tobytes()


def test_pipeline_is_reproducible(tiny_images):
    train, test = tiny_images
    cfg = small_config()
    r1 = pipeline.run_pipeline(cfg, train, test)
    r2 = pipeline.run_pipeline(cfg, train, test)
    assert r1.net.params.tobytes() == r2.net.params.tobytes()
    assert r1.phase1.numeric() == r2.phase1.numeric()
    assert r1.phase2.numeric() == r2.phase2.numeric()
    np.testing.assert_array_equal(r1.mask.entity_pruned, r2.mask.entity_pruned)


@pytest.fixture(scope="module")
def images6():
    # matches the 3x6x6 input of the tiny_convnet fixture
    return dataio.train_test("tiny-images", 48, 16, 3, 0.3, seed=1, size=6)


def test_zero_epoch_finetune_leaves_weights_unchanged(tiny_convnet, images6):
    train, test = images6
    net = tiny_convnet
    part = groups.build_filter_partition(net)
    net.weight(0)[0] = 0.0
    _, mask, _ = pipeline.prune_step(net, part)
    before = net.params.copy()
    cfg = TrainConfig(phase="finetune", epochs=0, lam=0.5, alpha=0.3)
    pipeline.train_phase2(net, mask, train, test, cfg, part)
    assert net.params.tobytes() == before.tobytes()


def test_frozen_weights_stay_zero_after_finetune(tiny_convnet, images6):
    train, test = images6
    net = tiny_convnet
    part = groups.build_filter_partition(net)
    net.weight(0)[1] = 1e-6
    net.weight(3)[2] = 0.0
    _, mask, rep = pipeline.prune_step(net, part)
    assert mask.entity_pruned.tolist() == [False, True, False, False, True]
    before = net.params.copy()
    cfg = TrainConfig(phase="finetune", epochs=2, batch_size=16, lam=0.5, alpha=0.3, lr_milestones=())
    pipeline.train_phase2(net, mask, train, test, cfg, part)
    assert np.all(net.params[mask.frozen] == 0.0)
    assert not np.array_equal(net.params[~mask.frozen], before[~mask.frozen])
    assert rep.pruned_params == 27 + 18


def test_finetune_penalty_is_the_fixed_indicator_l2(tiny_convnet, rng):
    net = tiny_convnet
    part = groups.build_filter_partition(net).with_bounds({0: 0.7, 3: 0.9})
    net.weight(3)[1] = 0.0
    mask = groups.decide_pruning(net, part)
    lam, alpha = 0.8, 0.25
    cfg = TrainConfig(phase="finetune", lam=lam, alpha=alpha)
    pen = pipeline._penalty_fn(cfg, part, mask.frozen)(net)
    U = part.total_u
    expect = sum(
        lam * alpha * e.u / U * np.sum(net.params[e.indices] ** 2)
        for e, p in zip(part.entities, mask.entity_pruned)
        if not p
    )
    rest = ~part.prunable_mask & ~mask.frozen
    # non-prunable weights only (biases are not regularized)
    coef = spr.nonprunable_coef(lam, alpha, len(part))
    others = spr.kept_l2_coefficients(part, lam, alpha, mask.frozen)
    assert np.all(others[mask.frozen] == 0)
    expect += float(np.sum(others[rest] * net.params[rest] ** 2))
    assert pen.value == pytest.approx(expect, rel=1e-12)
    assert coef == pytest.approx(lam * alpha / len(part))
    plain = pipeline._penalty_fn(replace(cfg, finetune_l2="plain"), part, mask.frozen)(net)
    assert plain.value == pytest.approx(spr.l2_penalty(net, lam * alpha, ~mask.frozen).value)


def test_phase1_penalty_equals_aggregate_value(tiny_convnet):
    part = groups.build_filter_partition(tiny_convnet).with_bounds({0: 0.7, 3: 0.9})
    cfg = TrainConfig(lam=0.6, alpha=0.4)
    pen = pipeline._penalty_fn(cfg, part, None)(tiny_convnet)
    ref = spr.aggregate_penalty(tiny_convnet, part, spr.SprParams(0.6, 0.4))
    assert pen.value == ref.value
    assert pipeline._penalty_fn(replace(cfg, lam=0.0), part, None) is None


def test_degenerate_pruning_raises_or_warns(tiny_convnet, caplog):
    net = tiny_convnet
    part = groups.build_filter_partition(net)
    net.weight(0)[:] = 0.0
    net.weight(3)[:] = 0.0
    with pytest.raises(pipeline.DegeneratePruningError):
        pipeline.prune_step(net.copy(), part)
    _, mask, _ = pipeline.prune_step(net, part, on_degenerate="warn")
    assert mask.entity_pruned.all() and "degenerate" in caplog.text


def test_finetune_rejects_unapplied_mask(tiny_convnet, images6):
    train, test = images6
    net = tiny_convnet
    part = groups.build_filter_partition(net)
    mask = groups.decide_pruning(net, part)
    mask.frozen[0] = True
    with pytest.raises(ValueError, match="applied"):
        pipeline.train_phase2(net, mask, train, test, TrainConfig(phase="finetune"))


def test_grid_of_one_equals_single_run(tiny_images):
    train, test = tiny_images
    cfg = small_config()
    ref = pipeline.train_reference(cfg, train, test)
    grid = pipeline.grid_search([0.5], [0.3], cfg, train, test, reference=ref)
    single = pipeline.run_pipeline(cfg, train, test, reference=ref)
    (row,) = grid.rows
    assert row["accuracy"] == single.accuracy_final
    assert row["pruned_params"] == single.report.pruned_params
    assert grid.results[(0.5, 0.3)].net.params.tobytes() == single.net.params.tobytes()


def test_grid_rows_are_complete_and_sorted(tiny_images):
    train, test = tiny_images
    cfg = small_config(p1_epochs=2)
    grid = pipeline.grid_search([0.1, 4.0], [0.1, 0.3], cfg, train, test)
    assert len(grid.rows) == 4
    pct = [r["percentage"] for r in grid.rows]
    assert pct == sorted(pct, reverse=True)
    lines = grid.to_csv().splitlines()
    assert lines[0] == ",".join(pipeline.GRID_COLUMNS)
    assert len(lines) == 5
    with pytest.raises(ValueError):
        pipeline.grid_search([], [0.1], cfg, train, test)


def test_benchmark_with_lambda_zero_gives_identical_curves(tiny_images):
    train, _ = tiny_images
    out = pipeline.benchmark(small_config(), train, epochs=1, lam=0.0)
    assert out["loss_spr"] == out["loss_plain"]
    assert out["ratio"] > 0 and out["schema_version"] == pipeline.SCHEMA_VERSION


def test_divergence_carries_the_network(tiny_images):
    train, test = tiny_images
    cfg = small_config()
    net = pipeline.fresh_network(cfg, train)
    net.params[0] = np.nan
    with pytest.raises(pipeline.DivergenceError) as info:
        pipeline.train_baseline(net, train, test, cfg.baseline)
    assert info.value.net is net
