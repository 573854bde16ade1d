import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from crnnkit import network, synth, trainer
from crnnkit.augment import AugmentConfig
from crnnkit.charset import build_charset
from crnnkit.dataset import from_arrays
from crnnkit.trainer import AdamState, OverfitPlan, TrainConfig, TrainError

TINY_AUG = AugmentConfig(target_h=16, target_w=64)


def tiny_net(charset, **kw):
    cfg = network.NetConfig(vocab=charset.num_classes, input_h=16, input_w=64,
                            stages=((4, 3, 2, 2), (8, 3, 2, 1)), hidden=4, layers=1, **kw)
    return network.build(cfg)


@pytest.fixture(scope="module")
def ladder_corpus():
    pairs = synth.make_examples(100, vocab=40, seed=1)
    charset = build_charset([lab for _, lab in pairs])
    return charset, from_arrays(pairs, charset)


# -- schedule -----------------------------------------------------------------


def test_lr_examples():
    cfg = TrainConfig()
    assert lr_eq(trainer.lr_at(cfg, 0), 2e-3)
    assert lr_eq(trainer.lr_at(cfg, 25), 1e-3)
    assert lr_eq(trainer.lr_at(cfg, 50), 2e-3)
    assert trainer.lr_at(cfg, 49.999) < 1e-8


def lr_eq(a, b):
    return a == pytest.approx(b, rel=1e-12)


@given(st.integers(0, 40), st.floats(0, 0.999), st.integers(1, 100))
def test_lr_periodic_and_bounded(cycle, frac, period):
    cfg = TrainConfig(restart_period=period, epochs=2000)
    epoch = cycle * period + frac * period
    lr = trainer.lr_at(cfg, epoch)
    assert 0.0 <= lr <= cfg.initial_lr
    assert trainer.lr_at(cfg, epoch + period) == pytest.approx(lr, rel=1e-9, abs=1e-15)
    assert trainer.lr_at(cfg, cycle * period) == cfg.initial_lr
    assert lr <= trainer.lr_at(cfg, cycle * period)


def test_lr_rejects_negative_epoch():
    with pytest.raises(TrainError):
        trainer.lr_at(TrainConfig(), -1)


@pytest.mark.parametrize("bad", [dict(initial_lr=0), dict(restart_period=3000), dict(batch_size=0)])
def test_config_validation(bad):
    with pytest.raises(TrainError):
        TrainConfig(**bad)


# -- Adam -----------------------------------------------------------------------------


def test_adam_first_step():
    p = {"head.w": np.array([1.0])}
    trainer.adam_step(p, {"head.w": np.array([1.0])}, AdamState(), lr=0.1)
    # m_hat = 1, v_hat = 1 after bias correction
    assert p["head.w"][0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-12)


def test_adam_zero_gradient_is_identity():
    p = {"stage0.w": np.ones((2, 2)), "head.b": np.full(3, 2.0)}
    before = {k: v.copy() for k, v in p.items()}
    state = AdamState()
    for _ in range(3):
        trainer.adam_step(p, {k: np.zeros_like(v) for k, v in p.items()}, state, lr=0.1)
    assert all(np.array_equal(p[k], before[k]) for k in p)
    assert all(not m.any() for m in state.m.values()) and all(not v.any() for v in state.v.values())


def test_weight_decay_only_touches_head():
    p = {"stage0.w": np.ones(3), "neck0.fw.wx": np.ones(3), "head.w": np.ones(3)}
    zero = {k: np.zeros(3) for k in p}
    trainer.adam_step(p, zero, AdamState(), lr=0.5, weight_decay={"head": 0.1})
    assert np.array_equal(p["stage0.w"], np.ones(3)) and np.array_equal(p["neck0.fw.wx"], np.ones(3))
    np.testing.assert_allclose(p["head.w"], 0.95)


def test_adam_rejects_nan_with_step_index():
    p = {"head.w": np.ones(2)}
    state = AdamState()
    trainer.adam_step(p, {"head.w": np.ones(2)}, state, lr=0.1)
    with pytest.raises(TrainError, match="step 2"):
        trainer.adam_step(p, {"head.w": np.array([np.nan, 0.0])}, state, lr=0.1)


# -- training loop ------------------------------------------------------------------------


def test_batch_loss_skips_infeasible(small_corpus):
    charset, ex = small_corpus
    net = tiny_net(charset)
    imgs = np.zeros((2, 16, 64, 1), np.uint8)
    loss, grads, skipped = trainer.batch_loss(net, imgs, [[1, 2], [1] * 40])
    assert skipped == 1 and math.isfinite(loss) and grads is not None
    loss, grads, skipped = trainer.batch_loss(net, imgs, [[1] * 40, [2] * 40])
    assert skipped == 2 and grads is None


def test_train_writes_logs_and_checkpoints(small_corpus, tmp_path):
    charset, ex = small_corpus
    net = tiny_net(charset)
    cfg = TrainConfig(epochs=2, restart_period=2, batch_size=16, seed=3)
    res = trainer.train(net, ex[:32], ex[32:40], charset, cfg, TINY_AUG, out_dir=tmp_path, extra={"k": 1})
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 2 == len(res.history)
    rec = json.loads(lines[0])
    assert {"epoch", "train_loss", "train_acc", "val_acc", "skipped", "lr_end", "iterations"} <= set(rec)
    assert rec["iterations"] == 2
    _, extra = network.load_checkpoint(tmp_path / "latest.ckpt", vocab=charset.num_classes, return_extra=True)
    assert extra["k"] == 1 and extra["epoch"] == 2
    assert (tmp_path / "best.ckpt").exists()


def test_train_is_reproducible(small_corpus, tmp_path):
    charset, ex = small_corpus
    cfg = TrainConfig(epochs=2, restart_period=2, batch_size=8, seed=5, multi_scale=((16, 64), (32, 128)),
                      scale_switch_iters=2)
    for run in ("a", "b"):
        trainer.train(tiny_net(charset), ex[:24], ex[24:32], charset, cfg, TINY_AUG, out_dir=tmp_path / run)
    for name in ("metrics.jsonl", "latest.ckpt", "best.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_counts_infeasible(small_corpus):
    charset, ex = small_corpus
    net = network.build(network.NetConfig(vocab=charset.num_classes, input_h=16, input_w=16,
                                          stages=((4, 3, 2, 4), (4, 3, 2, 1)), hidden=2, layers=1))
    aug = AugmentConfig.disabled(target_h=16, target_w=16)
    cfg = TrainConfig(epochs=1, restart_period=1, eval_train=False)
    res = trainer.train(net, ex[:16], [], charset, cfg, aug)
    # 4 output steps fit labels of at most 4 symbols with no repeats
    long = sum(1 for e in ex[:16] if len(e.target) + sum(a == b for a, b in zip(e.target, e.target[1:])) > 4)
    assert long > 0 and res.history[0]["skipped"] == long


def test_train_rejects_vocab_mismatch(small_corpus):
    charset, ex = small_corpus
    net = network.build(network.NetConfig(vocab=5, input_h=16, input_w=64))
    with pytest.raises(TrainError, match="vocabulary"):
        trainer.train(net, ex[:4], [], charset, TrainConfig(epochs=1, restart_period=1), TINY_AUG)


def test_multi_scale_schedule():
    cfg = TrainConfig(multi_scale=trainer.DEFAULT_SCALES, scale_switch_iters=8)
    aug = AugmentConfig()
    scales = [trainer.scale_for_iteration(cfg, aug, i) for i in range(80)]
    for block in range(10):
        assert len(set(scales[block * 8 : block * 8 + 8])) == 1
    assert set(scales) <= set(trainer.DEFAULT_SCALES) and len(set(scales)) > 1
    assert trainer.scale_for_iteration(TrainConfig(), aug, 5) == (48, 480)


def test_multi_scale_must_fit_stride_plan():
    cfg = TrainConfig(multi_scale=((30, 320),))
    with pytest.raises(TrainError):
        cfg.check_scales(network.NetConfig(vocab=5))


# -- over-fit ladder ---------------------------------------------------------------------


def test_plan_validation():
    OverfitPlan().validate(100)
    with pytest.raises(TrainError, match="strictly increasing"):
        OverfitPlan().validate(50)  # 10% of 50 is 5 < 8
    with pytest.raises(TrainError):
        OverfitPlan(rungs=(1, 8), thresholds=(1.0,)).validate(100)
    assert OverfitPlan().sizes(100) == [1, 8, 10, 100]


def test_empty_plan(small_corpus):
    charset, ex = small_corpus
    plan = OverfitPlan(rungs=(), thresholds=())
    assert trainer.run_overfit_ladder(lambda: tiny_net(charset), ex, charset, TINY_AUG, plan) == []


def test_huge_learning_rate_fails_first_rung(small_corpus):
    charset, ex = small_corpus
    plan = OverfitPlan(rungs=(1, 8), thresholds=(1.0, 1.0), max_iters=60, lr=10.0)
    reports = trainer.run_overfit_ladder(lambda: tiny_net(charset), ex, charset, TINY_AUG.replace(prob=0.0), plan)
    assert len(reports) == 1 and not reports[0].passed


@pytest.mark.slow
def test_reference_ladder_passes(ladder_corpus):
    charset, ex = ladder_corpus
    aug = AugmentConfig.disabled(target_h=32, target_w=160)
    cfg = network.NetConfig(vocab=charset.num_classes, input_h=32, input_w=160, hidden=64)
    plan = OverfitPlan(rungs=(1, 8, 0.1), thresholds=(1.0, 1.0, 1.0), lr=5e-3)
    reports = trainer.run_overfit_ladder(lambda: network.build(cfg), ex, charset, aug, plan)
    assert [r.passed for r in reports] == [True, True, True]
    assert [r.size for r in reports] == [1, 8, 10]
    assert all(r.predictions and r.predictions[0][0] == r.predictions[0][1] for r in reports)


@pytest.mark.slow
def test_single_sample_loss_decreases(ladder_corpus):
    charset, ex = ladder_corpus
    aug = AugmentConfig.disabled(target_h=32, target_w=160)
    net = network.build(network.NetConfig(vocab=charset.num_classes, input_h=32, input_w=160,
                                          hidden=32, keep_prob=1.0))
    plan = OverfitPlan(max_iters=800, lr=5e-3, check_every=800)
    _, _, losses, note = trainer.fit_subset(net, ex[:1], charset, aug, plan, threshold=1.01)
    windows = np.asarray(losses).reshape(-1, 10).mean(axis=1)
    assert not note
    assert np.all(np.diff(windows) <= 0)
    assert min(losses) < 1e-2
