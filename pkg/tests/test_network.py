import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crnnkit import ctc, network
from crnnkit.network import CheckpointError, NetConfig, NetworkError

TINY = NetConfig(
    vocab=4, input_h=8, input_w=12, channels=1,
    stages=((3, 3, 2, 2), (4, 3, 2, 1)), hidden=3, layers=2, keep_prob=0.7, seed=0,
)


def shape_walk_count(cfg: NetConfig) -> int:
    """Parameter count from the layer description alone."""
    total, c_in = 0, cfg.channels
    for out_c, k, _, _ in cfg.stages:
        c = max(1, int(round(out_c * cfg.width_mult)))
        total += c * c_in * k * k + c
        c_in = c
    d, H = c_in, cfg.hidden
    for _ in range(cfg.layers):
        total += 2 * (d * 4 * H + H * 4 * H + 4 * H)
        d = 2 * H
    return total + d * cfg.vocab + cfg.vocab


def fd_check(cfg, seed, h=1e-4):
    rng = np.random.default_rng(seed)
    net = network.build(cfg.replace(seed=seed))
    x = rng.uniform(-1, 1, size=(1, cfg.input_h, cfg.input_w, cfg.channels))
    masks = np.ones((1, cfg.stage_channels()[-1]), bool)
    masks[0, 0] = False
    T = cfg.output_steps()
    R = rng.normal(size=(1, T, cfg.vocab))

    def loss():
        return float((net.forward(x, "train", masks=masks) * R).sum())

    loss()
    grads = net.backward(R)
    worst = 0.0
    for name, p in net.params.items():
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            dn = loss()
            p[idx] = old
            num = (up - dn) / (2 * h)
            err = abs(num - grads[name][idx]) / max(abs(num), abs(grads[name][idx]), 1e-6)
            worst = max(worst, err)
    return worst


def test_output_steps_trace():
    cfg = NetConfig(vocab=5, input_h=32, input_w=320,
                    stages=((8, 3, 2, 1), (8, 3, 2, 2), (8, 3, 2, 2)), hidden=4, layers=1)
    assert cfg.output_steps() == 80
    net = network.build(cfg)
    assert net.forward(np.zeros((2, 32, 320, 1), np.uint8)).shape == (2, 80, 5)


def test_stride_change_halves_steps():
    a = NetConfig(vocab=5, input_h=32, input_w=320, stages=((8, 3, 2, 2), (8, 3, 2, 1), (8, 3, 2, 2)))
    b = a.replace(stages=((8, 3, 2, 2), (8, 3, 2, 2), (8, 3, 2, 2)))
    assert b.output_steps() * 2 == a.output_steps()


@pytest.mark.parametrize(
    "bad",
    [dict(input_h=50), dict(stages=((8, 4, 2, 2),)), dict(keep_prob=0.0), dict(keep_prob=1.2),
     dict(hidden=0), dict(input_w=4, stages=((8, 3, 2, 8),))],
)
def test_invalid_configs(bad):
    with pytest.raises(NetworkError):
        NetConfig(vocab=5, **bad)
    with pytest.raises(NetworkError):
        NetConfig(vocab=1)


def test_same_seed_same_params():
    a, b = network.build(TINY), network.build(TINY)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    c = network.build(TINY.replace(seed=1))
    assert not np.array_equal(a.params["head.w"], c.params["head.w"])


def test_forget_gate_bias():
    b = network.build(TINY).params["neck0.fw.b"]
    H = TINY.hidden
    assert (b[H : 2 * H] == 1.0).all() and (b[:H] == 0).all() and (b[2 * H :] == 0).all()


def test_eval_deterministic_and_keep_prob_one(rng):
    x = rng.integers(0, 256, size=(3, 8, 12, 1), dtype=np.uint8)
    net = network.build(TINY.replace(keep_prob=1.0))
    e1 = net.forward(x, "eval")
    assert np.array_equal(e1, net.forward(x, "eval"))
    assert np.array_equal(e1, net.forward(x, "train"))


def test_dropout_fraction():
    cfg = NetConfig(vocab=3, input_h=4, input_w=4, stages=((100, 1, 1, 1),), hidden=1, layers=1, keep_prob=0.9)
    net = network.build(cfg)
    x = np.zeros((100, 4, 4, 1))
    dropped = []
    for _ in range(100):
        net.forward(x, "train")
        dropped.append(1.0 - net.last_masks.mean())
    # 100 forwards x 100 samples = 10^4 masks
    assert abs(np.mean(dropped) - 0.1) < 0.01


def test_dropout_scales_survivors(rng):
    x = rng.uniform(-1, 1, size=(1, 8, 12, 1))
    net = network.build(TINY)
    masks = np.ones((1, 4), bool)
    full = net.forward(x, "train", masks=masks)
    assert not np.array_equal(full, net.forward(x, "eval"))  # 1/keep_prob scaling


def test_masked_channel_gets_no_gradient(rng):
    cfg = TINY.replace(stages=((3, 3, 2, 2), (4, 3, 2, 1), (2, 1, 1, 1)), dropout_stage=1)
    net = network.build(cfg)
    x = rng.uniform(-1, 1, size=(1, 8, 12, 1))
    masks = np.array([[True, False, True, True]])
    logits = net.forward(x, "train", masks=masks)
    grads = net.backward(rng.normal(size=logits.shape))
    # output channel 1 of stage 1 is zeroed after activation: its filter and bias see no gradient
    assert not grads["stage1.w"][1].any() and grads["stage1.b"][1] == 0
    # and the next stage receives nothing through input channel 1
    assert not grads["stage2.w"][:, 1].any()


def test_zero_upstream_gives_zero_grads(rng):
    net = network.build(TINY)
    logits = net.forward(rng.uniform(-1, 1, size=(2, 8, 12, 1)), "train")
    grads = net.backward(np.zeros_like(logits))
    assert set(grads) == set(net.params)
    assert all(not g.any() for g in grads.values())


def test_backward_requires_train_forward(rng):
    net = network.build(TINY)
    with pytest.raises(NetworkError):
        net.backward(np.zeros((1, 6, 4)))
    net.forward(np.zeros((1, 8, 12, 1)), "eval")
    with pytest.raises(NetworkError):
        net.backward(np.zeros((1, 6, 4)))


def test_input_checks():
    net = network.build(TINY)
    with pytest.raises(NetworkError):
        net.forward(np.zeros((1, 8, 12, 3)))
    with pytest.raises(NetworkError):
        net.forward(np.zeros((1, 6, 12, 1)))
    assert net.forward(np.zeros((1, 16, 24, 1))).shape == (1, 12, 4)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(5))
def test_finite_difference_gradients(seed):
    assert fd_check(TINY, seed) <= 1e-4


def test_ctc_gradient_flows_end_to_end(rng):
    net = network.build(TINY)
    x = rng.uniform(-1, 1, size=(1, 8, 12, 1))
    masks = np.ones((1, 4), bool)
    label = [1, 2]

    def loss():
        return ctc.ctc_loss_from_logits(net.forward(x, "train", masks=masks)[0], label).loss

    r = ctc.ctc_loss_from_logits(net.forward(x, "train", masks=masks)[0], label)
    g = net.backward(r.grad[None])
    p = net.params["head.b"]
    for i in range(p.size):
        old = p[i]
        p[i] = old + 1e-5
        up = loss()
        p[i] = old - 1e-5
        dn = loss()
        p[i] = old
        assert (up - dn) / 2e-5 == pytest.approx(g["head.b"][i], rel=1e-5, abs=1e-9)


def test_param_count():
    for cfg in (TINY, NetConfig(vocab=41), NetConfig(vocab=3908, hidden=64, width_mult=0.6)):
        net = network.build(cfg)
        assert net.param_count() == shape_walk_count(cfg)
        assert net.param_bytes() == 4 * net.param_count()
        shapes = network.param_shapes(cfg)
        H, V = cfg.hidden, cfg.vocab
        assert int(np.prod(shapes["head.w"])) + int(np.prod(shapes["head.b"])) == 2 * H * V + V


def test_width_multiplier_monotone():
    full = network.build(NetConfig(vocab=41)).param_count()
    half = network.build(NetConfig(vocab=41, width_mult=0.5)).param_count()
    assert half < full


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.tuples(st.integers(1, 6), st.sampled_from([1, 3]), st.integers(1, 2), st.integers(1, 3)),
             min_size=1, max_size=3),
    st.integers(1, 4), st.integers(1, 2), st.integers(2, 6), st.integers(1, 40), st.sampled_from([1, 3]),
)
def test_shape_contract(stages, hmul, layers, vocab, width, channels):
    sh = int(np.prod([s[2] for s in stages]))
    sw = int(np.prod([s[3] for s in stages]))
    width = max(width, sw)
    cfg = NetConfig(vocab=vocab, input_h=sh * hmul, input_w=width, channels=channels,
                    stages=tuple(stages), hidden=3, layers=layers)
    out = network.build(cfg).forward(np.zeros((2, sh * hmul, width, channels)))
    assert out.shape == (2, cfg.output_steps(), vocab)
    w = width
    for s in stages:
        w = -(-w // s[3])
    assert cfg.output_steps() == w


def test_checkpoint_round_trip(tmp_path, rng):
    net = network.build(TINY)
    x = rng.uniform(-1, 1, size=(2, 8, 12, 1))
    path = tmp_path / "m.ckpt"
    network.save_checkpoint(net, path, extra={"note": "x"})
    back, extra = network.load_checkpoint(path, return_extra=True)
    assert back.config == net.config and extra == {"note": "x"}
    assert np.array_equal(back.forward(x), net.forward(x))
    assert path.read_bytes()[:8] == b"CRNNCKPT"


def test_checkpoint_float32(tmp_path):
    net = network.build(TINY)
    path = tmp_path / "m32.ckpt"
    network.save_checkpoint(net, path, dtype="float32")
    back = network.load_checkpoint(path)
    for k, v in net.params.items():
        assert np.array_equal(back.params[k], v.astype(np.float32).astype(np.float64))


def test_checkpoint_errors(tmp_path):
    net = network.build(TINY)
    path = tmp_path / "m.ckpt"
    network.save_checkpoint(net, path)
    data = path.read_bytes()
    (tmp_path / "t.ckpt").write_bytes(data[:-7])
    with pytest.raises(CheckpointError, match="corrupt checkpoint"):
        network.load_checkpoint(tmp_path / "t.ckpt")
    (tmp_path / "m.bad").write_bytes(b"NOTACKPT" + data[8:])
    with pytest.raises(CheckpointError, match="corrupt checkpoint"):
        network.load_checkpoint(tmp_path / "m.bad")
    (tmp_path / "v.ckpt").write_bytes(data[:8] + (99).to_bytes(4, "little") + data[12:])
    with pytest.raises(CheckpointError, match="version"):
        network.load_checkpoint(tmp_path / "v.ckpt")
    with pytest.raises(NetworkError):
        network.load_checkpoint(path, vocab=7)
