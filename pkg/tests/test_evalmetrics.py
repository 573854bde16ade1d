import json
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from crnnkit import evalmetrics
from crnnkit.augment import AugmentConfig
from crnnkit.charset import Charset, encode
from crnnkit.dataset import Example
from crnnkit.evalmetrics import EvalError

CS = Charset(tuple("abc"))
W = 12


class PixelNet:
    """Stub network: column j's pixel value is the class emitted at step j."""

    config = SimpleNamespace(stride_h=1, stride_w=1)

    def __init__(self):
        self.calls = 0

    def forward(self, images, mode="eval"):
        self.calls += 1
        cls = images[:, 0, :, 0].astype(int) % CS.num_classes
        logits = np.full(cls.shape + (CS.num_classes,), -4.0)
        np.put_along_axis(logits, cls[..., None], 4.0, axis=2)
        return logits


def image_for(text, width=W):
    path = []
    for k in encode(CS, text):
        path += [k, 0]
    img = np.zeros((2, width, 1), np.uint8)
    img[:, : len(path), 0] = path
    return img


AUG = AugmentConfig.disabled(target_h=2, target_w=W, resize_policy="stretch")


@pytest.mark.parametrize("pred, truth, ok", [("ab", "a b", 1), ("ab", "ab", 1), ("ab", "ba", 0), ("", " ", 1)])
def test_sequence_accuracy(pred, truth, ok):
    assert evalmetrics.sequence_accuracy(pred, truth) == ok


@given(st.text(alphabet="ab c", max_size=8), st.text(alphabet="ab c", max_size=8))
def test_sequence_accuracy_space_invariant(p, t):
    strip = lambda s: s.replace(" ", "")
    assert evalmetrics.sequence_accuracy(p, t) == evalmetrics.sequence_accuracy(strip(p), strip(t))


def test_evaluate_memorized_and_reports():
    texts = ["a", "ab", "cab", "bb", "a c"]
    ex = [Example(image_for(t), t, encode(CS, t), f"p{i}") for i, t in enumerate(texts)]
    net = PixelNet()
    reports = evalmetrics.evaluate(net, ex, CS, AUG, modes=("greedy", "beam"), beam_width=8, keep_predictions=True)
    assert net.calls == 1  # logits computed once for both decoders
    for mode, r in reports.items():
        assert r.accuracy == 1.0 and r.n_correct == r.n_samples == 5
        assert sum(n for n, _ in r.per_length.values()) == 5
        assert r.per_length == {1: [1, 1], 2: [3, 3], 3: [1, 1]}
    assert reports["beam"].beam_width == 8 and reports["greedy"].beam_width == 0
    assert "accuracy  1.0000" in reports["greedy"].table()


def test_evaluate_counts_unreadable(tmp_path):
    ex = [Example(image_for("ab"), "ab", [1, 2], "ok.ppm"), Example(None, "c", [3], "bad.ppm", "truncated")]
    r = evalmetrics.evaluate(PixelNet(), ex, CS, AUG, keep_predictions=True)["greedy"]
    assert r.n_correct == 1 and r.accuracy == 0.5 and r.unreadable == ["bad.ppm"]
    evalmetrics.write_predictions(tmp_path / "p.tsv", r)
    rows = (tmp_path / "p.tsv").read_text().splitlines()
    assert rows == ["ok.ppm\tab\tab\t1", "bad.ppm\tc\t\t0"]
    evalmetrics.write_report(tmp_path / "eval.json", {"greedy": r})
    d = json.loads((tmp_path / "eval.json").read_text())
    assert d["greedy"]["n_correct"] == 1 and "predictions" not in d["greedy"]


def test_evaluate_empty():
    with pytest.raises(EvalError, match="empty eval set"):
        evalmetrics.evaluate(PixelNet(), [], CS, AUG)


def test_evaluate_rejects_unknown_mode():
    with pytest.raises(EvalError):
        evalmetrics.evaluate(PixelNet(), [Example(image_for("a"), "a")], CS, AUG, modes=("viterbi",))


def test_tta_single_scale_equals_plain_decode():
    img = image_for("cab")
    lp = evalmetrics.compute_log_probs(PixelNet(), [img], AUG)[0]
    plain = evalmetrics.decode(lp, CS)
    for strategy in ("best_score", "avg_prob"):
        assert evalmetrics.tta_decode(PixelNet(), img, CS, AUG, scales=[(2, W)], strategy=strategy) == plain == "cab"


def test_tta_identical_logits_agree():
    class ConstNet(PixelNet):
        def forward(self, images, mode="eval"):
            return super().forward(np.broadcast_to(image_for("bca"), (len(images), 2, W, 1)))

    img = image_for("bca")
    scales = [(2, W), (4, W), (6, W)]
    outs = {evalmetrics.tta_decode(ConstNet(), img, CS, AUG, scales=scales, strategy=s) for s in ("best_score", "avg_prob")}
    assert outs == {"bca"}


def test_tta_best_score_picks_confident_scale():
    class ScaleNet(PixelNet):
        def forward(self, images, mode="eval"):
            h = images.shape[1]
            logits = super().forward(np.broadcast_to(image_for("ab" if h == 4 else "c"), (len(images), 2, W, 1)))
            return logits * (2.0 if h == 4 else 1.0)

    img = image_for("ab")
    assert evalmetrics.tta_decode(ScaleNet(), img, CS, AUG, scales=[(2, W), (4, W)]) == "ab"


def test_tta_rejects_bad_scale():
    net = SimpleNamespace(config=SimpleNamespace(stride_h=4, stride_w=4))
    with pytest.raises(EvalError):
        evalmetrics.tta_decode(net, image_for("a"), CS, AUG, scales=[(6, 32)])
    with pytest.raises(EvalError):
        evalmetrics.tta_decode(net, image_for("a"), CS, AUG, scales=[])


def test_default_tta_scales():
    assert evalmetrics.DEFAULT_TTA_SCALES == ((32, 320), (48, 480), (64, 640))


def test_resample_steps():
    lp = np.arange(8.0).reshape(4, 2)
    assert np.array_equal(evalmetrics.resample_steps(lp, 4), lp)
    assert evalmetrics.resample_steps(lp, 2)[:, 0].tolist() == [2.0, 6.0]  # centre-aligned
    assert evalmetrics.resample_steps(lp, 8)[:, 0].tolist() == [0, 0, 2, 2, 4, 4, 6, 6]


def test_avg_prob_handles_underflow():
    class HardNet(PixelNet):
        def forward(self, images, mode="eval"):
            return super().forward(images) * 500.0  # probabilities underflow to exactly 0

    img = image_for("ca")
    for mode in ("greedy", "beam"):
        out = evalmetrics.tta_decode(HardNet(), img, CS, AUG, scales=[(2, W), (4, W)], strategy="avg_prob", mode=mode)
        assert out == "ca"
