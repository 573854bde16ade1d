"""
The over-fit ladder: one sample, one batch, then a slice of the data
====================================================================

Each rung trains a fresh network without augmentation and must reach
100% train accuracy. A bottlenecked neck (2 hidden units) shows what a
failing rung looks like. Takes under a minute on one CPU core.
"""
import time

from crnnkit import network, synth, trainer
from crnnkit.augment import AugmentConfig
from crnnkit.charset import build_charset
from crnnkit.dataset import from_arrays

pairs = synth.make_examples(100, vocab=40, seed=1)
charset = build_charset([lab for _, lab in pairs])
examples = from_arrays(pairs, charset)
aug = AugmentConfig.disabled(target_h=32, target_w=160)
plan = trainer.OverfitPlan(rungs=(1, 8, 0.1), thresholds=(1.0, 1.0, 1.0), lr=5e-3)

for hidden in (64, 2):
    cfg = network.NetConfig(vocab=charset.num_classes, input_h=32, input_w=160, hidden=hidden)
    t0 = time.time()
    print(f"neck width {hidden}:")
    for r in trainer.run_overfit_ladder(lambda: network.build(cfg), examples, charset, aug, plan):
        status = "pass" if r.passed else "FAIL"
        print(f"  {r.size:3d} samples  {status}  acc {r.accuracy:.2f} after {r.iterations} iters,"
              f" loss {r.losses[0]:.1f} -> {r.losses[-1]:.3f}")
        for truth, pred in r.predictions[:2]:
            print(f"      {truth!r:12} -> {pred!r}")
    print(f"  ({time.time() - t0:.0f}s)")
