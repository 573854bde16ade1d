"""
CTC loss and decoding on matrices small enough to check by hand
================================================================

A two-symbol alphabet (blank plus "a") over two frames has four paths.
Three of them collapse to "a", so with uniform frames P("a") = 3/4.
"""
import math

import numpy as np

from crnnkit import ctc

lp = np.log(np.full((2, 2), 0.5))
print("paths collapsing to [1]:", [p for p in ([0, 0], [0, 1], [1, 0], [1, 1]) if ctc.collapse(p) == [1]])
r = ctc.ctc_loss(lp, [1])
print(f"loss {r.loss:.6f}  (-log 0.75 = {-math.log(0.75):.6f})")
print("brute force agrees:", ctc.brute_force_loss(lp, [1]))

# a repeated symbol needs a blank between its copies, so "aa" does not fit in two frames
print("[1, 1] in 2 frames infeasible:", ctc.ctc_loss(lp, [1, 1]).infeasible)

# the gradient w.r.t. logits is softmax minus the per-frame label occupancy
r = ctc.ctc_loss_from_logits(np.zeros((2, 2)), [1])
print("gradient rows sum to", r.grad.sum(axis=1))

# Greedy decoding picks the best path, beam search the best label.
# Here every frame prefers blank, yet "a" carries 0.64 of the mass.
lp = np.log([[0.6, 0.4], [0.6, 0.4]])
marg = ctc.label_marginals(lp)
print("label marginals:", {k: round(float(v), 4) for k, v in marg.items()})
print("greedy:", ctc.greedy_decode(lp), " beam(4):", ctc.beam_search_decode(lp, 4))

# Wider beams are not always better: pruning can discard the winning prefix early.
rng = np.random.default_rng(268)
T, V = int(rng.integers(2, 6)), int(rng.integers(2, 4))
lp = ctc.log_softmax(rng.normal(size=(T, V)) * 2)
marg = ctc.label_marginals(lp)
for w in (1, 2, 8):
    lab = tuple(ctc.beam_search_decode(lp, w))
    print(f"width {w}: {lab} p={marg[lab]:.3f}")
print("exact best:", max(marg, key=marg.get), f"p={max(marg.values()):.3f}")
