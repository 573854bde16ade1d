"""
Checking the network's backward pass against finite differences
===============================================================

Every parameter of a tiny CRNN is nudged by +-h and the change in a CTC
loss is compared with the analytic gradient.
"""
import numpy as np

from crnnkit import ctc, network

cfg = network.NetConfig(vocab=4, input_h=8, input_w=12, stages=((3, 3, 2, 2), (4, 3, 2, 1)),
                        hidden=3, layers=2, keep_prob=0.8, seed=1)
net = network.build(cfg)
rng = np.random.default_rng(0)
x = rng.uniform(-1, 1, size=(1, 8, 12, 1))
masks = np.array([[True, False, True, True]])  # fixed dropout masks keep the loss deterministic
label = [1, 2, 1]
print("parameters:", net.param_count(), " output steps:", cfg.output_steps())


def loss():
    return ctc.ctc_loss_from_logits(net.forward(x, "train", masks=masks)[0], label).loss


r = ctc.ctc_loss_from_logits(net.forward(x, "train", masks=masks)[0], label)
grads = net.backward(r.grad[None])
h = 1e-5
for name, p in net.params.items():
    worst = 0.0
    for idx in np.ndindex(p.shape):
        old = p[idx]
        p[idx] = old + h
        up = loss()
        p[idx] = old - h
        dn = loss()
        p[idx] = old
        num = (up - dn) / (2 * h)
        worst = max(worst, abs(num - grads[name][idx]) / max(abs(num), abs(grads[name][idx]), 1e-6))
    print(f"{name:14s} {str(p.shape):14s} worst rel err {worst:.1e}")
