"""Training: Adam with cosine warm restarts, and the over-fit ladder."""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import ctc, network
from .augment import AugmentConfig, apply_pipeline, prepare
from .charset import Charset, decode_indices
from .evalmetrics import accuracy
from .rng import stream

DEFAULT_SCALES = ((32, 320), (48, 480), (64, 640))


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 2e-3
    restart_period: float = 50
    epochs: int = 2000
    batch_size: int = 16
    weight_decay_head: float = 4e-5
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    augment: bool = True
    multi_scale: tuple = ()
    scale_switch_iters: int = 8
    eval_train: bool = True
    stop_at_val_acc: float = 0.0
    seed: int = 42

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise TrainError("initial_lr must be positive")
        if self.restart_period <= 0 or self.restart_period > self.epochs:
            raise TrainError("restart period must be positive and no longer than the run")
        if self.batch_size < 1 or self.scale_switch_iters < 1:
            raise TrainError("batch_size and scale_switch_iters must be positive")
        object.__setattr__(self, "multi_scale", tuple(tuple(s) for s in self.multi_scale))

    def check_scales(self, net_cfg: network.NetConfig) -> None:
        for h, w in self.multi_scale:
            if h % net_cfg.stride_h or w < net_cfg.stride_w:
                raise TrainError(f"scale {(h, w)} incompatible with the network stride plan")


def lr_at(config: TrainConfig, epoch: float) -> float:
    """Cosine annealing with warm restarts every ``restart_period`` epochs."""
    if epoch < 0:
        raise TrainError("epoch must be non-negative")
    t = math.fmod(epoch, config.restart_period)
    return config.initial_lr * 0.5 * (1.0 + math.cos(math.pi * t / config.restart_period))


# -- optimizer ----------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, lr: float, weight_decay=None,
              betas=(0.9, 0.999), eps: float = 1e-8, group_of: Callable = network.param_group) -> AdamState:
    """In-place Adam update with bias correction.

    ``weight_decay`` maps a parameter group name to a decoupled decay
    coefficient (``p -= lr * wd * p``); groups not listed get none.
    """
    weight_decay = weight_decay or {}
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainError(f"non-finite gradient for {name} at step {state.step + 1}")
    state.step += 1
    b1, b2 = betas
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name in sorted(grads):
        g = grads[name]
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        wd = weight_decay.get(group_of(name), 0.0)
        if wd:
            p -= lr * wd * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# -- batches --------------------------------------------------------------------------


def batch_loss(net, images, targets):
    """Mean CTC loss over the feasible samples of a batch, plus parameter
    gradients. Returns ``(loss, grads, n_skipped)``."""
    logits = net.forward(images, mode="train")
    dlogits = np.zeros_like(logits)
    losses = []
    for i, target in enumerate(targets):
        r = ctc.ctc_loss_from_logits(logits[i], target)
        if r.infeasible:
            continue
        losses.append(r.loss)
        dlogits[i] = r.grad
    if not losses:
        return math.nan, None, len(targets)
    dlogits /= len(losses)
    grads = net.backward(dlogits)
    return float(np.mean(losses)), grads, len(targets) - len(losses)


def scale_for_iteration(config: TrainConfig, aug: AugmentConfig, iteration: int):
    if not config.multi_scale:
        return (aug.target_h, aug.target_w)
    block = iteration // config.scale_switch_iters
    rng = stream(config.seed, "scale", block)
    return config.multi_scale[int(rng.integers(0, len(config.multi_scale)))]


def _batch_images(examples, idx, config, aug, scale, epoch, n):
    imgs = []
    for i in idx:
        img = examples[i].image
        if config.augment:
            imgs.append(apply_pipeline(img, aug, seed=config.seed, index=epoch * n + int(i), target=scale))
        else:
            imgs.append(prepare(img, aug, scale))
    return np.stack(imgs)


@dataclass
class TrainResult:
    history: List[dict]
    best_val: float
    best_epoch: int
    net: object


def _json_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


def train(net, train_set, val_set, charset: Charset, config: TrainConfig, aug: AugmentConfig,
          out_dir: Optional[str] = None, log: Callable = None, extra: dict = None) -> TrainResult:
    """Train ``net`` in place.

    Writes ``metrics.jsonl``, ``latest.ckpt`` and ``best.ckpt`` into
    ``out_dir`` when given (``extra`` is stored in the checkpoint header).
    Samples whose label cannot fit in the network's
    output steps at the current scale are skipped and counted.
    """
    if net.config.vocab != charset.num_classes:
        raise TrainError(
            f"network vocabulary {net.config.vocab} != charset classes {charset.num_classes}"
        )
    if net.config.channels != aug.channels:
        raise TrainError("augment channels must match the network input channels")
    if not train_set:
        raise TrainError("empty training set")
    config.check_scales(net.config)
    for e in train_set:
        if e.target is None or e.image is None:
            raise TrainError(f"training example {e.path!r} has no image or encoded target")
    state = AdamState()
    n = len(train_set)
    n_batches = math.ceil(n / config.batch_size)
    wd = {"head": config.weight_decay_head}
    history = []
    best_val, best_epoch = -1.0, -1
    metrics_f = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        metrics_f = open(os.path.join(out_dir, "metrics.jsonl"), "w", encoding="utf-8", newline="\n")
    iteration = 0
    try:
        for epoch in range(config.epochs):
            order = stream(config.seed, "shuffle", epoch).permutation(n)
            losses, skipped = [], 0
            for b in range(n_batches):
                idx = order[b * config.batch_size : (b + 1) * config.batch_size]
                scale = scale_for_iteration(config, aug, iteration)
                images = _batch_images(train_set, idx, config, aug, scale, epoch, n)
                loss, grads, nskip = batch_loss(net, images, [train_set[i].target for i in idx])
                skipped += nskip
                iteration += 1
                if grads is None:
                    continue
                lr = lr_at(config, epoch + b / n_batches)
                adam_step(net.params, grads, state, lr, wd, config.betas, config.eps)
                losses.append(loss)
            record = {
                "epoch": epoch + 1,
                "iterations": iteration,
                "lr_end": lr_at(config, epoch + (n_batches - 1) / n_batches),
                "skipped": skipped,
                "train_loss": float(np.mean(losses)) if losses else None,
                "seed": config.seed,
            }
            if config.eval_train:
                record["train_acc"] = accuracy(net, train_set, charset, aug)
            if val_set:
                record["val_acc"] = accuracy(net, val_set, charset, aug)
            history.append(record)
            if log:
                log(record)
            score = record.get("val_acc", record.get("train_acc", -record["train_loss"] if losses else -1))
            if out_dir:
                metrics_f.write(_json_line(record) + "\n")
                metrics_f.flush()
                meta = {**(extra or {}), "epoch": epoch + 1, "seed": config.seed}
                network.save_checkpoint(net, os.path.join(out_dir, "latest.ckpt"), extra=meta)
                if score > best_val:
                    network.save_checkpoint(net, os.path.join(out_dir, "best.ckpt"), extra=meta)
            if score > best_val:
                best_val, best_epoch = score, epoch + 1
            if config.stop_at_val_acc and record.get("val_acc", 0.0) >= config.stop_at_val_acc:
                break
    finally:
        if metrics_f:
            metrics_f.close()
    return TrainResult(history, best_val, best_epoch, net)


# -- over-fit ladder ------------------------------------------------------------------------


@dataclass(frozen=True)
class OverfitPlan:
    """Rungs are sample counts (int) or fractions of the dataset (float)."""

    rungs: tuple = (1, 8, 0.1, 1.0)
    thresholds: tuple = (1.0, 1.0, 1.0, 1.0)
    max_iters: int = 500
    check_every: int = 10
    batch_size: int = 8
    lr: float = 2e-3

    def sizes(self, n: int) -> List[int]:
        out = []
        for r in self.rungs:
            k = int(math.ceil(r * n)) if isinstance(r, float) else int(r)
            out.append(max(1, min(k, n)))
        return out

    def validate(self, n: int) -> None:
        if len(self.thresholds) != len(self.rungs):
            raise TrainError("one threshold per rung is required")
        sizes = self.sizes(n)
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise TrainError(f"rung sizes must be strictly increasing, got {sizes}")


@dataclass
class RungReport:
    size: int
    threshold: float
    passed: bool
    iterations: int
    accuracy: float
    losses: List[float]
    predictions: List[tuple]
    note: str = ""

    def to_dict(self):
        return asdict(self)


def fit_subset(net, examples, charset, aug, plan: OverfitPlan, threshold: float, seed: int = 42):
    """Train on ``examples`` (no augmentation, constant lr) until the train
    accuracy reaches ``threshold`` or ``plan.max_iters`` runs out."""
    state = AdamState()
    n = len(examples)
    losses = []
    acc = 0.0
    it = 0
    note = ""
    images = np.stack([prepare(e.image, aug) for e in examples])
    order, pos, epoch = None, n, 0
    while it < plan.max_iters:
        if pos >= n:
            order = stream(seed, "overfit", n, epoch).permutation(n)
            pos, epoch = 0, epoch + 1
        idx = order[pos : pos + plan.batch_size]
        pos += plan.batch_size
        with np.errstate(all="ignore"):
            loss, grads, _ = batch_loss(net, images[idx], [examples[i].target for i in idx])
        it += 1
        if grads is None:
            note = "no feasible samples"
            break
        if not math.isfinite(loss):
            note = "diverged: non-finite loss"
            break
        losses.append(loss)
        try:
            adam_step(net.params, grads, state, plan.lr)
        except TrainError as exc:
            note = f"diverged: {exc}"
            break
        if it % plan.check_every == 0 or it == plan.max_iters:
            with np.errstate(all="ignore"):
                acc = accuracy(net, examples, charset, aug)
            if acc >= threshold:
                break
    return it, acc, losses, note


def run_overfit_ladder(make_net: Callable, examples, charset: Charset, aug: AugmentConfig,
                       plan: OverfitPlan = OverfitPlan(), seed: int = 42) -> List[RungReport]:
    """Fit growing subsets with a fresh network each, stopping at the first
    rung that misses its accuracy threshold."""
    reports = []
    if not plan.rungs:
        return reports
    plan.validate(len(examples))
    for size, threshold in zip(plan.sizes(len(examples)), plan.thresholds):
        subset = examples[:size]
        net = make_net()
        it, acc, losses, note = fit_subset(net, subset, charset, aug, plan, threshold, seed)
        preds = []
        if not note:
            from .evalmetrics import compute_log_probs

            for e, lp in zip(subset[:5], compute_log_probs(net, [e.image for e in subset[:5]], aug)):
                preds.append((e.text, decode_indices(charset, ctc.greedy_decode(lp))))
        passed = acc >= threshold and not note
        reports.append(RungReport(size, threshold, passed, it, acc, losses, preds, note))
        if not passed:
            break
    return reports
