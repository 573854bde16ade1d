"""A small CRNN in numpy with hand-written backward passes.

Layout::

    image (N, H, W, C) uint8
      -> conv stages: conv(k x k, stride (sh, sw)) + bias + hard-swish
         (spatial dropout after the configured stage, train mode only)
      -> mean over the remaining height        -> (N, T, C')
      -> bidirectional LSTM layers             -> (N, T, 2 * hidden)
      -> linear head                           -> (N, T, V) logits

Everything is float64. Activations are tensors in NHWC order.
"""
from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass
from typing import Dict

import numpy as np

from .rng import stream


class NetworkError(ValueError):
    pass


class CheckpointError(NetworkError):
    pass


@dataclass(frozen=True)
class NetConfig:
    vocab: int
    input_h: int = 48
    input_w: int = 480
    channels: int = 1
    # (out_channels, kernel, stride_h, stride_w) per stage
    stages: tuple = ((16, 3, 2, 2), (32, 3, 2, 2), (48, 3, 2, 1), (64, 3, 2, 2))
    width_mult: float = 1.0
    hidden: int = 48
    layers: int = 2
    keep_prob: float = 0.9
    dropout_stage: int = -1
    seed: int = 42

    def __post_init__(self):
        stages = tuple(tuple(int(v) for v in s) for s in self.stages)
        object.__setattr__(self, "stages", stages)
        if self.vocab < 2:
            raise NetworkError("vocab must count the blank plus at least one symbol")
        if not stages:
            raise NetworkError("at least one conv stage is required")
        for out_c, k, sh, sw in stages:
            if out_c < 1 or k < 1 or k % 2 == 0 or sh < 1 or sw < 1:
                raise NetworkError(f"bad stage {(out_c, k, sh, sw)}: kernel must be odd")
        if self.input_h % self.stride_h:
            raise NetworkError(
                f"height stride product {self.stride_h} does not divide input height {self.input_h}"
            )
        if self.input_w < self.stride_w:
            raise NetworkError("input width smaller than the width stride product")
        if not 0.0 < self.keep_prob <= 1.0:
            raise NetworkError("keep_prob must lie in (0, 1]")
        if not -len(stages) <= self.dropout_stage < len(stages):
            raise NetworkError("dropout_stage out of range")
        if self.width_mult <= 0 or self.hidden < 1 or self.layers < 1:
            raise NetworkError("width_mult, hidden and layers must be positive")
        if self.channels not in (1, 3):
            raise NetworkError("channels must be 1 or 3")

    @property
    def stride_h(self) -> int:
        return math.prod(s[2] for s in self.stages)

    @property
    def stride_w(self) -> int:
        return math.prod(s[3] for s in self.stages)

    def stage_channels(self):
        return [max(1, int(round(c * self.width_mult))) for c, _, _, _ in self.stages]

    def output_steps(self, width=None) -> int:
        """Number of CTC frames produced for an input ``width`` pixels wide."""
        w = self.input_w if width is None else width
        for _, _, _, sw in self.stages:
            w = (w - 1) // sw + 1
        return w

    def replace(self, **changes) -> "NetConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stages"] = [list(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        d["stages"] = tuple(tuple(s) for s in d["stages"])
        return cls(**d)


# -- primitive layers -------------------------------------------------------------


def hard_swish(x):
    return x * np.clip(x + 3.0, 0.0, 6.0) / 6.0


def hard_swish_grad(x):
    return np.where(x < -3.0, 0.0, np.where(x > 3.0, 1.0, (2.0 * x + 3.0) / 6.0))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def conv_forward(x, w, b, sh, sw):
    """``x`` (N, H, W, C), ``w`` (Cout, C, k, k) -> (N, Ho, Wo, Cout)."""
    n, h, wd, c = x.shape
    cout, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::sh, ::sw]  # (N, Ho, Wo, C, k, k)
    ho, wo = win.shape[1], win.shape[2]
    cols = win.reshape(n * ho * wo, c * k * k)
    out = cols @ w.reshape(cout, -1).T + b
    return out.reshape(n, ho, wo, cout), (cols, x.shape, xp.shape)


def conv_backward(dout, cache, w, sh, sw, need_dx=True):
    cols, xshape, xpshape = cache
    n, ho, wo, cout = dout.shape
    _, c, k, _ = w.shape
    d2 = dout.reshape(-1, cout)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(cout, -1)).reshape(n, ho, wo, c, k, k)
    dxp = np.zeros(xpshape)
    for i in range(k):
        for j in range(k):
            dxp[:, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw, :] += dcols[..., i, j]
    p = k // 2
    if p:
        dxp = dxp[:, p : p + xshape[1], p : p + xshape[2], :]
    return dxp, dw, db


def lstm_forward(x, wx, wh, b):
    """One direction over ``x`` (N, T, D); returns hidden states (N, T, H)."""
    n, T, _ = x.shape
    H = wh.shape[0]
    zx = x @ wx + b
    h = np.zeros((n, H))
    c = np.zeros((n, H))
    hs = np.empty((n, T, H))
    gates = np.empty((n, T, 4 * H))
    cs = np.empty((n, T, H))
    for t in range(T):
        z = zx[:, t] + h @ wh
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = sigmoid(z[:, 3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t] = np.concatenate([i, f, g, o], axis=1)
        cs[:, t] = c
        hs[:, t] = h
    return hs, (x, hs, cs, gates)


def lstm_backward(dhs, cache, wx, wh):
    x, hs, cs, gates = cache
    n, T, H = hs.shape
    dz_all = np.empty((n, T, 4 * H))
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((n, H))
    dc_next = np.zeros((n, H))
    for t in range(T - 1, -1, -1):
        i, f, g, o = np.split(gates[:, t], 4, axis=1)
        c = cs[:, t]
        c_prev = cs[:, t - 1] if t > 0 else np.zeros_like(c)
        h_prev = hs[:, t - 1] if t > 0 else np.zeros_like(c)
        tc = np.tanh(c)
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                dh * tc * o * (1.0 - o),
            ],
            axis=1,
        )
        dz_all[:, t] = dz
        dwh += h_prev.T @ dz
        dh_next = dz @ wh.T
        dc_next = dc * f
    dz2 = dz_all.reshape(n * T, 4 * H)
    dwx = x.reshape(n * T, -1).T @ dz2
    db = dz2.sum(axis=0)
    dx = dz_all @ wx.T
    return dx, dwx, dwh, db


# -- network ----------------------------------------------------------------------


def param_group(name: str) -> str:
    """'backbone', 'neck' or 'head'."""
    if name.startswith("stage"):
        return "backbone"
    if name.startswith("neck"):
        return "neck"
    return "head"


def param_shapes(cfg: NetConfig) -> Dict[str, tuple]:
    shapes = {}
    c_in = cfg.channels
    for si, ((_, k, _, _), c_out) in enumerate(zip(cfg.stages, cfg.stage_channels())):
        shapes[f"stage{si}.w"] = (c_out, c_in, k, k)
        shapes[f"stage{si}.b"] = (c_out,)
        c_in = c_out
    d = c_in
    H = cfg.hidden
    for li in range(cfg.layers):
        for dr in ("fw", "bw"):
            shapes[f"neck{li}.{dr}.wx"] = (d, 4 * H)
            shapes[f"neck{li}.{dr}.wh"] = (H, 4 * H)
            shapes[f"neck{li}.{dr}.b"] = (4 * H,)
        d = 2 * H
    shapes["head.w"] = (d, cfg.vocab)
    shapes["head.b"] = (cfg.vocab,)
    return shapes


def init_params(cfg: NetConfig) -> Dict[str, np.ndarray]:
    rng = stream(cfg.seed, "init")
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b"):
            p = np.zeros(shape)
            if name.startswith("neck"):
                H = shape[0] // 4
                p[H : 2 * H] = 1.0  # forget gate
        elif name.startswith("neck"):
            H = shape[1] // 4
            lim = 1.0 / math.sqrt(H)
            p = rng.uniform(-lim, lim, size=shape)
        else:
            fan_in = int(np.prod(shape[1:])) if name.startswith("stage") else shape[0]
            p = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
        params[name] = p
    return params


class Network:
    def __init__(self, config: NetConfig, params=None):
        self.config = config
        self.params = init_params(config) if params is None else params
        shapes = param_shapes(config)
        if set(shapes) != set(self.params):
            raise NetworkError("parameter names do not match the configuration")
        for name, shape in shapes.items():
            if tuple(self.params[name].shape) != shape:
                raise NetworkError(f"{name}: shape {self.params[name].shape} != {shape}")
        self._mask_rng = stream(config.seed, "dropout")
        self._cache = None
        self.last_masks = None

    # -- bookkeeping --

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def param_bytes(self) -> int:
        return 4 * self.param_count()

    def output_steps(self, width=None) -> int:
        return self.config.output_steps(width)

    def copy(self) -> "Network":
        net = Network(self.config, {k: v.copy() for k, v in self.params.items()})
        net._mask_rng = stream(self.config.seed, "dropout")
        net._mask_rng.bit_generator.state = self._mask_rng.bit_generator.state
        return net

    def check_input(self, images) -> np.ndarray:
        x = np.asarray(images)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4:
            raise NetworkError(f"expected (N, H, W, C) images, got shape {x.shape}")
        _, h, w, c = x.shape
        cfg = self.config
        if c != cfg.channels:
            raise NetworkError(f"expected {cfg.channels} channels, got {c}")
        if h % cfg.stride_h or w < cfg.stride_w:
            raise NetworkError(
                f"input {h}x{w} incompatible with stride plan (height multiple of {cfg.stride_h})"
            )
        return x

    # -- forward / backward --

    def forward(self, images, mode: str = "eval", masks=None) -> np.ndarray:
        """Logits of shape (N, T, V).

        In ``train`` mode spatial-dropout masks are drawn from the network's
        own stream (or taken from ``masks``, shape (N, C) of 0/1) and the
        activations needed by :meth:`backward` are kept.
        """
        if mode not in ("train", "eval"):
            raise NetworkError(f"unknown mode {mode!r}")
        cfg = self.config
        p = self.params
        x = self.check_input(images)
        if x.dtype == np.uint8:
            x = x.astype(np.float64) / 127.5 - 1.0
        else:
            x = np.asarray(x, dtype=np.float64)
        train = mode == "train"
        caches = []
        drop_at = cfg.dropout_stage % len(cfg.stages)
        mask = None
        for si, (_, _, sh, sw) in enumerate(cfg.stages):
            pre, cc = conv_forward(x, p[f"stage{si}.w"], p[f"stage{si}.b"], sh, sw)
            x = hard_swish(pre)
            if train and si == drop_at and (cfg.keep_prob < 1.0 or masks is not None):
                if masks is None:
                    keep = self._mask_rng.random((x.shape[0], x.shape[3])) < cfg.keep_prob
                else:
                    keep = np.asarray(masks, dtype=bool)
                mask = keep[:, None, None, :] / cfg.keep_prob
                x = x * mask
            caches.append((cc, pre))
        self.last_masks = None if mask is None else (mask[:, 0, 0, :] > 0)
        feat_h = x.shape[1]
        seq = x.mean(axis=1)  # (N, T, C)
        neck = []
        for li in range(cfg.layers):
            f_out, f_c = lstm_forward(seq, p[f"neck{li}.fw.wx"], p[f"neck{li}.fw.wh"], p[f"neck{li}.fw.b"])
            b_out, b_c = lstm_forward(
                seq[:, ::-1], p[f"neck{li}.bw.wx"], p[f"neck{li}.bw.wh"], p[f"neck{li}.bw.b"]
            )
            neck.append((f_c, b_c))
            seq = np.concatenate([f_out, b_out[:, ::-1]], axis=2)
        logits = seq @ p["head.w"] + p["head.b"]
        self._cache = (caches, mask, feat_h, neck, seq) if train else None
        return logits

    def backward(self, dlogits) -> Dict[str, np.ndarray]:
        """Gradients of every parameter given dLoss/dlogits (N, T, V)."""
        if self._cache is None:
            raise NetworkError("backward called without a preceding train-mode forward")
        cfg = self.config
        p = self.params
        caches, mask, feat_h, neck, seq = self._cache
        dlogits = np.asarray(dlogits, dtype=np.float64)
        grads = {}
        n, T, V = dlogits.shape
        grads["head.w"] = seq.reshape(n * T, -1).T @ dlogits.reshape(n * T, V)
        grads["head.b"] = dlogits.sum(axis=(0, 1))
        dseq = dlogits @ p["head.w"].T
        H = cfg.hidden
        for li in range(cfg.layers - 1, -1, -1):
            f_c, b_c = neck[li]
            dx_f, grads[f"neck{li}.fw.wx"], grads[f"neck{li}.fw.wh"], grads[f"neck{li}.fw.b"] = lstm_backward(
                dseq[:, :, :H], f_c, p[f"neck{li}.fw.wx"], p[f"neck{li}.fw.wh"]
            )
            dx_b, grads[f"neck{li}.bw.wx"], grads[f"neck{li}.bw.wh"], grads[f"neck{li}.bw.b"] = lstm_backward(
                dseq[:, ::-1, H:], b_c, p[f"neck{li}.bw.wx"], p[f"neck{li}.bw.wh"]
            )
            dseq = dx_f + dx_b[:, ::-1]
        dx = np.repeat(dseq[:, None, :, :] / feat_h, feat_h, axis=1)
        drop_at = cfg.dropout_stage % len(cfg.stages)
        for si in range(len(cfg.stages) - 1, -1, -1):
            _, _, sh, sw = cfg.stages[si]
            cc, pre = caches[si]
            if si == drop_at and mask is not None:
                dx = dx * mask
            dpre = dx * hard_swish_grad(pre)
            dx, grads[f"stage{si}.w"], grads[f"stage{si}.b"] = conv_backward(
                dpre, cc, p[f"stage{si}.w"], sh, sw, need_dx=si > 0
            )
        return grads


def build(config: NetConfig) -> Network:
    return Network(config)


# -- checkpoints --------------------------------------------------------------------

MAGIC = b"CRNNCKPT"
FORMAT_VERSION = 1
_DTYPES = {1: "<f4", 2: "<f8"}
_DTYPE_CODES = {"float32": 1, "float64": 2}


def save_checkpoint(net: Network, path, dtype: str = "float64", extra=None) -> None:
    """Write ``net`` to ``path``.

    Layout (little-endian): magic, u32 version, u32 length + UTF-8 JSON header
    (config and ``extra``), u32 parameter count, then per parameter: u16 name
    length, name, u8 ndim, u32 dims, u8 dtype code, payload.
    """
    code = _DTYPE_CODES[dtype]
    header = json.dumps({"config": net.config.to_dict(), "extra": extra or {}}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(header)), header]
    names = sorted(net.params)
    parts.append(struct.pack("<I", len(names)))
    for name in names:
        arr = net.params[name]
        bname = name.encode()
        parts.append(struct.pack("<H", len(bname)) + bname)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(struct.pack("<B", code))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_checkpoint(path, vocab=None, return_extra=False):
    """Load a network saved by :func:`save_checkpoint`.

    ``vocab`` (e.g. ``charset.num_classes``) is checked against the stored
    configuration when given.
    """
    with open(path, "rb") as f:
        data = f.read()

    def corrupt(why):
        return CheckpointError(f"corrupt checkpoint {path}: {why}")

    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise corrupt("truncated")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(len(MAGIC)) != MAGIC:
        raise corrupt("bad magic")
    (version,) = struct.unpack("<I", take(4))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", take(4))
    try:
        header = json.loads(take(hlen).decode())
        config = NetConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise corrupt(f"bad header ({exc})") from None
    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        (code,) = struct.unpack("<B", take(1))
        if code not in _DTYPES:
            raise corrupt(f"unknown dtype code {code}")
        dt = np.dtype(_DTYPES[code])
        size = int(np.prod(shape)) * dt.itemsize
        params[name] = np.frombuffer(take(size), dtype=dt).reshape(shape).astype(np.float64)
    if pos != len(data):
        raise corrupt("trailing bytes")
    if vocab is not None and vocab != config.vocab:
        raise CheckpointError(
            f"checkpoint vocabulary size {config.vocab} does not match charset ({vocab} classes)"
        )
    net = Network(config, params)
    return (net, header.get("extra", {})) if return_extra else net
