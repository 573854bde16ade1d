"""Seeded augmentation chain for text-line images.

The production chain runs in a fixed order::

    height_crop -> cutout -> tia -> [rotate, color_jitter, pixel_reverse]
        -> resize -> gauss_noise -> motion_blur

Noise and blur come after the resize so a given kernel or noise level means
the same thing at every source resolution, and noise precedes blur. The
bracketed transforms are off by default.

Each stage draws from its own stream keyed by ``(seed, sample_index,
stage)``, so toggling one stage leaves the draws of the others untouched.
"""
from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import configio, imaging
from .rng import stream

STAGES = (
    "height_crop",
    "cutout",
    "tia",
    "random_rotate",
    "color_jitter",
    "pixel_reverse",
    "resize",
    "gauss_noise",
    "motion_blur",
)
TIA_MODES = ("distortion", "stretch", "perspective")
CONFIG_KIND = "augment"


class AugmentError(ValueError):
    pass


class AugmentWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AugmentConfig:
    target_h: int = 48
    target_w: int = 480
    channels: int = 1
    resize_policy: str = imaging.PAD_RIGHT
    prob: float = 0.4
    crop_ratio_max: float = 0.05
    cutout_count: tuple = (1, 3)
    cutout_ratio: tuple = (0.05, 0.1)
    tia_points: tuple = (3, 6)
    tia_modes: tuple = TIA_MODES
    noise_std: tuple = (0.0, 10.0)
    blur_kernel: tuple = (3, 7)
    jitter_range: tuple = (0.8, 1.2)
    rotate_degrees: float = 10.0
    height_crop: bool = True
    cutout: bool = True
    tia: bool = True
    gauss_noise: bool = True
    motion_blur: bool = True
    color_jitter: bool = False
    pixel_reverse: bool = False
    random_rotate: bool = False
    order: tuple = STAGES
    seed: int = 42

    def __post_init__(self):
        validate(self)

    def enabled(self, stage: str) -> bool:
        return stage == "resize" or bool(getattr(self, stage))

    def replace(self, **changes) -> "AugmentConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def disabled(cls, **kw) -> "AugmentConfig":
        off = {s: False for s in STAGES if s != "resize"}
        off.update(kw)
        return cls(**off)

    def to_text(self) -> str:
        return configio.dumps(CONFIG_KIND, configio.to_dict(self))

    @classmethod
    def from_text(cls, text: str) -> "AugmentConfig":
        return configio.from_dict(cls, configio.loads(text, CONFIG_KIND))


def _check_range(name, rng, lo_bound, hi_bound):
    lo, hi = rng
    if not (lo_bound <= lo <= hi <= hi_bound):
        raise AugmentError(f"{name}={rng} outside [{lo_bound}, {hi_bound}] or reversed")


def validate(cfg: AugmentConfig) -> None:
    if tuple(cfg.order) != STAGES:
        raise AugmentError(
            "stage order is fixed: " + " -> ".join(STAGES) + f"; got {tuple(cfg.order)}"
        )
    if cfg.target_h < 1 or cfg.target_w < 1:
        raise AugmentError("target size must be positive")
    if cfg.channels not in (1, 3):
        raise AugmentError("channels must be 1 or 3")
    if cfg.resize_policy not in (imaging.STRETCH, imaging.PAD_RIGHT):
        raise AugmentError(f"unknown resize policy {cfg.resize_policy!r}")
    if not 0.0 <= cfg.prob <= 1.0:
        raise AugmentError("prob must lie in [0, 1]")
    if not 0.0 <= cfg.crop_ratio_max < 1.0:
        raise AugmentError("crop_ratio_max must lie in [0, 1)")
    _check_range("cutout_count", cfg.cutout_count, 0, 16)
    _check_range("cutout_ratio", cfg.cutout_ratio, 0.0, 1.0)
    _check_range("tia_points", cfg.tia_points, 2, 64)
    _check_range("noise_std", cfg.noise_std, 0.0, 255.0)
    _check_range("blur_kernel", cfg.blur_kernel, 1, 63)
    _check_range("jitter_range", cfg.jitter_range, 0.0, 10.0)
    if cfg.blur_kernel[0] % 2 == 0 or cfg.blur_kernel[1] % 2 == 0:
        raise AugmentError("blur kernel sizes must be odd")
    if not cfg.tia_modes or any(m not in TIA_MODES for m in cfg.tia_modes):
        raise AugmentError(f"tia_modes must be a non-empty subset of {TIA_MODES}")
    if not 0.0 <= cfg.rotate_degrees < 90.0:
        raise AugmentError("rotate_degrees must lie in [0, 90)")


def sample_bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``img`` at float pixel-center coordinates, replicating edges."""
    h, w, _ = img.shape
    xs = np.clip(xs, 0.0, w - 1)
    ys = np.clip(ys, 0.0, h - 1)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    src = img.astype(np.float64)
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    return imaging.to_uint8(top * (1 - fy) + bot * fy)


# -- geometry ---------------------------------------------------------------


def random_height_crop(img, rng: np.random.Generator, ratio_max: float = 0.05) -> np.ndarray:
    """Drop ``r`` rows from the top or bottom, ``r`` uniform in
    ``[0, ratio_max * H]``."""
    img = imaging.check_image(img)
    h = img.shape[0]
    r = int(rng.integers(0, int(math.floor(ratio_max * h)) + 1))
    top = bool(rng.integers(0, 2))
    if r == 0 or r >= h:
        return img.copy()
    return img[r:].copy() if top else img[: h - r].copy()


def cutout(img, rng: np.random.Generator, count_range=(1, 3), ratio_range=(0.05, 0.1)) -> np.ndarray:
    img = imaging.check_image(img)
    out = img.copy()
    h, w, c = img.shape
    k = int(rng.integers(count_range[0], count_range[1] + 1))
    for _ in range(k):
        ratio = rng.uniform(ratio_range[0], ratio_range[1])
        rh = min(h, max(1, int(math.floor(ratio * h))))
        rw = min(w, max(1, int(math.floor(ratio * w))))
        y = int(rng.integers(0, h - rh + 1))
        x = int(rng.integers(0, w - rw + 1))
        color = rng.integers(0, 256, size=c).astype(np.uint8)
        out[y : y + rh, x : x + rw] = color
    return out


def _fiducials(h, w, n):
    xs = np.linspace(0.0, w - 1, n)
    top = np.stack([xs, np.zeros(n)], axis=1)
    bottom = np.stack([xs, np.full(n, h - 1.0)], axis=1)
    return top, bottom


def tia_jitter(h, w, n, mode, rng: np.random.Generator):
    """Return ``(src_top, src_bottom, dst_top, dst_bottom)`` point rows.

    The horizontal jitter radius is ``W / (4n)``; the vertical one is capped
    at ``H / 8`` so the top and bottom rows can never cross and the mesh
    triangles keep their orientation.
    """
    rx = w / (4.0 * n)
    ry = min(rx, h / 8.0)
    top, bottom = _fiducials(h, w, n)
    if mode == "perspective":
        top, bottom = _fiducials(h, w, 2)
        d = rng.uniform(-1.0, 1.0, size=(4, 2)) * (rx, ry)
        dtop = top + d[:2]
        dbottom = bottom + d[2:]
    elif mode == "stretch":
        dx = rng.uniform(-rx, rx, size=(2, n))
        dtop = top + np.stack([dx[0], np.zeros(n)], axis=1)
        dbottom = bottom + np.stack([dx[1], np.zeros(n)], axis=1)
    elif mode == "distortion":
        d = rng.uniform(-1.0, 1.0, size=(2, n, 2)) * (rx, ry)
        dtop = top + d[0]
        dbottom = bottom + d[1]
    else:
        raise AugmentError(f"unknown TIA mode {mode!r}")
    return top, bottom, dtop, dbottom


def piecewise_affine(img, src_top, src_bottom, dst_top, dst_bottom) -> np.ndarray:
    """Warp so that the mesh ``src`` lands on ``dst``.

    The two point rows define a strip of quads, each split into two
    triangles. Every output pixel is mapped back through the affine map of
    the triangle containing it (or, outside the mesh, the triangle it is
    least outside of) and sampled bilinearly.
    """
    h, w, _ = img.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    px = xs.ravel()
    py = ys.ravel()
    best = np.full(px.shape, -np.inf)
    sx = np.zeros_like(px)
    sy = np.zeros_like(py)
    for i in range(len(src_top) - 1):
        for dst, src in (
            ((dst_top[i], dst_top[i + 1], dst_bottom[i]), (src_top[i], src_top[i + 1], src_bottom[i])),
            ((dst_top[i + 1], dst_bottom[i + 1], dst_bottom[i]), (src_top[i + 1], src_bottom[i + 1], src_bottom[i])),
        ):
            a, b, c = (np.asarray(p, dtype=np.float64) for p in dst)
            det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
            if abs(det) < 1e-12:
                continue
            l1 = ((px - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (py - a[1])) / det
            l2 = ((b[0] - a[0]) * (py - a[1]) - (px - a[0]) * (b[1] - a[1])) / det
            l0 = 1.0 - l1 - l2
            score = np.minimum(np.minimum(l0, l1), l2)
            take = score > best
            best = np.where(take, score, best)
            A, B, C = (np.asarray(p, dtype=np.float64) for p in src)
            sx = np.where(take, l0 * A[0] + l1 * B[0] + l2 * C[0], sx)
            sy = np.where(take, l0 * A[1] + l1 * B[1] + l2 * C[1], sy)
    return sample_bilinear(img, sx.reshape(h, w), sy.reshape(h, w))


def tia_distort(img, rng: np.random.Generator, points_range=(3, 6), mode="distortion") -> np.ndarray:
    """Jitter ``n`` fiducial points on the top and bottom edges and warp.

    ``n`` is drawn from ``points_range``. Images narrower than ``2n`` or
    shorter than 4 rows are returned unchanged with an :class:`AugmentWarning`.
    """
    img = imaging.check_image(img)
    h, w, _ = img.shape
    n = int(rng.integers(points_range[0], points_range[1] + 1))
    if w < 2 * n or h < 4:
        warnings.warn(f"image {h}x{w} too small for TIA with {n} points", AugmentWarning)
        return img.copy()
    return piecewise_affine(img, *tia_jitter(h, w, n, mode, rng))


# -- photometric --------------------------------------------------------------


def gauss_noise(img, rng: np.random.Generator, std_range=(0.0, 10.0), std=None) -> np.ndarray:
    """Add zero-mean Gaussian noise; the std is drawn once per image."""
    img = imaging.check_image(img)
    if std is None:
        std = rng.uniform(std_range[0], std_range[1])
    if std == 0:
        return img.copy()
    noise = rng.normal(0.0, std, size=img.shape)
    return imaging.to_uint8(img.astype(np.float64) + noise)


def motion_kernel(size: int, angle_deg: float) -> np.ndarray:
    """Line of ``size`` taps through the kernel center at ``angle_deg``,
    each tap splatted bilinearly onto the grid, normalized to sum 1."""
    if size < 1 or size % 2 == 0:
        raise AugmentError("motion blur kernel size must be odd and positive")
    k = np.zeros((size, size))
    c = (size - 1) / 2.0
    theta = math.radians(angle_deg)
    ct, st = math.cos(theta), math.sin(theta)
    for s in np.arange(size) - c:
        x = c + s * ct
        y = c - s * st
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        fx, fy = x - x0, y - y0
        for yy, wy in ((y0, 1 - fy), (y0 + 1, fy)):
            for xx, wx in ((x0, 1 - fx), (x0 + 1, fx)):
                if wx * wy > 0 and 0 <= yy < size and 0 <= xx < size:
                    k[yy, xx] += wx * wy
    return k / k.sum()


def convolve_replicate(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    src = img.astype(np.float64)
    out = np.empty_like(src)
    for ch in range(src.shape[2]):
        out[:, :, ch] = ndimage.correlate(src[:, :, ch], kernel, mode="nearest")
    return imaging.to_uint8(out)


def motion_blur(img, rng: np.random.Generator, kernel_range=(3, 7), size=None, angle=None) -> np.ndarray:
    img = imaging.check_image(img)
    if size is None:
        sizes = np.arange(kernel_range[0], kernel_range[1] + 1, 2)
        size = int(sizes[rng.integers(0, len(sizes))])
    if angle is None:
        angle = rng.uniform(0.0, 180.0)
    return convolve_replicate(img, motion_kernel(size, angle))


# -- optional transforms (default off) -------------------------------------------


def pixel_reverse(img, rng=None) -> np.ndarray:
    return (255 - imaging.check_image(img)).astype(np.uint8)


def random_rotate(img, rng: np.random.Generator, max_degrees=10.0, angle=None) -> np.ndarray:
    """Rotate about the center by an angle in ``(-max_degrees, max_degrees)``,
    shrinking so the whole rotated source stays inside the frame."""
    img = imaging.check_image(img)
    if angle is None:
        angle = rng.uniform(-max_degrees, max_degrees)
    if angle == 0:
        return img.copy()
    h, w, _ = img.shape
    t = math.radians(angle)
    ct, st = math.cos(t), math.sin(t)
    scale = min(w / (w * abs(ct) + h * abs(st)), h / (w * abs(st) + h * abs(ct)))
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = (xs - cx) / scale, (ys - cy) / scale
    sx = ct * dx + st * dy + cx
    sy = -st * dx + ct * dy + cy
    return sample_bilinear(img, sx, sy)


def color_jitter(img, rng: np.random.Generator, factor_range=(0.8, 1.2), brightness=None, contrast=None) -> np.ndarray:
    """Scale brightness, then contrast around the image mean."""
    img = imaging.check_image(img)
    if brightness is None:
        brightness = rng.uniform(*factor_range)
    if contrast is None:
        contrast = rng.uniform(*factor_range)
    if brightness == 1 and contrast == 1:
        return img.copy()
    x = img.astype(np.float64) * brightness
    m = x.mean()
    return imaging.to_uint8((x - m) * contrast + m)


# -- pipeline -------------------------------------------------------------------


def _run_stage(stage, img, cfg: AugmentConfig, rng, target):
    if stage == "height_crop":
        return random_height_crop(img, rng, cfg.crop_ratio_max)
    if stage == "cutout":
        return cutout(img, rng, cfg.cutout_count, cfg.cutout_ratio)
    if stage == "tia":
        mode = cfg.tia_modes[int(rng.integers(0, len(cfg.tia_modes)))]
        return tia_distort(img, rng, cfg.tia_points, mode)
    if stage == "random_rotate":
        return random_rotate(img, rng, cfg.rotate_degrees)
    if stage == "color_jitter":
        return color_jitter(img, rng, cfg.jitter_range)
    if stage == "pixel_reverse":
        return pixel_reverse(img)
    if stage == "gauss_noise":
        return gauss_noise(img, rng, cfg.noise_std)
    if stage == "motion_blur":
        return motion_blur(img, rng, cfg.blur_kernel)
    raise AugmentError(f"unknown stage {stage!r}")


def prepare(img, cfg: AugmentConfig, target=None) -> np.ndarray:
    """Resize and channel-convert only (the evaluation path)."""
    th, tw = target or (cfg.target_h, cfg.target_w)
    out = imaging.resize_to(imaging.check_image(img), th, tw, cfg.resize_policy)
    return imaging.to_channels(out, cfg.channels)


def apply_pipeline(img, cfg: AugmentConfig, seed=None, index: int = 0, target=None) -> np.ndarray:
    """Run the augmentation chain on one image.

    The output is fully determined by ``(img, cfg, seed, index)``; ``seed``
    defaults to ``cfg.seed``. ``target`` overrides the configured output
    size (used by multi-scale training).
    """
    seed = cfg.seed if seed is None else seed
    out = imaging.check_image(img)
    for stage in STAGES:
        if stage == "resize":
            out = prepare(out, cfg, target)
            continue
        if not cfg.enabled(stage):
            continue
        rng = stream(seed, index, stage)
        if rng.random() < cfg.prob:
            out = _run_stage(stage, out, cfg, rng, target)
    return out
