"""Synthetic text-line corpora rendered from random bitmap glyphs.

Each character gets a random 7x5 bitmap, chosen so that any two glyphs
differ in at least ``MIN_GLYPH_DISTANCE`` cells. Lines are rendered at a
random integer scale with random spacing, margins and colours.
"""
from __future__ import annotations

import os

import numpy as np

from .charset import Sample, write_annotations
from .imaging import save_image
from .rng import stream

GLYPH_H, GLYPH_W = 7, 5
MIN_GLYPH_DISTANCE = 7
DEFAULT_ALPHABET = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ#%&@"


def alphabet(size: int) -> str:
    if size <= len(DEFAULT_ALPHABET):
        return DEFAULT_ALPHABET[:size]
    extra = "".join(chr(0x4E00 + i) for i in range(size - len(DEFAULT_ALPHABET)))
    return DEFAULT_ALPHABET + extra


def glyph_bank(chars: str, seed: int = 0) -> dict:
    rng = stream(seed, "glyphs")
    bank = {}
    patterns = []
    for ch in chars:
        for _ in range(10000):
            g = rng.random((GLYPH_H, GLYPH_W)) < 0.45
            # every glyph touches its left and right columns so widths stay uniform
            if not g[:, 0].any() or not g[:, -1].any():
                continue
            if all(np.count_nonzero(g != q) >= MIN_GLYPH_DISTANCE for q in patterns):
                break
        else:  # pragma: no cover
            raise RuntimeError("could not place distinct glyphs")
        patterns.append(g)
        bank[ch] = g
    return bank


def render_line(text: str, bank: dict, rng: np.random.Generator) -> np.ndarray:
    """Render ``text`` as an RGB ``uint8`` image. Spaces become blank cells."""
    scale = int(rng.integers(2, 4))
    gap = int(rng.integers(1, 2 * scale + 1))
    mx = int(rng.integers(2, 8))
    my_top = int(rng.integers(1, 5))
    my_bot = int(rng.integers(1, 5))
    cw, ch_ = GLYPH_W * scale, GLYPH_H * scale
    width = 2 * mx + len(text) * cw + max(0, len(text) - 1) * gap
    height = my_top + ch_ + my_bot
    bg = rng.integers(150, 256, size=3)
    fg = rng.integers(0, 90, size=3)
    img = np.empty((height, width, 3), dtype=np.float64)
    img[:] = bg
    x = mx
    for c in text:
        if c != " ":
            g = np.kron(bank[c], np.ones((scale, scale), dtype=bool))
            region = img[my_top : my_top + ch_, x : x + cw]
            region[g] = fg
        x += cw + gap
    img += rng.normal(0.0, 4.0, size=img.shape)
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


def random_labels(chars: str, n: int, min_len: int, max_len: int, rng) -> list:
    out = []
    for _ in range(n):
        k = int(rng.integers(min_len, max_len + 1))
        out.append("".join(chars[i] for i in rng.integers(0, len(chars), size=k)))
    return out


def make_corpus(
    out_dir,
    n: int = 500,
    vocab: int = 40,
    seed: int = 0,
    min_len: int = 3,
    max_len: int = 8,
    fmt: str = "ppm",
    annotation: str = "labels.tsv",
):
    """Write ``n`` rendered lines plus an annotation TSV into ``out_dir``.

    Returns the list of :class:`Sample` objects (absolute image paths).
    """
    chars = alphabet(vocab)
    bank = glyph_bank(chars, seed)
    rng = stream(seed, "labels")
    labels = random_labels(chars, n, min_len, max_len, rng)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    samples = []
    for i, label in enumerate(labels):
        img = render_line(label, bank, stream(seed, "render", i))
        path = os.path.join(img_dir, f"{i:06d}.{fmt}")
        save_image(path, img)
        samples.append(Sample(path, label, i + 1))
    write_annotations(os.path.join(out_dir, annotation), samples, root=out_dir)
    return samples


def make_examples(n: int, vocab: int = 40, seed: int = 0, min_len: int = 3, max_len: int = 8):
    """In-memory variant of :func:`make_corpus`: list of ``(image, label)``."""
    chars = alphabet(vocab)
    bank = glyph_bank(chars, seed)
    labels = random_labels(chars, n, min_len, max_len, stream(seed, "labels"))
    return [(render_line(lab, bank, stream(seed, "render", i)), lab) for i, lab in enumerate(labels)]
