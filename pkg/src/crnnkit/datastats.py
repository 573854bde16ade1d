"""Corpus analysis: splits, character frequency, label lengths, image sizes.

Reports are written as ``report.json``, ``report.csv`` and a few SVG charts
(label length histogram, image height histogram, width/height scatter).
"""
from __future__ import annotations

import csv
import json
import math
import os
import shutil
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List

from .charset import SPACE, Sample, strip_spaces, write_annotations
from .imaging import ImageError, load_image
from .rng import stream

BUCKETS = ("1", "2-10", "11-100", "101-1000", "1001+")
HEIGHT_THRESHOLDS = (32, 48, 64)


class StatsError(ValueError):
    pass


def _label(s) -> str:
    return s if isinstance(s, str) else s.label


def bucket_of(count: int) -> str:
    if count <= 1:
        return "1"
    if count <= 10:
        return "2-10"
    if count <= 100:
        return "11-100"
    if count <= 1000:
        return "101-1000"
    return "1001+"


@dataclass
class FrequencyBuckets:
    counts: Dict[str, int]
    total: int

    def as_tuple(self):
        """Counts from the most to the least frequent bucket."""
        return tuple(self.counts[b] for b in reversed(BUCKETS))


def split_train_val(samples, ratio: float = 0.9, seed: int = 42):
    """Seeded random split; ``round(ratio * N)`` samples go to train.

    Both parts keep the original sample order.
    """
    samples = list(samples)
    n = len(samples)
    if n < 2:
        raise StatsError("need at least two samples to split")
    if not 0.0 < ratio < 1.0:
        raise StatsError("ratio must lie strictly between 0 and 1")
    n_train = min(n - 1, max(1, int(math.floor(ratio * n + 0.5))))
    perm = stream(seed, "split").permutation(n)
    train_idx = sorted(perm[:n_train].tolist())
    val_idx = sorted(perm[n_train:].tolist())
    return [samples[i] for i in train_idx], [samples[i] for i in val_idx]


def char_counts(samples) -> Counter:
    c = Counter()
    for s in samples:
        c.update(ch for ch in _label(s) if ch != SPACE)
    return c


def char_frequency_report(samples) -> FrequencyBuckets:
    samples = list(samples)
    if not samples:
        raise StatsError("empty sample set")
    counts = {b: 0 for b in BUCKETS}
    cc = char_counts(samples)
    for n in cc.values():
        counts[bucket_of(n)] += 1
    return FrequencyBuckets(counts, len(cc))


def length_histogram(samples) -> Dict[int, int]:
    hist = Counter(len(strip_spaces(_label(s))) for s in samples)
    return dict(sorted(hist.items()))


def _image_size(path):
    try:
        img = load_image(path)
    except (OSError, ImageError) as exc:
        return None, str(exc)
    return (int(img.shape[1]), int(img.shape[0])), ""


def image_geometry_report(samples, workers: int = 4) -> dict:
    """Width/height of every readable image and the share of heights above
    32, 48 and 64 px. Unreadable images are listed, not counted."""
    samples = list(samples)
    paths = [s.path for s in samples]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(_image_size, paths))
    sizes, failures = [], []
    for s, (size, err) in zip(samples, results):
        if size is None:
            failures.append({"path": s.path, "line": s.line, "error": err})
        else:
            sizes.append(size)
    heights = [h for _, h in sizes]
    frac = {
        f">{t}": (sum(1 for h in heights if h > t) / len(heights) if heights else 0.0)
        for t in HEIGHT_THRESHOLDS
    }
    return {"sizes": sizes, "height_fractions": frac, "unreadable": failures}


def export_label_audit_sample(samples, n: int, seed: int, out_dir) -> List[Sample]:
    """Copy ``n`` seeded-random samples and their labels into ``out_dir``
    (``labels.tsv`` plus the image files) for manual inspection."""
    samples = list(samples)
    if n > len(samples) or n < 0:
        raise StatsError(f"cannot draw {n} samples from {len(samples)}")
    os.makedirs(out_dir, exist_ok=True)
    pick = sorted(stream(seed, "audit").permutation(len(samples))[:n].tolist())
    exported = []
    for k, i in enumerate(pick):
        s = samples[i]
        name = f"{k:05d}_{os.path.basename(s.path)}"
        shutil.copyfile(s.path, os.path.join(out_dir, name))
        exported.append(Sample(name, s.label, s.line))
    write_annotations(os.path.join(out_dir, "labels.tsv"), exported, root=out_dir)
    return exported


@dataclass
class CorpusReport:
    distinct_chars: Dict[str, int]
    frequency: Dict[str, Dict[str, int]]
    length_histogram: Dict[int, int]
    max_length: int
    n_samples: int
    height_fractions: Dict[str, float] = field(default_factory=dict)
    sizes: List[tuple] = field(default_factory=list)
    unreadable: List[dict] = field(default_factory=list)
    seed: int = 42

    def to_dict(self) -> dict:
        d = asdict(self)
        d["length_histogram"] = {str(k): v for k, v in self.length_histogram.items()}
        d["sizes"] = [list(s) for s in self.sizes]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusReport":
        d = dict(d)
        d["length_histogram"] = {int(k): v for k, v in d["length_histogram"].items()}
        d["sizes"] = [tuple(s) for s in d["sizes"]]
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def corpus_report(splits: Dict[str, list], geometry_split: str = None, workers: int = 4,
                  scan_images: bool = True, seed: int = 42) -> CorpusReport:
    """Build a report over named splits (e.g. ``{"train": ..., "val": ...}``).

    Length and image statistics are taken from ``geometry_split`` (default:
    the first split); character statistics are given per split and for
    their union as ``"total"``.
    """
    if not splits:
        raise StatsError("no splits given")
    names = list(splits)
    geometry_split = geometry_split or names[0]
    distinct, freq = {}, {}
    everything = []
    for name in names:
        fb = char_frequency_report(splits[name])
        distinct[name] = fb.total
        freq[name] = fb.counts
        everything.extend(splits[name])
    if len(names) > 1:
        fb = char_frequency_report(everything)
        distinct["total"] = fb.total
        freq["total"] = fb.counts
    hist = length_histogram(splits[geometry_split])
    report = CorpusReport(
        distinct_chars=distinct,
        frequency=freq,
        length_histogram=hist,
        max_length=max(hist) if hist else 0,
        n_samples=len(splits[geometry_split]),
        seed=seed,
    )
    if scan_images:
        geo = image_geometry_report(splits[geometry_split], workers)
        report.height_fractions = geo["height_fractions"]
        report.sizes = [tuple(s) for s in geo["sizes"]]
        report.unreadable = geo["unreadable"]
    return report


# -- output -------------------------------------------------------------------------


def _svg_bars(title, labels, values, xlabel):
    w, h, pad = 640, 360, 48
    n = max(1, len(values))
    top = max(values) if values else 1
    bw = (w - 2 * pad) / n
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{w / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{w / 2}" y="{h - 6}" text-anchor="middle" font-size="11">{xlabel}</text>',
    ]
    for i, (lab, v) in enumerate(zip(labels, values)):
        bh = 0 if top == 0 else (h - 2 * pad) * v / top
        x = pad + i * bw
        out.append(
            f'<rect x="{x:.2f}" y="{h - pad - bh:.2f}" width="{max(bw - 1, 0.5):.2f}" height="{bh:.2f}" fill="#4c72b0">'
            f"<title>{lab}: {v}</title></rect>"
        )
        if n <= 40 or i % max(1, n // 20) == 0:
            out.append(f'<text x="{x + bw / 2:.2f}" y="{h - pad + 12}" text-anchor="middle" font-size="9">{lab}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _svg_scatter(title, points):
    w, h, pad = 640, 480, 48
    mx = max((p[0] for p in points), default=1) or 1
    my = max((p[1] for p in points), default=1) or 1
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{w / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{w / 2}" y="{h - 6}" text-anchor="middle" font-size="11">width (max {mx})</text>',
        f'<text x="12" y="{h / 2}" font-size="11" transform="rotate(-90 12 {h / 2})">height (max {my})</text>',
    ]
    for x, y in points:
        cx = pad + (w - 2 * pad) * x / mx
        cy = h - pad - (h - 2 * pad) * y / my
        out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="1.5" fill="#dd8452" fill-opacity="0.6"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_report(report: CorpusReport, out_dir) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def path(name):
        p = os.path.join(out_dir, name)
        written.append(p)
        return p

    with open(path("report.json"), "w", encoding="utf-8", newline="\n") as f:
        f.write(report.to_json())
    with open(path("report.csv"), "w", encoding="utf-8", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["section", "key", "value"])
        for split, n in report.distinct_chars.items():
            wr.writerow(["distinct_chars", split, n])
        for split, counts in report.frequency.items():
            for b in BUCKETS:
                wr.writerow([f"frequency:{split}", b, counts[b]])
        for k, v in report.length_histogram.items():
            wr.writerow(["length", k, v])
        for k, v in report.height_fractions.items():
            wr.writerow(["height_fraction", k, f"{v:.6f}"])
        wr.writerow(["max_length", "", report.max_length])
        wr.writerow(["unreadable", "", len(report.unreadable)])
    lh = report.length_histogram
    with open(path("length_hist.svg"), "w", encoding="utf-8") as f:
        f.write(_svg_bars("Label length", list(lh), list(lh.values()), "characters"))
    if report.sizes:
        heights = Counter(h for _, h in report.sizes)
        keys = sorted(heights)
        with open(path("height_hist.svg"), "w", encoding="utf-8") as f:
            f.write(_svg_bars("Image height", keys, [heights[k] for k in keys], "pixels"))
        with open(path("scale_scatter.svg"), "w", encoding="utf-8") as f:
            f.write(_svg_scatter("Image scale", report.sizes))
    return written
