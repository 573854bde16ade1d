"""Space-insensitive sequence accuracy, evaluation reports and multi-scale TTA."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List

import numpy as np

from . import ctc
from .augment import AugmentConfig, prepare
from .charset import Charset, decode_indices, strip_spaces
from .dataset import label_length

GREEDY = "greedy"
BEAM = "beam"
BEST_SCORE = "best_score"
AVG_PROB = "avg_prob"
DEFAULT_TTA_SCALES = ((32, 320), (48, 480), (64, 640))


class EvalError(ValueError):
    pass


def sequence_accuracy(pred: str, truth: str) -> int:
    return int(strip_spaces(pred) == strip_spaces(truth))


@dataclass
class EvalReport:
    n_samples: int
    n_correct: int
    accuracy: float
    per_length: Dict[int, List[int]]  # length -> [count, correct]
    mode: str
    beam_width: int = 0
    unreadable: List[str] = field(default_factory=list)
    predictions: List[tuple] = field(default_factory=list, repr=False)

    def to_dict(self, with_predictions=False) -> dict:
        d = asdict(self)
        d["per_length"] = {str(k): v for k, v in sorted(self.per_length.items())}
        if not with_predictions:
            d.pop("predictions")
        return d

    def table(self) -> str:
        lines = [
            f"mode      {self.mode}" + (f" (width {self.beam_width})" if self.mode == BEAM else ""),
            f"samples   {self.n_samples}",
            f"correct   {self.n_correct}",
            f"accuracy  {self.accuracy:.4f}",
            "length  count  correct  acc",
        ]
        for k, (n, c) in sorted(self.per_length.items()):
            lines.append(f"{k:>6}  {n:>5}  {c:>7}  {c / n:.3f}")
        if self.unreadable:
            lines.append(f"unreadable: {len(self.unreadable)}")
        return "\n".join(lines)


def decode(log_probs, charset: Charset, mode: str = GREEDY, beam_width: int = 8) -> str:
    if mode == GREEDY:
        idx = ctc.greedy_decode(log_probs)
    elif mode == BEAM:
        idx = ctc.beam_search_decode(log_probs, beam_width)
    else:
        raise EvalError(f"unknown decode mode {mode!r}")
    return decode_indices(charset, idx)


def compute_log_probs(net, images, aug: AugmentConfig, scale=None, batch_size: int = 32):
    """Eval-mode log-probabilities for raw images, resized to ``scale``."""
    out = []
    for start in range(0, len(images), batch_size):
        chunk = [prepare(img, aug, scale) for img in images[start : start + batch_size]]
        logits = net.forward(np.stack(chunk), mode="eval")
        out.extend(ctc.log_softmax(logits))
    return out


def evaluate(net, examples, charset: Charset, aug: AugmentConfig, modes=(GREEDY,), beam_width: int = 8,
             batch_size: int = 32, keep_predictions: bool = False) -> Dict[str, EvalReport]:
    """Decode every example once per mode from a single set of logits.

    Unreadable examples count as wrong and are listed in the report.
    """
    if not examples:
        raise EvalError("empty eval set")
    readable = [e for e in examples if e.readable]
    lps = compute_log_probs(net, [e.image for e in readable], aug, batch_size=batch_size)
    by_id = {id(e): lp for e, lp in zip(readable, lps)}
    reports = {}
    for mode in modes:
        per_length: Dict[int, List[int]] = {}
        correct = 0
        preds = []
        for e in examples:
            lp = by_id.get(id(e))
            pred = "" if lp is None else decode(lp, charset, mode, beam_width)
            ok = 0 if lp is None else sequence_accuracy(pred, e.text)
            correct += ok
            bucket = per_length.setdefault(label_length(e.text), [0, 0])
            bucket[0] += 1
            bucket[1] += ok
            preds.append((e.path, e.text, pred, ok))
        reports[mode] = EvalReport(
            n_samples=len(examples),
            n_correct=correct,
            accuracy=correct / len(examples),
            per_length=per_length,
            mode=mode,
            beam_width=beam_width if mode == BEAM else 0,
            unreadable=[e.path for e in examples if not e.readable],
            predictions=preds if keep_predictions else [],
        )
    return reports


def accuracy(net, examples, charset: Charset, aug: AugmentConfig, scale=None) -> float:
    lps = compute_log_probs(net, [e.image for e in examples], aug, scale)
    hits = sum(sequence_accuracy(decode(lp, charset), e.text) for lp, e in zip(lps, examples))
    return hits / len(examples)


def resample_steps(log_probs, steps: int) -> np.ndarray:
    """Nearest-step resampling of a (T, V) matrix to ``steps`` rows."""
    T = log_probs.shape[0]
    idx = np.minimum(((np.arange(steps) + 0.5) * T / steps).astype(np.intp), T - 1)
    return log_probs[idx]


def tta_decode(net, image, charset: Charset, aug: AugmentConfig, scales=DEFAULT_TTA_SCALES,
               strategy: str = BEST_SCORE, mode: str = GREEDY, beam_width: int = 8) -> str:
    """Decode one image at several input scales.

    ``best_score`` keeps the prediction whose mean per-step max
    log-probability is highest (first scale wins ties); ``avg_prob``
    resamples every scale's output to the middle scale's length, averages
    the probabilities and decodes once.
    """
    scales = [tuple(s) for s in scales]
    if not scales:
        raise EvalError("at least one scale is required")
    for h, w in scales:
        if h % net.config.stride_h or w < net.config.stride_w:
            raise EvalError(f"scale {(h, w)} incompatible with the network stride plan")
    lps = [compute_log_probs(net, [image], aug, scale=s)[0] for s in scales]
    if strategy == BEST_SCORE:
        scores = [ctc.path_score(lp) for lp in lps]
        best = int(np.argmax(scores))
        return decode(lps[best], charset, mode, beam_width)
    if strategy == AVG_PROB:
        ref = lps[len(lps) // 2].shape[0]
        probs = np.mean([np.exp(resample_steps(lp, ref)) for lp in lps], axis=0)
        with np.errstate(divide="ignore"):  # log(0) = -inf is a valid entry
            avg = np.log(probs)
        return decode(avg, charset, mode, beam_width)
    raise EvalError(f"unknown TTA strategy {strategy!r}")


def write_predictions(path, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for p, truth, pred, ok in report.predictions:
            f.write(f"{p}\t{truth}\t{pred}\t{ok}\n")


def write_report(path, reports: Dict[str, EvalReport]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump({m: r.to_dict() for m, r in reports.items()}, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
