"""Connectionist temporal classification: loss, gradient and decoders.

Probabilities are ``(T, V)`` matrices of per-step log-probabilities with the
blank at column 0. The dynamic programs run in the log domain; only the
brute-force oracle multiplies plain probabilities.
"""
from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

BLANK = 0
NEG_INF = -np.inf
ROW_TOL = 1e-6
BRUTE_FORCE_LIMIT = 10**6


class CtcError(ValueError):
    pass


@dataclass
class CtcResult:
    loss: float
    grad: np.ndarray
    infeasible: bool = False


def log_softmax(logits, axis=-1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    m = np.max(logits, axis=axis, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def check_log_probs(log_probs) -> np.ndarray:
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim != 2 or lp.shape[0] < 1 or lp.shape[1] < 2:
        raise CtcError(f"expected a (T, V) matrix with T >= 1, V >= 2; got {lp.shape}")
    if np.isnan(lp).any() or (lp > 0).any():
        raise CtcError("log-probabilities must be <= 0 and not NaN")
    norm = np.logaddexp.reduce(lp, axis=1)
    if np.max(np.abs(norm)) > ROW_TOL:
        raise CtcError("rows are not normalized distributions")
    return lp


def collapse(path: Sequence[int]) -> List[int]:
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for k in path:
        k = int(k)
        if k != prev and k != BLANK:
            out.append(k)
        prev = k
    return out


def min_frames(label: Sequence[int]) -> int:
    """Shortest input that can emit ``label``: one frame per symbol plus a
    separating blank between each pair of equal neighbours."""
    label = list(label)
    return len(label) + sum(1 for a, b in zip(label, label[1:]) if a == b)


def _check_label(label, V) -> np.ndarray:
    lab = np.asarray(label, dtype=np.intp).reshape(-1)
    if lab.size and (lab.min() < 1 or lab.max() >= V):
        raise CtcError(f"label indices must lie in [1, {V})")
    return lab


def ctc_loss(log_probs, label: Sequence[int]) -> CtcResult:
    """Negative log-likelihood of ``label`` and its gradient wrt the logits.

    The gradient assumes ``log_probs = log_softmax(logits)``; it equals
    ``softmax - occupancy`` where occupancy is the posterior probability of
    emitting each symbol at each step. An infeasible label (too few frames)
    gives an infinite loss, a zero gradient and ``infeasible=True``.
    """
    lp = check_log_probs(log_probs)
    T, V = lp.shape
    lab = _check_label(label, V)
    if min_frames(lab) > T:
        return CtcResult(math.inf, np.zeros_like(lp), True)

    L = lab.size
    S = 2 * L + 1
    ext = np.zeros(S, dtype=np.intp)
    ext[1::2] = lab
    # skip transition s-2 -> s allowed for labels that differ from the one two back
    skip = np.zeros(S, dtype=bool)
    if L > 1:
        skip[3::2] = lab[1:] != lab[:-1]

    emit = lp[:, ext]  # (T, S)
    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]

    # beta[t, s]: log prob of frames t+1.. given state s at frame t
    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc

    if S > 1:
        log_p = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    else:
        log_p = alpha[T - 1, 0]
    if not np.isfinite(log_p):
        return CtcResult(math.inf, np.zeros_like(lp), True)

    post = alpha + beta - log_p  # log occupancy per (t, s)
    occ = np.zeros((T, V))
    with np.errstate(under="ignore"):
        np.add.at(occ, (slice(None), ext), np.exp(post))
    grad = np.exp(lp) - occ
    return CtcResult(float(-log_p), grad, False)


def ctc_loss_from_logits(logits, label) -> CtcResult:
    return ctc_loss(log_softmax(logits), label)


def _label_marginals(log_probs) -> dict:
    """Exact probability of every label, by enumerating all V**T paths."""
    lp = check_log_probs(log_probs)
    T, V = lp.shape
    if V**T > BRUTE_FORCE_LIMIT:
        raise CtcError(f"instance too large for brute force: V^T = {V**T}")
    probs = np.exp(lp)
    paths = np.array(list(itertools.product(range(V), repeat=T)), dtype=np.intp)
    path_p = np.prod(probs[np.arange(T), paths], axis=1)
    totals = {}
    for path, p in zip(paths, path_p):
        key = tuple(collapse(path))
        totals[key] = totals.get(key, 0.0) + p
    return totals


def label_marginals(log_probs) -> dict:
    return _label_marginals(log_probs)


def brute_force_loss(log_probs, label: Sequence[int]) -> float:
    """``-log`` of the summed probability of all paths collapsing to ``label``."""
    total = _label_marginals(log_probs).get(tuple(int(k) for k in label), 0.0)
    return math.inf if total == 0.0 else -math.log(total)


def greedy_decode(log_probs) -> List[int]:
    lp = np.asarray(log_probs, dtype=np.float64)
    return collapse(np.argmax(lp, axis=1))


def _lae(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def _rank_key(prefix, score):
    # highest score first, then shorter prefix, then lexicographic
    return (-score, len(prefix), prefix)


def beam_search_decode(log_probs, width: int) -> List[int]:
    """Prefix beam search.

    Each prefix keeps the log mass of paths ending in blank and of paths
    ending in its last symbol; after every step the ``width`` prefixes with
    the largest total mass survive.
    """
    if width < 1:
        raise CtcError("beam width must be >= 1")
    lp = np.asarray(log_probs, dtype=np.float64)
    T, V = lp.shape
    NEG = -math.inf
    beams = {(): (0.0, NEG)}  # prefix -> (log p_blank, log p_nonblank)
    for t in range(T):
        row = lp[t].tolist()
        nxt = {}

        def add(prefix, pb, pnb):
            ob, onb = nxt.get(prefix, (NEG, NEG))
            nxt[prefix] = (_lae(ob, pb), _lae(onb, pnb))

        for prefix, (pb, pnb) in beams.items():
            total = _lae(pb, pnb)
            add(prefix, total + row[BLANK], NEG)
            last = prefix[-1] if prefix else None
            if last is not None:
                add(prefix, NEG, pnb + row[last])
            for k in range(1, V):
                if k == last:
                    add(prefix + (k,), NEG, pb + row[k])
                else:
                    add(prefix + (k,), NEG, total + row[k])
        ranked = sorted(nxt.items(), key=lambda kv: _rank_key(kv[0], _lae(*kv[1])))
        beams = dict(ranked[:width])
    best = min(beams.items(), key=lambda kv: _rank_key(kv[0], _lae(*kv[1])))
    return list(best[0])


def path_score(log_probs) -> float:
    """Mean over steps of the best per-step log-probability."""
    lp = np.asarray(log_probs, dtype=np.float64)
    return float(np.mean(np.max(lp, axis=1)))


# Serialized LogProbMatrix: little-endian int32 T, int32 V, then T*V float64.
def write_matrix(path, log_probs) -> None:
    lp = np.ascontiguousarray(log_probs, dtype="<f8")
    T, V = lp.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<ii", T, V))
        f.write(lp.tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8:
        raise CtcError("truncated matrix header")
    T, V = struct.unpack("<ii", data[:8])
    if T < 1 or V < 2:
        raise CtcError(f"bad matrix dimensions T={T} V={V}")
    need = 8 + 8 * T * V
    if len(data) != need:
        raise CtcError(f"matrix payload size {len(data) - 8} != {8 * T * V}")
    return np.frombuffer(data[8:], dtype="<f8").reshape(T, V).astype(np.float64)
