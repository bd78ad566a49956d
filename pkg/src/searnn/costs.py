"""Sequence-level costs between a prediction and the ground truth (lower is better).

Every cost takes content tokens only (no BOS/EOS). The batch variants work on
padded integer arrays plus lengths and return one cost per row; they exist
because cost collection evaluates thousands of roll-outs per round.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Callable, Sequence

import numpy as np

from .exceptions import ContractError

__all__ = [
    "hamming_cost", "edit_distance", "edit_cost", "smoothed_bleu", "smoothed_bleu_cost",
    "bleu1", "hamming_batch", "edit_distance_batch", "CostFunction", "get_cost",
]


def hamming_cost(pred: Sequence, gt: Sequence) -> float:
    """Mismatched positions up to the longer length; overhang counts as errors."""
    n = min(len(pred), len(gt))
    diff = sum(1 for i in range(n) if pred[i] != gt[i])
    return float(diff + abs(len(pred) - len(gt)))


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit insert/delete/substitute."""
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def edit_cost(pred: Sequence, gt: Sequence) -> float:
    if len(gt) == 0:
        raise ContractError("edit_cost needs a non-empty ground truth")
    return edit_distance(pred, gt) / len(gt)


def _ngrams(seq, n):
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def _brevity_penalty(pred_len, gt_len):
    return min(1.0, math.exp(1.0 - gt_len / pred_len))


def smoothed_bleu(pred: Sequence, gt: Sequence, max_order: int = 4) -> float:
    """Sentence BLEU with add-one smoothing on orders >= 2.

    Unigram precision is left unsmoothed so disjoint sequences score 0, and
    orders the prediction is too short to contain are dropped from the mean.
    """
    if len(pred) == 0 or len(gt) == 0:
        raise ContractError("smoothed BLEU needs non-empty sequences")
    pred, gt = list(pred), list(gt)
    log_sum, levels = 0.0, 0
    for n in range(1, max_order + 1):
        hyp = _ngrams(pred, n)
        count = sum(hyp.values())
        if count == 0:
            continue
        ref = _ngrams(gt, n)
        match = sum(min(c, ref[g]) for g, c in hyp.items())
        if n == 1:
            if match == 0:
                return 0.0
            p = match / count
        else:
            p = (match + 1) / (count + 1)
        log_sum += math.log(p)
        levels += 1
    return _brevity_penalty(len(pred), len(gt)) * math.exp(log_sum / levels)


def smoothed_bleu_cost(pred: Sequence, gt: Sequence) -> float:
    return 1.0 - smoothed_bleu(pred, gt)


def bleu1(pred: Sequence, gt: Sequence) -> float:
    """Brevity penalty times clipped unigram precision."""
    if len(pred) == 0 or len(gt) == 0:
        raise ContractError("BLEU-1 needs non-empty sequences")
    ref = Counter(gt)
    match = sum(min(c, ref[g]) for g, c in Counter(pred).items())
    return _brevity_penalty(len(pred), len(gt)) * match / len(pred)


# ------------------------------------------------------------------ batched

def hamming_batch(pred, pred_len, gt, gt_len) -> np.ndarray:
    pred, gt = np.asarray(pred), np.asarray(gt)
    pred_len, gt_len = np.asarray(pred_len), np.asarray(gt_len)
    L = max(pred.shape[1], gt.shape[1])
    pos = np.arange(L)[None, :]
    p = np.full((len(pred), L), -1)
    g = np.full((len(gt), L), -2)
    p[:, :pred.shape[1]] = pred
    g[:, :gt.shape[1]] = gt
    p = np.where(pos < pred_len[:, None], p, -1)
    g = np.where(pos < gt_len[:, None], g, -2)
    live = pos < np.maximum(pred_len, gt_len)[:, None]
    return ((p != g) & live).sum(axis=1).astype(np.float64)


def edit_distance_batch(pred, pred_len, gt, gt_len) -> np.ndarray:
    """Row-wise Levenshtein distance, DP vectorized over rows."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    N, Lp = pred.shape
    Lg = gt.shape[1]
    D = np.empty((N, Lp + 1, Lg + 1), dtype=np.int64)
    D[:, 0, :] = np.arange(Lg + 1)
    D[:, :, 0] = np.arange(Lp + 1)
    for i in range(1, Lp + 1):
        neq = pred[:, i - 1, None] != gt
        for j in range(1, Lg + 1):
            D[:, i, j] = np.minimum(np.minimum(D[:, i - 1, j], D[:, i, j - 1]) + 1,
                                    D[:, i - 1, j - 1] + neq[:, j - 1])
    return D[np.arange(N), np.asarray(pred_len), np.asarray(gt_len)].astype(np.float64)


class CostFunction:
    """A named cost with a scalar form and an optional vectorized form."""

    def __init__(self, name: str, single: Callable, batch: Callable | None = None):
        self.name = name
        self.single = single
        self._batch = batch

    def __call__(self, pred, gt) -> float:
        return self.single(pred, gt)

    def __repr__(self):
        return f"CostFunction({self.name!r})"

    def batch(self, pred, pred_len, gt, gt_len) -> np.ndarray:
        if self._batch is not None:
            return self._batch(pred, pred_len, gt, gt_len)
        return np.array([self.single(list(p[:lp]), list(g[:lg]))
                         for p, lp, g, lg in zip(pred, pred_len, gt, gt_len)], dtype=np.float64)


def _edit_cost_batch(pred, pred_len, gt, gt_len):
    gt_len = np.asarray(gt_len)
    if np.any(gt_len == 0):
        raise ContractError("edit_cost needs a non-empty ground truth")
    return edit_distance_batch(pred, pred_len, gt, gt_len) / gt_len


def _bleu_cost_or_one(pred, gt):
    # An empty roll-out has no n-grams at all; score it as the worst outcome.
    return 1.0 if len(pred) == 0 else smoothed_bleu_cost(pred, gt)


COSTS = {
    "hamming": CostFunction("hamming", hamming_cost, hamming_batch),
    "edit": CostFunction("edit", edit_cost, _edit_cost_batch),
    "bleu": CostFunction("bleu", _bleu_cost_or_one),
}


def get_cost(name_or_fn) -> CostFunction:
    if isinstance(name_or_fn, CostFunction):
        return name_or_fn
    if callable(name_or_fn):
        return CostFunction(getattr(name_or_fn, "__name__", "custom"), name_or_fn)
    try:
        return COSTS[name_or_fn]
    except KeyError:
        raise ContractError(f"unknown cost {name_or_fn!r}; choose from {sorted(COSTS)}") from None
