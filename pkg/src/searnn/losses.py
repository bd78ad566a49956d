"""Cost-sensitive per-cell losses.

Each function takes the scores of one cell for a batch of rows, shape (B, A)
(a 1-D vector is treated as B=1), and a constant cost array of the same shape
in which NaN marks tokens without a roll-out. ``weights`` (B,) switches rows
on and off, which is how padded cells and unsampled cells are masked. The
return value is the weighted sum over rows, a scalar Tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .exceptions import ContractError

LOSS_KINDS = ("mle", "ll", "kl", "llcas", "shl", "consistent", "sll", "skl")
_NEEDS_ALPHA = ("kl", "llcas", "skl")
_ALIASES = {"sampledll": "sll", "sampled_ll": "sll", "sampledkl": "skl", "sampled_kl": "skl"}


def canonical_kind(kind: str) -> str:
    return _ALIASES.get(kind.lower(), kind.lower())


@dataclass(frozen=True)
class LossSpec:
    kind: str = "ll"
    alpha: float | None = None

    def __post_init__(self):
        kind = canonical_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in LOSS_KINDS:
            raise ContractError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if kind in _NEEDS_ALPHA:
            if self.alpha is None or self.alpha <= 0:
                raise ContractError(f"{kind} needs a positive alpha")

    @property
    def sampled(self) -> bool:
        return self.kind in ("sll", "skl")


def _prepare(scores, costs, weights, need_full):
    s = as_tensor(scores)
    if s.value.ndim == 1:
        s = ad.reshape(s, (1, s.shape[0]))
    c = np.atleast_2d(np.asarray(costs, dtype=np.float64))
    if c.shape != s.shape:
        raise ContractError(f"costs shape {c.shape} does not match scores {s.shape}")
    w = np.ones(len(c)) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    mask = ~np.isnan(c)
    active = w != 0
    if need_full and not mask[active].all():
        raise ContractError("this loss needs a cost for every token")
    if not mask[active].any(axis=1).all():
        raise ContractError("an active row has no sampled token")
    mask = np.where(active[:, None], mask, True)
    c = np.where(mask, np.nan_to_num(c), 0.0)
    return s, c, mask, w


def _gt_array(gt, n):
    if gt is None:
        return None
    return np.broadcast_to(np.asarray(gt, dtype=np.intp).reshape(-1), (n,))


def target_tokens(costs, gt=None, mask=None) -> np.ndarray:
    """argmin over each row; ground truth wins ties, then the lowest index."""
    c = np.atleast_2d(np.asarray(costs, dtype=np.float64))
    if mask is not None:
        c = np.where(mask, c, np.inf)
    c = np.where(np.isnan(c), np.inf, c)
    best = c.min(axis=1, keepdims=True)
    target = np.argmax(c == best, axis=1)
    if gt is not None:
        gt = _gt_array(gt, len(c))
        gt_min = c[np.arange(len(c)), gt] == best[:, 0]
        target = np.where(gt_min, gt, target)
    return target


def target_distribution(costs, alpha, mask=None) -> np.ndarray:
    """exp(-alpha * c) normalized per row (over ``mask`` when given)."""
    c = np.atleast_2d(np.asarray(costs, dtype=np.float64))
    if mask is None:
        mask = ~np.isnan(c)
    z = np.where(mask, -alpha * np.nan_to_num(c), -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _onehot(idx, A):
    out = np.zeros((len(idx), A))
    out[np.arange(len(idx)), idx] = 1.0
    return out


def _target_logloss(s: Tensor, targets, w, mask=None) -> Tensor:
    logp = ad.log_softmax(s, mask=mask)
    return ad.neg(ad.sum_(logp * (_onehot(targets, s.shape[-1]) * w[:, None])))


def mle_loss(scores, gt, weights=None) -> Tensor:
    """Negative log-likelihood of the ground truth for one cell.

    ``scores`` may also be a list of per-cell tensors with ``gt`` the matching
    (T,) or (B, T) token array, in which case the cells are summed.
    """
    if isinstance(scores, (list, tuple)):
        gt = np.atleast_2d(np.asarray(gt, dtype=np.intp))
        terms = [mle_loss(s, gt[:, t], weights) for t, s in enumerate(scores)]
        total = terms[0]
        for term in terms[1:]:
            total = total + term
        return total
    s = as_tensor(scores)
    if s.value.ndim == 1:
        s = ad.reshape(s, (1, s.shape[0]))
    w = np.ones(len(s.value)) if weights is None else np.asarray(weights, dtype=np.float64)
    return _target_logloss(s, _gt_array(gt, len(s.value)), w)


def ll_loss(scores, costs, gt=None, weights=None) -> Tensor:
    s, c, mask, w = _prepare(scores, costs, weights, need_full=True)
    return _target_logloss(s, target_tokens(c, gt), w)


def kl_loss(scores, costs, alpha, weights=None) -> Tensor:
    s, c, mask, w = _prepare(scores, costs, weights, need_full=True)
    target = target_distribution(c, alpha) * w[:, None]
    return ad.neg(ad.sum_(ad.log_softmax(s) * target))


def llcas_loss(scores, costs, alpha, gt=None, weights=None) -> Tensor:
    s, c, mask, w = _prepare(scores, costs, weights, need_full=True)
    return _target_logloss(s + alpha * c, target_tokens(c, gt), w)


def shl_loss(scores, costs, gt=None, weights=None) -> Tensor:
    s, c, mask, w = _prepare(scores, costs, weights, need_full=True)
    onehot = _onehot(target_tokens(c, gt), s.shape[-1])
    margin = ad.max_(s + c, axis=-1) - ad.sum_(s * onehot, axis=-1)
    return ad.sum_(margin * w)


def softplus(x) -> Tensor:
    """log(1 + e^x) as -log_softmax([x, 0])[1], stable for any x."""
    x = as_tensor(x)
    pair = ad.concat([ad.reshape(x, x.shape + (1,)), np.zeros(x.shape + (1,))], axis=-1)
    return ad.neg(ad.sum_(ad.log_softmax(pair) * np.array([0.0, 1.0]), axis=-1))


def consistent_loss(scores, costs, weights=None) -> Tensor:
    s, c, mask, w = _prepare(scores, costs, weights, need_full=True)
    A = s.shape[-1]
    centered = s - ad.scale(ad.sum_(s, axis=-1, keepdims=True), 1.0 / A)
    return ad.sum_(softplus(centered) * (c * w[:, None]))


def _check_gt_sampled(mask, gt, w):
    if gt is None:
        return
    gt = _gt_array(gt, len(mask))
    active = w != 0
    if not mask[np.arange(len(mask)), gt][active].all():
        raise ContractError("ground-truth token missing from the sampled set")


def sampled_ll(scores, costs, gt=None, weights=None) -> Tensor:
    """Log-loss over the sampled tokens only; unsampled scores get zero gradient."""
    s, c, mask, w = _prepare(scores, costs, weights, need_full=False)
    _check_gt_sampled(mask, gt, w)
    return _target_logloss(s, target_tokens(c, gt, mask), w, mask=mask)


def sampled_kl(scores, costs, alpha, gt=None, weights=None) -> Tensor:
    s, c, mask, w = _prepare(scores, costs, weights, need_full=False)
    _check_gt_sampled(mask, gt, w)
    target = target_distribution(c, alpha, mask) * w[:, None]
    return ad.neg(ad.sum_(ad.log_softmax(s, mask=mask) * target))


def cell_loss(spec: LossSpec, scores, costs, gt, weights=None) -> Tensor:
    """Dispatch one cell's loss by ``spec.kind``."""
    kind = spec.kind
    if kind == "mle":
        return mle_loss(scores, gt, weights)
    if kind == "ll":
        return ll_loss(scores, costs, gt, weights)
    if kind == "kl":
        return kl_loss(scores, costs, spec.alpha, weights)
    if kind == "llcas":
        return llcas_loss(scores, costs, spec.alpha, gt, weights)
    if kind == "shl":
        return shl_loss(scores, costs, gt, weights)
    if kind == "consistent":
        return consistent_loss(scores, costs, weights)
    if kind == "sll":
        return sampled_ll(scores, costs, gt, weights)
    return sampled_kl(scores, costs, spec.alpha, gt, weights)
