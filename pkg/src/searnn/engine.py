"""Cost collection: one roll-in per sample, then roll-outs for (cell, token) pairs.

All roll-outs of a batch are run together as one vectorized greedy decode, so
"parallel over (sample, cell, token)" here means one big numpy batch rather
than worker threads.  Randomness (cell/token sampling and mixed roll-out
coins) is drawn from a generator seeded by ``(seed..., sample_id)``, so a
sample's costs do not depend on which other samples share its batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .costs import get_cost
from .exceptions import ContractError, CostError
from .model import Seq2Seq, pad_batch, strip_eos
from .policies import PolicySpec, RollInRecord, roll_in_batch, roll_out_batch

TOKEN_STRATEGIES = ("all", "uniform", "policy", "biased", "topk", "neighbor")


@dataclass(frozen=True)
class SamplerSpec:
    """Which cells and tokens get roll-outs.

    ``cells=None`` means every cell. ``k`` is the token budget per cell
    (ground truth included); for the ``neighbor`` strategy it is the top-k
    budget and ``neighbor_window`` the half-width of the ground-truth window.
    """

    cells: int | None = None
    token_strategy: str = "all"
    k: int | None = None
    neighbor_window: int = 0

    def __post_init__(self):
        if self.token_strategy not in TOKEN_STRATEGIES:
            raise ContractError(f"token_strategy must be one of {TOKEN_STRATEGIES}")
        if self.token_strategy != "all" and (self.k is None or self.k < 1):
            raise ContractError("sampled token strategies need k >= 1")
        if self.cells is not None and self.cells < 1:
            raise ContractError("cells must be >= 1 or None")
        if self.token_strategy == "neighbor" and self.neighbor_window < 1:
            raise ContractError("neighbor strategy needs neighbor_window >= 1")

    @property
    def full(self) -> bool:
        return self.cells is None and self.token_strategy == "all"


@dataclass
class CostTensor:
    """T x A roll-out costs for one sample; NaN marks pairs never rolled out."""

    costs: np.ndarray
    sample_id: int = 0

    @property
    def mask(self) -> np.ndarray:
        return ~np.isnan(self.costs)

    @property
    def cell_mask(self) -> np.ndarray:
        return self.mask.any(axis=1)

    @property
    def shape(self):
        return self.costs.shape

    @property
    def rollouts(self) -> int:
        return int(self.mask.sum())

    def tokens(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.mask[t])

    def __eq__(self, other):
        return (isinstance(other, CostTensor) and self.sample_id == other.sample_id
                and np.array_equal(self.costs, other.costs, equal_nan=True))


@dataclass
class RolloutBudget:
    count: int = 0
    per_sample: list[int] = field(default_factory=list)

    def add(self, n: int):
        self.count += int(n)
        self.per_sample.append(int(n))


def sample_cells(T: int, n: int, rng) -> np.ndarray:
    """n distinct cell indices in [0, T), uniformly without replacement."""
    if not 1 <= n <= T:
        raise ContractError(f"need 1 <= n <= T, got n={n}, T={T}")
    if n == T:
        return np.arange(T)
    return np.sort(rng.choice(T, size=n, replace=False))


def _gumbel_top(logits, m, rng):
    # Gumbel-top-m == m successive draws without replacement from softmax(logits).
    keys = logits + rng.gumbel(size=logits.shape)
    return np.argsort(-keys, kind="stable")[:m]


def _top_indices(scores, m):
    return np.argsort(-np.asarray(scores), kind="stable")[:m]


def sample_tokens(scores, gt_token: int, spec: SamplerSpec, rng) -> np.ndarray:
    """Ground-truth token plus k-1 others chosen by ``spec.token_strategy``."""
    scores = np.asarray(scores, dtype=np.float64)
    A = scores.shape[-1]
    if spec.token_strategy == "all":
        return np.arange(A)
    k = spec.k
    if k > A:
        raise ContractError(f"k={k} exceeds vocabulary size {A}")
    others = np.delete(np.arange(A), gt_token)
    m = k - 1
    if m == 0:
        return np.array([gt_token])
    strategy = spec.token_strategy
    if strategy == "uniform":
        picked = rng.choice(others, size=m, replace=False)
    elif strategy == "policy":
        picked = others[_gumbel_top(scores[others], m, rng)]
    elif strategy == "biased":
        picked = others[_gumbel_top(-scores[others], m, rng)]
    elif strategy == "topk":
        picked = others[_top_indices(scores[others], m)]
    else:
        raise ContractError("use neighbor_mix_sample for the neighbor strategy")
    return np.sort(np.append(picked, gt_token))


def neighbor_mix_sample(scores, gt: Sequence[int], t: int, spec: SamplerSpec) -> np.ndarray:
    """Top-k tokens by score, plus ground-truth tokens at t-w..t+w, plus gt[t]."""
    scores = np.asarray(scores, dtype=np.float64)
    A = scores.shape[-1]
    w = spec.neighbor_window
    if spec.k + 2 * w > A:
        raise ContractError(f"top-k budget {spec.k} + neighbor budget {2 * w} exceeds A={A}")
    lo, hi = max(0, t - w), min(len(gt), t + w + 1)
    chosen = set(int(i) for i in _top_indices(scores, spec.k))
    chosen.update(int(x) for x in gt[lo:hi])
    chosen.add(int(gt[t]))
    return np.array(sorted(chosen))


def _sample_rng(seed, sample_id) -> np.random.Generator:
    entropy = list(np.atleast_1d(seed).astype(np.int64)) + [int(sample_id)]
    return np.random.default_rng(np.random.SeedSequence([int(e) for e in entropy]))


def collect_costs(model: Seq2Seq, batch: Sequence[tuple[Sequence[int], Sequence[int]]],
                  policy: PolicySpec, sampler: SamplerSpec, cost_fn="hamming", *,
                  seed=0, sample_ids: Sequence[int] | None = None):
    """Run roll-in and roll-outs for every sample; return (costs, records, budget).

    Targets must end with EOS; cells are the target positions 0..T-1.
    ``cost_fn`` compares content tokens (EOS stripped). Model parameters are
    only read.
    """
    if len(batch) == 0:
        raise ContractError("batch must be non-empty")
    cost = get_cost(cost_fn)
    sample_ids = list(range(len(batch))) if sample_ids is None else list(sample_ids)
    sources = [list(src) for src, _ in batch]
    gts = [[int(x) for x in gt] for _, gt in batch]
    src_arr, src_len = pad_batch(sources)
    ctx = model.encode_batch(src_arr, src_len)
    records = roll_in_batch(model, ctx, gts, policy)

    A = model.vocab_size
    parts, coin_parts = [], []
    for b, (rec, gt) in enumerate(zip(records, gts)):
        rng = _sample_rng(seed, sample_ids[b])
        T = len(gt)
        coin_table = rng.random((T, A))
        if sampler.full:
            t_idx, a_idx = np.divmod(np.arange(T * A), A)
        else:
            cells = np.arange(T) if sampler.cells is None else sample_cells(T, min(sampler.cells, T), rng)
            t_list, a_list = [], []
            for t in cells:
                if sampler.token_strategy == "neighbor":
                    toks = neighbor_mix_sample(rec.scores[t], gt, int(t), sampler)
                else:
                    toks = sample_tokens(rec.scores[t], gt[t], sampler, rng)
                t_list.append(np.full(len(toks), t))
                a_list.append(toks)
            t_idx, a_idx = np.concatenate(t_list), np.concatenate(a_list)
        parts.append(np.stack([np.full(len(t_idx), b), t_idx, a_idx], axis=1))
        coin_parts.append(coin_table[t_idx, a_idx])
    trip = np.concatenate(parts).astype(np.intp)
    coins = np.concatenate(coin_parts)
    out, out_len = roll_out_batch(model, records, trip[:, 0], trip[:, 1], trip[:, 2], policy, gts,
                                  coins if policy.roll_out == "mixed" else None)

    contents = [strip_eos(g) for g in gts]
    gt_arr, gt_len = pad_batch(contents)
    rows = trip[:, 0]
    try:
        values = cost.batch(out, out_len, gt_arr[rows], gt_len[rows])
    except Exception:
        values = np.empty(len(trip))
        for i, (b, t, a) in enumerate(trip):
            try:
                values[i] = cost.single(list(out[i, :out_len[i]]), contents[b])
            except Exception as exc:
                raise CostError(sample_ids[b], int(t), int(a), exc) from exc

    tensors = [CostTensor(np.full((len(g), A), np.nan), sample_ids[b]) for b, g in enumerate(gts)]
    for b, ct in enumerate(tensors):
        sel = trip[:, 0] == b
        ct.costs[trip[sel, 1], trip[sel, 2]] = values[sel]
    budget = RolloutBudget()
    for ct in tensors:
        budget.add(ct.rollouts)
    return tensors, records, budget


def recompute_cost(model: Seq2Seq, record: RollInRecord, gt: Sequence[int], t: int, a: int,
                   policy: PolicySpec, cost_fn, *, seed=0, sample_id=0) -> float:
    """Independent single roll-out re-evaluation of one stored cost entry."""
    from .policies import roll_out

    rng = _sample_rng(seed, sample_id)
    coin = rng.random((len(gt), model.vocab_size))[t, a]
    seq = roll_out(model, record, t, a, policy, gt, coin=coin)
    return get_cost(cost_fn).single(strip_eos(seq), strip_eos(gt))


def dump_costs(tensors: Sequence[CostTensor], fh):
    """Write ``sample_id<TAB>t<TAB>a<TAB>cost`` lines for every sampled entry."""
    for ct in tensors:
        for t, a in zip(*np.nonzero(ct.mask)):
            fh.write(f"{ct.sample_id}\t{t}\t{a}\t{float(ct.costs[t, a])!r}\n")
