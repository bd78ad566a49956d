"""Roll-in and roll-out policies: reference, learned and mixed.

Positions are 0-based throughout: cell ``t`` emits output position ``t``, and a
ground-truth sequence of T tokens (its last token being EOS) has cells
0..T-1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .costs import bleu1
from .exceptions import ContractError
from .model import BOS_ID, EOS_ID, PAD_ID, EncoderContext, Seq2Seq, pad_batch, strip_eos

ROLL_INS = ("reference", "learned")
ROLL_OUTS = ("reference", "learned", "mixed")
REFERENCES = ("copy", "suffix-bleu1")


@dataclass(frozen=True)
class PolicySpec:
    roll_in: str = "learned"
    roll_out: str = "mixed"
    mix_probability: float = 0.5
    reference: str = "copy"

    def __post_init__(self):
        if self.roll_in not in ROLL_INS:
            raise ContractError(f"roll_in must be one of {ROLL_INS}, got {self.roll_in!r}")
        if self.roll_out not in ROLL_OUTS:
            raise ContractError(f"roll_out must be one of {ROLL_OUTS}, got {self.roll_out!r}")
        if self.reference not in REFERENCES:
            raise ContractError(f"reference must be one of {REFERENCES}, got {self.reference!r}")
        if not 0.0 <= self.mix_probability <= 1.0:
            raise ContractError("mix_probability must lie in [0, 1]")


@dataclass
class RollInRecord:
    """What one roll-in leaves behind for the roll-outs of its sample.

    ``states[t]`` is the decoder state after cell t and ``scores[t]`` the
    scores that cell produced; ``prefix[t]`` is the token emitted at position
    t (the ground truth under reference roll-in).
    """

    states: np.ndarray   # (T, H)
    scores: np.ndarray   # (T, A)
    prefix: np.ndarray   # (T,)
    policy: PolicySpec
    context: EncoderContext = field(repr=False)

    def __len__(self):
        return len(self.prefix)


def roll_in_batch(model: Seq2Seq, ctx: EncoderContext, gts: Sequence[Sequence[int]],
                  spec: PolicySpec) -> list[RollInRecord]:
    """Untaped roll-in for a batch whose encoder context is ``ctx``."""
    if any(len(g) == 0 for g in gts):
        raise ContractError("ground truth must be non-empty")
    gt_arr, lengths = pad_batch(gts)
    B, T = gt_arr.shape
    h = ctx.final
    prev = np.full(B, BOS_ID, dtype=np.intp)
    states = np.empty((B, T, model.hidden_size))
    scores = np.empty((B, T, model.vocab_size))
    prefix = np.empty((B, T), dtype=np.intp)
    for t in range(T):
        h, s = model.step_batch(h, prev, ctx)
        states[:, t] = h.value
        scores[:, t] = s.value
        if spec.roll_in == "reference":
            prefix[:, t] = gt_arr[:, t]
        else:
            prefix[:, t] = np.argmax(s.value, axis=-1)
        prev = prefix[:, t]
    return [RollInRecord(states[b, :n].copy(), scores[b, :n].copy(), prefix[b, :n].copy(),
                         spec, ctx.take([b]))
            for b, n in enumerate(lengths)]


def roll_in(model: Seq2Seq, source: Sequence[int], gt: Sequence[int], spec: PolicySpec) -> RollInRecord:
    if len(gt) == 0:
        raise ContractError("ground truth must be non-empty")
    return roll_in_batch(model, model.encode(source), [list(gt)], spec)[0]


def reference_completion(gt: Sequence[int], t: int, kind: str = "copy") -> list[int]:
    """Ground-truth tokens after position t (copy heuristic, absolute alignment)."""
    if kind != "copy":
        raise ContractError("positional completion is only defined for the copy reference")
    if not 0 <= t < len(gt) + 1:
        raise ContractError(f"position {t} outside the ground truth")
    return list(gt[t + 1:])


def suffix_reference_completion(prefix: Sequence, gt: Sequence) -> list:
    """Ground-truth suffix maximizing BLEU-1 of prefix+suffix; longest wins ties."""
    if len(gt) == 0:
        raise ContractError("ground truth must be non-empty")
    prefix, gt = list(prefix), list(gt)
    best, best_score = [], -1.0
    for start in range(len(gt), -1, -1):
        cand = prefix + gt[start:]
        if not cand:
            continue
        score = bleu1(cand, gt)
        if score >= best_score:
            best, best_score = gt[start:], score
    return best


def _completion(content: list[int], t: int, gt: Sequence[int], reference: str) -> list[int]:
    """Reference continuation for a roll-out whose tokens so far are ``content``."""
    if reference == "copy":
        suffix = reference_completion(gt, t)
    else:
        suffix = suffix_reference_completion(content, strip_eos(gt)) + [EOS_ID]
    if not suffix or suffix[-1] != EOS_ID:
        suffix = suffix + [EOS_ID]
    return suffix


def uses_learned(spec: PolicySpec, coin: float | None) -> bool:
    if spec.roll_out == "mixed":
        if coin is None:
            raise ContractError("mixed roll-out needs a coin flip")
        return coin < spec.mix_probability
    return spec.roll_out == "learned"


def roll_out(model: Seq2Seq, record: RollInRecord, t: int, a: int, spec: PolicySpec,
             gt: Sequence[int], coin: float | None = None, rng=None) -> list[int]:
    """Complete the roll-in prefix after enforcing token ``a`` at cell ``t``.

    Returns the emitted tokens including the terminating EOS. For mixed
    roll-outs a single coin decides the whole suffix: learned when
    ``coin < mix_probability``; pass ``coin`` or an ``rng`` to draw it.
    """
    if not 0 <= t < len(record):
        raise ContractError(f"cell {t} outside [0, {len(record)})")
    if not 0 <= a < model.vocab_size:
        raise ContractError(f"token {a} outside the vocabulary")
    if spec.roll_out == "mixed" and coin is None:
        coin = (rng or np.random.default_rng()).random()
    head = [int(x) for x in record.prefix[:t]] + [int(a)]
    if EOS_ID in head:
        return head[:head.index(EOS_ID) + 1]
    if uses_learned(spec, coin):
        out, end = model.greedy_batch(Tensor(record.states[t][None, :]), np.array([a]),
                                      record.context, np.array([t + 1]), model.max_steps)
        return head + [int(x) for x in out[0, t + 1:end[0]]]
    return head + [int(x) for x in _completion(head, t, gt, spec.reference)]


def _stack_contexts(records: Sequence[RollInRecord]) -> EncoderContext:
    ctxs = [r.context for r in records]
    final = Tensor(np.concatenate([c.final.value for c in ctxs]))
    if ctxs[0].states is None:
        return EncoderContext(final)
    S = max(c.mask.shape[1] for c in ctxs)

    def pad(x):
        width = [(0, 0)] * x.ndim
        width[1] = (0, S - x.shape[1])
        return np.pad(x, width)

    return EncoderContext(final, Tensor(np.concatenate([pad(c.states.value) for c in ctxs])),
                          Tensor(np.concatenate([pad(c.keys.value) for c in ctxs])),
                          np.concatenate([pad(c.mask) for c in ctxs]))


def roll_out_batch(model: Seq2Seq, records: Sequence[RollInRecord], sample: np.ndarray,
                   cell: np.ndarray, token: np.ndarray, spec: PolicySpec,
                   gts: Sequence[Sequence[int]], coins: np.ndarray | None = None):
    """Vectorized ``roll_out`` over (sample, cell, token) triples.

    Returns ``(tokens, content_len)``: an (N, L) array of emitted tokens and the
    number of tokens before the first EOS in each row.
    """
    sample, cell, token = (np.asarray(x, dtype=np.intp) for x in (sample, cell, token))
    N = len(sample)
    L = model.max_steps + 1
    if spec.reference != "copy" and spec.roll_out != "learned":
        # a best-BLEU-1 suffix may append the whole ground truth after the prefix
        L += max(len(g) for g in gts)
    cols = np.arange(L)[None, :]
    prefixes = np.full((len(records), L), PAD_ID, dtype=np.intp)
    for b, rec in enumerate(records):
        prefixes[b, :len(rec)] = rec.prefix
    out = np.where(cols < cell[:, None], prefixes[sample], PAD_ID)
    out[np.arange(N), cell] = token
    open_rows = ~((out == EOS_ID) & (cols <= cell[:, None])).any(axis=1)

    if spec.roll_out == "mixed":
        if coins is None:
            raise ContractError("mixed roll-out needs coin flips")
        learned = np.asarray(coins) < spec.mix_probability
    else:
        learned = np.full(N, spec.roll_out == "learned")

    rows = np.flatnonzero(open_rows & learned)
    if rows.size:
        states = np.zeros((len(records), max(len(r) for r in records), model.hidden_size))
        for b, rec in enumerate(records):
            states[b, :len(rec)] = rec.states
        h = states[sample[rows], cell[rows]]
        ctx = _stack_contexts(records).take(sample[rows]) if model.attention else None
        cont, _ = model.greedy_batch(Tensor(h), token[rows], ctx, cell[rows] + 1, model.max_steps)
        after = cols[:, :model.max_steps] > cell[rows, None]
        out[rows, :model.max_steps] = np.where(after, cont, out[rows, :model.max_steps])

    ref_rows = np.flatnonzero(open_rows & ~learned)
    if ref_rows.size and spec.reference == "copy":
        gt_arr, gt_len = pad_batch(gts)
        G = np.full((len(gts), L), PAD_ID, dtype=np.intp)
        G[:, :gt_arr.shape[1]] = gt_arr[:, :L]
        s, t = sample[ref_rows], cell[ref_rows]
        copy = (cols > t[:, None]) & (cols < gt_len[s][:, None])
        out[ref_rows] = np.where(copy, G[s], out[ref_rows])
        # the cell holding the final EOS has nothing left to copy
        last = t >= gt_len[s] - 1
        out[ref_rows[last], np.minimum(t[last] + 1, L - 1)] = EOS_ID
    elif ref_rows.size:
        for i in ref_rows:
            t = cell[i]
            suffix = _completion([int(x) for x in out[i, :t + 1]], int(t), gts[sample[i]], spec.reference)
            out[i, t + 1:t + 1 + len(suffix)] = suffix[:L - t - 1]

    is_eos = out == EOS_ID
    has_eos = is_eos.any(axis=1)
    # greedy rows that never emitted EOS stop at max_steps
    content_len = np.where(has_eos, is_eos.argmax(axis=1), model.max_steps)
    return out, content_len
