"""The outer training loop, per-round loss assembly and greedy evaluation.

Sequences here are integer id lists. Targets passed to the loop do *not*
carry EOS; it is appended internally so every sample has |target|+1 cells.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .costs import edit_cost, hamming_cost, smoothed_bleu_cost
from .engine import CostTensor, SamplerSpec, collect_costs
from .exceptions import ContractError, DivergenceError
from .losses import LossSpec, cell_loss
from .model import BOS_ID, EOS_ID, PAD_ID, Seq2Seq, pad_batch, strip_eos
from .optim import make_optimizer
from .policies import PolicySpec

log = logging.getLogger(__name__)

METRICS = ("hamming", "edit", "bleu")
METRICS_HEADER = "round,train_loss,test_metric,rollouts,seconds"


@dataclass
class MetricsRow:
    round: int
    train_loss: float
    test_metric: float
    rollouts: int
    seconds: float

    def csv(self) -> str:
        return f"{self.round},{self.train_loss!r},{self.test_metric!r},{self.rollouts},{self.seconds:.3f}"


@dataclass
class RoundData:
    """Everything a round's loss needs that is fixed before differentiation."""

    sources: np.ndarray
    source_len: np.ndarray
    inputs: np.ndarray       # (B, T) previous-token inputs: BOS then roll-in prefix
    targets: np.ndarray      # (B, T) ground truth incl. EOS, PAD beyond the end
    lengths: np.ndarray      # (B,) number of cells per sample
    costs: list[CostTensor] | None = None
    rollouts: int = 0


def with_eos(target: Sequence[int]) -> list[int]:
    return [int(x) for x in target] + [EOS_ID]


def prepare_round(model: Seq2Seq, batch, loss: LossSpec, policy: PolicySpec, sampler: SamplerSpec,
                  cost="hamming", *, seed=0, sample_ids=None) -> RoundData:
    """Roll-in and cost collection for one mini-batch (skipped for MLE)."""
    sources = [list(s) for s, _ in batch]
    gts = [with_eos(t) for _, t in batch]
    src, src_len = pad_batch(sources)
    targets, lengths = pad_batch(gts)
    if loss.kind == "mle":
        prefix = targets
        costs, rollouts = None, 0
    else:
        costs, records, budget = collect_costs(model, list(zip(sources, gts)), policy, sampler, cost,
                                               seed=seed, sample_ids=sample_ids)
        prefix = np.full_like(targets, PAD_ID)
        for b, rec in enumerate(records):
            prefix[b, :len(rec)] = rec.prefix
        rollouts = budget.count
    inputs = np.concatenate([np.full((len(gts), 1), BOS_ID), prefix[:, :-1]], axis=1)
    inputs = np.where(np.arange(inputs.shape[1])[None, :] < lengths[:, None], inputs, PAD_ID)
    return RoundData(src, src_len, inputs, targets, lengths, costs, rollouts)


def round_loss(model: Seq2Seq, data: RoundData, loss: LossSpec) -> Tensor:
    """Sum of per-cell losses over the batch, divided by the batch size."""
    ctx = model.encode_batch(data.sources, data.source_len)
    _, scores = model.teacher_forced_scores(ctx, data.inputs)
    B, T = data.targets.shape
    A = model.vocab_size
    total = None
    for t in range(T):
        live = (t < data.lengths).astype(np.float64)
        if data.costs is None:
            term = cell_loss(loss, scores[t], None, data.targets[:, t], live)
        else:
            c = np.full((B, A), np.nan)
            for b, ct in enumerate(data.costs):
                if t < len(ct.costs):
                    c[b] = ct.costs[t]
            weights = live * ~np.isnan(c).all(axis=1)
            if not weights.any():
                continue
            term = cell_loss(loss, scores[t], c, data.targets[:, t], weights)
        total = term if total is None else total + term
    if total is None:
        total = ad.sum_(ad.scale(scores[0], 0.0))
    return ad.scale(total, 1.0 / B)


# ------------------------------------------------------------------ decoding

def greedy_predict(model: Seq2Seq, sources: Sequence[Sequence[int]], batch_size=256) -> list[list[int]]:
    """Greedy decode every source; returns content tokens (EOS stripped)."""
    out = []
    for i in range(0, len(sources), batch_size):
        chunk = [list(s) for s in sources[i:i + batch_size]]
        src, src_len = pad_batch(chunk)
        ctx = model.encode_batch(src, src_len)
        n = len(chunk)
        toks, end = model.greedy_batch(ctx.final, np.full(n, BOS_ID), ctx, np.zeros(n, dtype=np.intp),
                                       model.max_steps)
        out.extend(strip_eos(row[:e]) for row, e in zip(toks, end))
    return out


def score_predictions(preds: Sequence[Sequence[int]], targets: Sequence[Sequence[int]], metric: str) -> float:
    if metric not in METRICS:
        raise ContractError(f"metric must be one of {METRICS}")
    if not targets:
        return 0.0
    if metric == "hamming":
        errors = sum(hamming_cost(p, list(g)) for p, g in zip(preds, targets))
        return errors / sum(len(g) for g in targets)
    if metric == "edit":
        return float(np.mean([edit_cost(p, list(g)) for p, g in zip(preds, targets)]))
    return float(np.mean([1.0 if not p else smoothed_bleu_cost(p, list(g)) for p, g in zip(preds, targets)]))


def evaluate(model: Seq2Seq, pairs: Sequence[tuple[Sequence[int], Sequence[int]]], metric="hamming") -> float:
    """Greedy test error: Hamming per character, or mean normalized edit / BLEU cost."""
    if not pairs:
        return 0.0
    preds = greedy_predict(model, [s for s, _ in pairs])
    return score_predictions(preds, [list(t) for _, t in pairs], metric)


# ---------------------------------------------------------------- main loop

@dataclass
class TrainResult:
    history: list[MetricsRow] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    rollouts: list[int] = field(default_factory=list)
    valid_metrics: list[float] = field(default_factory=list)
    best_round: int | None = None
    best_metric: float | None = None


def check_setup(loss: LossSpec, sampler: SamplerSpec):
    """Full-row losses cannot be trained on sampled token subsets."""
    if loss.kind not in ("mle", "sll", "skl") and sampler.token_strategy != "all":
        raise ContractError(f"loss {loss.kind!r} needs every token's cost; use token_strategy = all "
                            "or a sampled loss (sll, skl)")


def train_model(model: Seq2Seq, train_pairs, *, loss: LossSpec, policy: PolicySpec,
                sampler: SamplerSpec, cost="hamming", optimizer="adam", lr=1e-3, batch_size=32,
                rounds=1000, seed=0, eval_pairs=None, metric="hamming", eval_every=50,
                keep_best=True, callback=None, on_costs=None, test_pairs=None) -> TrainResult:
    """Algorithm loop: sample a mini-batch, collect costs, one gradient step.

    With ``eval_pairs`` the model is evaluated every ``eval_every`` rounds (and
    after the last); when ``keep_best`` the best-scoring parameters are
    restored at the end. Metrics rows report the error on ``test_pairs`` when
    given, else on ``eval_pairs``; selection always uses ``eval_pairs``. ``callback(round, loss, model)`` runs after every
    step and ``on_costs(round, cost_tensors)`` after every cost collection.
    """
    if batch_size < 1 or rounds < 0:
        raise ContractError("batch_size must be >= 1 and rounds >= 0")
    if not train_pairs:
        raise ContractError("no training pairs")
    check_setup(loss, sampler)
    opt = make_optimizer(optimizer, lr)
    batch_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    result = TrainResult()
    best_state = None
    window_loss, window_rollouts = [], 0
    started = time.perf_counter()
    n = len(train_pairs)
    for r in range(1, rounds + 1):
        idx = batch_rng.choice(n, size=min(batch_size, n), replace=False)
        batch = [train_pairs[i] for i in idx]
        data = prepare_round(model, batch, loss, policy, sampler, cost,
                             seed=(int(seed), r), sample_ids=idx)
        if on_costs is not None and data.costs is not None:
            on_costs(r, data.costs)
        model.params.zero_grad()
        with Tape() as tape:
            value = round_loss(model, data, loss)
        lv = value.item()
        if not np.isfinite(lv):
            raise DivergenceError(f"non-finite loss at round {r}", round_index=r)
        try:
            tape.backward(value)
            opt.step(model.params)
        except (FloatingPointError, DivergenceError) as exc:
            raise DivergenceError(f"round {r}: {exc}", round_index=r) from exc
        result.losses.append(lv)
        result.rollouts.append(data.rollouts)
        window_loss.append(lv)
        window_rollouts += data.rollouts
        if eval_pairs is not None and (r % eval_every == 0 or r == rounds):
            m = evaluate(model, eval_pairs, metric)
            reported = m if test_pairs is None else evaluate(model, test_pairs, metric)
            row = MetricsRow(r, float(np.mean(window_loss)), reported, window_rollouts,
                             time.perf_counter() - started)
            result.history.append(row)
            result.valid_metrics.append(m)
            log.info("round %d loss %.4f valid %s %.4f", r, row.train_loss, metric, m)
            if result.best_metric is None or m < result.best_metric:
                result.best_metric, result.best_round = m, r
                best_state = model.params.state_dict()
            window_loss, window_rollouts = [], 0
        if callback is not None:
            callback(r, lv, model)
    if keep_best and best_state is not None:
        model.params.load_state_dict(best_state)
    return result
