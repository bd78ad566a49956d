"""Finite-difference verification of every loss kind through the full model.

Costs, roll-in prefixes and sampled token sets are computed once at the
starting point and then held fixed, so the checked function is the round
loss as a smooth function of the parameters (except at SHL argmax ties,
which are detected and skipped).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape
from .datasets import gen_transduce
from .engine import SamplerSpec
from .exceptions import ContractError
from .losses import LOSS_KINDS, LossSpec, canonical_kind, cell_loss
from .model import Seq2Seq
from .policies import PolicySpec
from .training import prepare_round, round_loss

DEFAULT_POLICIES = (("reference", "reference"), ("reference", "learned"), ("learned", "reference"),
                    ("learned", "learned"), ("learned", "mixed"))
TOLERANCE = 1e-4
MAX_PARAMETERS = 2000


def relative_error(analytic, numeric) -> float:
    """max |a - n| / max(max |a|, max |n|); 0 when both vanish."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


def central_difference(f, x: np.ndarray, eps=1e-5) -> np.ndarray:
    """Gradient of scalar ``f()`` wrt the array ``x``, perturbing x in place."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return g


def shl_tie(scores, costs, gap=1e-4) -> bool:
    """True when some row's cost-augmented argmax is within ``gap`` of a runner-up."""
    aug = np.atleast_2d(np.asarray(scores, dtype=np.float64) + np.nan_to_num(costs, nan=-np.inf))
    if aug.shape[-1] < 2:
        return False
    top2 = -np.sort(-aug, axis=-1)[:, :2]
    return bool(np.any(top2[:, 0] - top2[:, 1] < gap))


@dataclass
class CheckResult:
    loss: str
    policy: str
    max_rel_error: float = 0.0
    skipped: bool = False
    reason: str = ""
    unsampled_zero: bool | None = None

    def ok(self, tol=TOLERANCE) -> bool:
        return self.skipped or (self.max_rel_error <= tol and self.unsampled_zero is not False)

    def line(self) -> str:
        if self.skipped:
            return f"{self.loss:<10} {self.policy:<20} skipped ({self.reason})"
        extra = "" if self.unsampled_zero is None else f"  unsampled-grad-zero={self.unsampled_zero}"
        return f"{self.loss:<10} {self.policy:<20} max_rel_err={self.max_rel_error:.3e}{extra}"


@dataclass
class GradcheckReport:
    results: list[CheckResult] = field(default_factory=list)
    n_parameters: int = 0
    tolerance: float = TOLERANCE

    @property
    def ok(self) -> bool:
        return all(r.ok(self.tolerance) for r in self.results)

    def max_by_loss(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for r in self.results:
            if not r.skipped:
                out[r.loss] = max(out.get(r.loss, 0.0), r.max_rel_error)
        return out

    def format(self) -> str:
        lines = [f"gradcheck on {self.n_parameters} parameters, tolerance {self.tolerance:g}"]
        lines += [r.line() for r in self.results]
        lines += [f"max {k}: {v:.3e}" for k, v in self.max_by_loss().items()]
        lines.append("PASS" if self.ok else "FAIL")
        return "\n".join(lines)


def default_alpha(kind: str) -> float | None:
    return 1.0 if kind in ("kl", "llcas", "skl") else None


def check_scores(loss: LossSpec, scores, costs, gt, eps=1e-5, policy="scores") -> CheckResult:
    """Gradcheck one loss wrt a (B, A) score matrix for fixed costs."""
    scores = np.array(scores, dtype=np.float64, ndmin=2)
    result = CheckResult(loss.kind, policy)
    if loss.kind == "shl" and shl_tie(scores, costs):
        result.skipped, result.reason = True, "argmax tie"
        return result
    s = Parameter(scores.copy())
    with Tape() as tape:
        value = cell_loss(loss, s, costs, gt)
    tape.backward(value)
    numeric = central_difference(lambda: cell_loss(loss, scores, costs, gt).item(), scores, eps)
    result.max_rel_error = relative_error(s.grad, numeric)
    if loss.sampled:
        unsampled = np.isnan(np.atleast_2d(costs))
        result.unsampled_zero = bool(np.all(s.grad[unsampled] == 0.0) and np.all(numeric[unsampled] == 0.0))
    return result


def check_model(model: Seq2Seq, batch, loss: LossSpec, policy: PolicySpec, sampler: SamplerSpec,
                cost="hamming", seed=0, eps=1e-5) -> CheckResult:
    """Gradcheck the round loss of ``batch`` wrt every model parameter."""
    label = f"{policy.roll_in}/{policy.roll_out}"
    result = CheckResult(loss.kind, label)
    data = prepare_round(model, batch, loss, policy, sampler, cost, seed=seed)
    if loss.kind == "shl":
        ctx = model.encode_batch(data.sources, data.source_len)
        _, scores = model.teacher_forced_scores(ctx, data.inputs)
        for t, s in enumerate(scores):
            live = t < data.lengths
            c = np.stack([ct.costs[t] for ct, ok in zip(data.costs, live) if ok])
            if shl_tie(s.value[live], c):
                result.skipped, result.reason = True, f"argmax tie at cell {t}"
                return result
    store = model.params
    store.zero_grad()
    with Tape() as tape:
        value = round_loss(model, data, loss)
    tape.backward(value)
    analytic = store.flat_grads()
    theta = store.flat_values()

    def f():
        store.set_flat_values(theta)
        return round_loss(model, data, loss).item()

    numeric = central_difference(f, theta, eps)
    store.set_flat_values(theta)
    result.max_rel_error = relative_error(analytic, numeric)
    return result


def gradcheck(losses: Sequence[str] = LOSS_KINDS, policies=DEFAULT_POLICIES, *, A=2, T=3,
              embedding=2, hidden=3, attention=False, batch_size=3, k=3, cost="hamming",
              seed=0, eps=1e-5, tolerance=TOLERANCE) -> GradcheckReport:
    """Run the finite-difference suite over loss kinds x (roll-in, roll-out) pairs.

    The model is built over ``A`` content symbols (plus the reserved tokens)
    on a shift-by-1 transduction batch; sampled losses use top-k token sampling.
    """
    split = gen_transduce(A, T, "shift:1", seed=seed, sizes=(batch_size, 0, 0))
    vocab = split.build_vocabulary()
    model = Seq2Seq(len(vocab), embedding, hidden, attention=attention, max_steps=T + 1, seed=seed,
                    init_scale=0.5)
    n = model.params.size
    if n > MAX_PARAMETERS:
        raise ContractError(f"gradcheck model has {n} parameters; limit is {MAX_PARAMETERS}")
    batch = [(vocab.encode(p.source), vocab.encode(p.target)) for p in split.train]
    report = GradcheckReport(n_parameters=n, tolerance=tolerance)
    for kind in losses:
        spec = LossSpec(kind, default_alpha(canonical_kind(kind)))
        combos = [("reference", "reference")] if spec.kind == "mle" else policies
        sampler = SamplerSpec(token_strategy="topk", k=min(k, len(vocab))) if spec.sampled else SamplerSpec()
        for roll_in, roll_out in combos:
            policy = PolicySpec(roll_in, roll_out)
            report.results.append(check_model(model, batch, spec, policy, sampler, cost, seed, eps))
    return report
