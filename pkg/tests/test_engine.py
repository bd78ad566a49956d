import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from searnn.engine import (CostTensor, SamplerSpec, collect_costs, dump_costs, neighbor_mix_sample,
                           recompute_cost, sample_cells, sample_tokens)
from searnn.exceptions import ContractError, CostError
from searnn.model import EOS_ID, Seq2Seq
from searnn.policies import PolicySpec

REF = PolicySpec("reference", "reference")
MIXED = PolicySpec("learned", "mixed")


def make_batch(A, lengths, seed=0):
    """Random (source, gt-with-EOS) pairs over content ids 3..A-1."""
    rng = np.random.default_rng(seed)
    return [([int(x) for x in rng.integers(3, A, size=n)], [int(x) for x in rng.integers(3, A, size=n)] + [EOS_ID])
            for n in lengths]


def small_model(A, attention=False, max_steps=8, seed=0):
    return Seq2Seq(A, 4, 6, attention=attention, max_steps=max_steps, seed=seed, init_scale=1.0)


# -------------------------------------------------------------------- budget

def test_full_budget_small():
    model = small_model(4)
    tensors, _, budget = collect_costs(model, make_batch(4, [1]), REF, SamplerSpec(), "hamming")
    assert budget.count == 4 * 2 == tensors[0].rollouts


def test_full_budget_ocr_shape():
    model = small_model(26, max_steps=16)
    batch = make_batch(26, [14, 14])
    tensors, _, budget = collect_costs(model, batch, MIXED, SamplerSpec(), "hamming")
    assert budget.per_sample == [390, 390]
    assert all(ct.shape == (15, 26) for ct in tensors)


@pytest.mark.parametrize("strategy", ["uniform", "policy", "biased", "topk"])
def test_sampled_budget(strategy):
    model = small_model(43, max_steps=12)
    batch = make_batch(43, [4, 7, 10], seed=1)
    tensors, _, budget = collect_costs(model, batch, MIXED, SamplerSpec(token_strategy=strategy, k=5), "edit")
    assert budget.per_sample == [5 * len(g) for _, g in batch]
    for ct, (_, gt) in zip(tensors, batch):
        for t in range(len(gt)):
            assert len(ct.tokens(t)) == 5 and gt[t] in ct.tokens(t)


def test_sampled_cells_budget():
    model = small_model(10)
    batch = make_batch(10, [5, 6], seed=2)
    tensors, _, budget = collect_costs(model, batch, MIXED, SamplerSpec(cells=3, token_strategy="topk", k=4), "edit")
    assert budget.per_sample == [12, 12]
    for ct in tensors:
        assert ct.cell_mask.sum() == 3
        assert np.all(np.isnan(ct.costs[~ct.cell_mask]))


def test_unsampled_entries_are_absent_not_zero():
    model = small_model(12)
    tensors, _, _ = collect_costs(model, make_batch(12, [3]), REF, SamplerSpec(token_strategy="topk", k=2), "hamming")
    costs = tensors[0].costs
    assert np.isnan(costs).sum() == costs.size - 2 * 4


# ------------------------------------------------------------ cost contents

def test_reference_hamming_rows():
    model = small_model(7)
    batch = make_batch(7, [4, 4, 4], seed=3)
    tensors, records, _ = collect_costs(model, batch, REF, SamplerSpec(), "hamming")
    for b, (ct, (_, gt)) in enumerate(zip(tensors, batch)):
        for t in range(len(gt)):
            row = ct.costs[t]
            assert row[gt[t]] == 0.0
            assert np.all(np.delete(row, gt[t]) > 0)
            for a in range(7):
                assert recompute_cost(model, records[b], gt, t, a, REF, "hamming", sample_id=b) == row[a]


def test_reference_early_eos_costs_the_missing_suffix():
    model = small_model(6)
    gt = [3, 4, 5, 3, EOS_ID]
    tensors, _, _ = collect_costs(model, [([3, 4, 5, 3], gt)], REF, SamplerSpec(), "hamming")
    np.testing.assert_array_equal(tensors[0].costs[:, EOS_ID], [4, 3, 2, 1, 0])
    others = np.delete(tensors[0].costs, EOS_ID, axis=1)
    assert set(others.ravel()) == {0.0, 1.0}


@pytest.mark.parametrize("attention", [False, True])
@pytest.mark.parametrize("cost", ["hamming", "edit", "bleu"])
def test_recomputation_reproduces_stored_costs(attention, cost):
    model = small_model(9, attention=attention)
    batch = make_batch(9, [3, 5, 2, 6], seed=4)
    seed = (5, 17)
    tensors, records, _ = collect_costs(model, batch, MIXED, SamplerSpec(), cost, seed=seed)
    rng = np.random.default_rng(0)
    for _ in range(10):
        b = int(rng.integers(len(batch)))
        t, a = int(rng.integers(len(batch[b][1]))), int(rng.integers(9))
        expected = recompute_cost(model, records[b], batch[b][1], t, a, MIXED, cost, seed=seed, sample_id=b)
        assert tensors[b].costs[t, a] == expected


def test_determinism_and_purity():
    model = small_model(11, attention=True)
    batch = make_batch(11, [3, 6, 4], seed=5)
    sampler = SamplerSpec(cells=2, token_strategy="policy", k=4)
    before = model.params.checksum()
    first, _, _ = collect_costs(model, batch, MIXED, sampler, "edit", seed=9)
    second, _, _ = collect_costs(model, batch, MIXED, sampler, "edit", seed=9)
    assert model.params.checksum() == before
    assert first == second
    other, _, _ = collect_costs(model, batch, MIXED, sampler, "edit", seed=10)
    assert any(x != y for x, y in zip(first, other))


def test_costs_independent_of_batch_composition():
    model = small_model(8)
    batch = make_batch(8, [3, 4, 5], seed=6)
    together, _, _ = collect_costs(model, batch, MIXED, SamplerSpec(token_strategy="uniform", k=3), "edit",
                                   seed=1, sample_ids=[10, 11, 12])
    alone, _, _ = collect_costs(model, batch[1:2], MIXED, SamplerSpec(token_strategy="uniform", k=3), "edit",
                                seed=1, sample_ids=[11])
    assert together[1] == alone[0]


def test_cost_failure_names_the_triple():
    model = small_model(6)
    batch = make_batch(6, [2, 2], seed=7)

    def fragile(pred, gt):
        if len(pred) != len(gt):
            raise RuntimeError("length mismatch")
        return 0.0

    with pytest.raises(CostError) as info:
        collect_costs(model, batch, REF, SamplerSpec(), fragile)
    err = info.value
    assert (err.sample, err.cell, err.token) is not None
    assert "length mismatch" in str(err)


def test_empty_batch_rejected():
    with pytest.raises(ContractError):
        collect_costs(small_model(5), [], REF, SamplerSpec(), "hamming")


def test_dump_format():
    ct = CostTensor(np.array([[np.nan, 0.5], [1.0, np.nan]]), sample_id=7)
    buf = io.StringIO()
    dump_costs([ct], buf)
    assert buf.getvalue() == "7\t0\t1\t0.5\n7\t1\t0\t1.0\n"


# ------------------------------------------------------------------ samplers

def test_sampler_spec_validation():
    with pytest.raises(ContractError):
        SamplerSpec(token_strategy="topk")
    with pytest.raises(ContractError):
        SamplerSpec(token_strategy="bogus", k=2)
    with pytest.raises(ContractError):
        SamplerSpec(cells=0)
    with pytest.raises(ContractError):
        SamplerSpec(token_strategy="neighbor", k=2)
    assert SamplerSpec().full and not SamplerSpec(cells=2).full


def test_sample_cells_examples():
    rng = np.random.default_rng(0)
    assert list(sample_cells(5, 5, rng)) == [0, 1, 2, 3, 4]
    assert list(sample_cells(1, 1, rng)) == [0]
    with pytest.raises(ContractError):
        sample_cells(3, 4, rng)


def test_sample_cells_marginals():
    rng = np.random.default_rng(1)
    T, n, N = 7, 3, 100_000
    counts = np.zeros(T)
    for _ in range(N):
        counts[sample_cells(T, n, rng)] += 1
    p = n / T
    sigma = np.sqrt(p * (1 - p) / N)
    assert np.all(np.abs(counts / N - p) <= 3 * sigma)


def test_sample_tokens_examples():
    rng = np.random.default_rng(0)
    assert list(sample_tokens([3, 1, 2, 0], 2, SamplerSpec(token_strategy="uniform", k=1), rng)) == [2]
    assert set(sample_tokens([3, 1, 2, 0], 3, SamplerSpec(token_strategy="topk", k=2), rng)) == {3, 0}
    assert set(sample_tokens([1, 1, 1, 1], 3, SamplerSpec(token_strategy="topk", k=3), rng)) == {0, 1, 3}
    with pytest.raises(ContractError):
        sample_tokens([0, 0], 0, SamplerSpec(token_strategy="uniform", k=3), rng)
    assert list(sample_tokens([5, 1], 0, SamplerSpec(), rng)) == [0, 1]


def exact_inclusion(weights, gt, m):
    """Inclusion probability of each token under m successive draws without replacement."""
    others = [i for i in range(len(weights)) if i != gt]
    incl = np.zeros(len(weights))
    incl[gt] = 1.0
    for order in itertools.permutations(others, m):
        prob, left = 1.0, sum(weights[i] for i in others)
        for i in order:
            prob *= weights[i] / left
            left -= weights[i]
        incl[list(order)] += prob
    return incl


@pytest.mark.parametrize("strategy,sign", [("policy", 1.0), ("biased", -1.0), ("uniform", 0.0)])
def test_token_inclusion_frequencies(strategy, sign):
    scores = np.array([1.2, -0.4, 0.3, 2.0])
    gt, k, N = 1, 3, 100_000
    weights = np.exp(sign * scores)
    expected = exact_inclusion(weights, gt, k - 1)
    rng = np.random.default_rng(2)
    counts = np.zeros(4)
    spec = SamplerSpec(token_strategy=strategy, k=k)
    for _ in range(N):
        counts[sample_tokens(scores, gt, spec, rng)] += 1
    freq = counts / N
    sigma = np.sqrt(expected * (1 - expected) / N)
    assert freq[gt] == 1.0
    assert np.all(np.abs(freq - expected) <= 3 * sigma + 1e-12), (freq, expected)


def test_neighbor_mix_examples():
    a, b, c, d = 3, 4, 5, 6
    gt = [a, b, c, d]
    scores = np.zeros(12)
    scores[[9, 10]] = 5.0
    spec = SamplerSpec(token_strategy="neighbor", k=2, neighbor_window=1)
    assert set(neighbor_mix_sample(scores, gt, 1, spec)) == {a, b, c, 9, 10}
    assert set(neighbor_mix_sample(scores, gt, 0, spec)) == {a, b, 9, 10}
    wide = SamplerSpec(token_strategy="neighbor", k=15, neighbor_window=5)
    assert len(neighbor_mix_sample(np.zeros(30), list(range(3, 13)), 4, wide)) <= 25
    with pytest.raises(ContractError):
        neighbor_mix_sample(np.zeros(12), gt, 1, SamplerSpec(token_strategy="neighbor", k=11, neighbor_window=1))


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["uniform", "policy", "biased", "topk", "neighbor"]), st.integers(1, 6),
       st.integers(0, 2**31 - 1), st.one_of(st.none(), st.integers(1, 4)))
def test_ground_truth_always_sampled(strategy, k, seed, cells):
    A = 10
    model = small_model(A, seed=seed % 5)
    batch = make_batch(A, [2, 4, 3], seed=seed)
    sampler = SamplerSpec(cells=cells, token_strategy=strategy, k=k,
                          neighbor_window=1 if strategy == "neighbor" else 0)
    tensors, _, budget = collect_costs(model, batch, MIXED, sampler, "hamming", seed=seed)
    for ct, (_, gt) in zip(tensors, batch):
        for t in np.flatnonzero(ct.cell_mask):
            assert gt[t] in ct.tokens(t)
    assert budget.count == sum(ct.rollouts for ct in tensors)
