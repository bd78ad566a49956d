import itertools
import math
from collections import Counter
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from searnn.costs import (bleu1, edit_cost, edit_distance, edit_distance_batch, get_cost, hamming_batch,
                          hamming_cost, smoothed_bleu, smoothed_bleu_cost)
from searnn.exceptions import ContractError
from searnn.model import pad_batch


def recursive_edit(a, b):
    """Exhaustive recursion over the last operation; no DP table."""
    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))
    return d(len(a), len(b))


def all_strings(alphabet, max_len):
    return [s for n in range(max_len + 1) for s in itertools.product(alphabet, repeat=n)]


SEQ = st.lists(st.sampled_from("abcd"), max_size=6)


# ------------------------------------------------------------------- hamming

@pytest.mark.parametrize("pred,gt,expected", [("abc", "abc", 0), ("abc", "abd", 1), ("ab", "abcd", 2),
                                              ("abcd", "ab", 2), ("", "ab", 2)])
def test_hamming_examples(pred, gt, expected):
    assert hamming_cost(list(pred), list(gt)) == expected


# ---------------------------------------------------------------------- edit

def test_edit_matches_recursive_oracle_exhaustively():
    strings = all_strings("ab", 4)
    assert len(strings) == 31
    pairs = list(itertools.product(strings, repeat=2))
    for a, b in pairs:
        assert edit_distance(a, b) == recursive_edit(a, b), (a, b)
    preds, plen = pad_batch([[ord(c) for c in a] for a, _ in pairs])
    gts, glen = pad_batch([[ord(c) for c in b] for _, b in pairs])
    expected = [recursive_edit(a, b) for a, b in pairs]
    np.testing.assert_array_equal(edit_distance_batch(preds, plen, gts, glen), expected)


def test_edit_examples():
    assert edit_distance("kitten", "sitting") == 3
    assert edit_cost("kitten", "sitting") == pytest.approx(3 / 7, abs=1e-15)
    assert edit_cost("ab", "abc") == pytest.approx(1 / 3, abs=1e-15)
    assert edit_cost("xyz", "xyz") == 0.0
    with pytest.raises(ContractError):
        edit_cost("a", "")


@settings(max_examples=300, deadline=None)
@given(SEQ, SEQ, SEQ)
def test_edit_distance_is_a_metric(x, y, z):
    assert edit_distance(x, y) == edit_distance(y, x)
    assert edit_distance(x, z) <= edit_distance(x, y) + edit_distance(y, z)
    assert (edit_distance(x, y) == 0) == (x == y)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.tuples(st.lists(st.sampled_from("abc"), min_size=n, max_size=n),
                                                     st.lists(st.sampled_from("abc"), min_size=n, max_size=n))))
def test_edit_bounded_by_hamming(pair):
    pred, gt = pair
    assert edit_cost(pred, gt) * len(gt) <= hamming_cost(pred, gt)


@settings(max_examples=200, deadline=None)
@given(st.lists(SEQ, min_size=1, max_size=5), st.lists(SEQ.filter(bool), min_size=1, max_size=5))
def test_batch_costs_match_scalar(preds, gts):
    n = min(len(preds), len(gts))
    preds, gts = [[ord(c) for c in p] for p in preds[:n]], [[ord(c) for c in g] for g in gts[:n]]
    P, pl = pad_batch(preds)
    G, gl = pad_batch(gts)
    np.testing.assert_array_equal(hamming_batch(P, pl, G, gl), [hamming_cost(p, g) for p, g in zip(preds, gts)])
    np.testing.assert_array_equal(get_cost("edit").batch(P, pl, G, gl), [edit_cost(p, g) for p, g in zip(preds, gts)])


# ---------------------------------------------------------------------- BLEU

def bleu_oracle(pred, gt):
    logs = []
    for n in range(1, 5):
        cand = Counter(tuple(pred[i:i + n]) for i in range(len(pred) - n + 1))
        ref = Counter(tuple(gt[i:i + n]) for i in range(len(gt) - n + 1))
        count = sum(cand.values())
        if count == 0:
            continue
        match = sum(min(c, ref[g]) for g, c in cand.items())
        p = match / count if n == 1 else (match + 1) / (count + 1)
        if p == 0:
            return 0.0
        logs.append(math.log(p))
    bp = min(1.0, math.exp(1 - len(gt) / len(pred)))
    return bp * math.exp(sum(logs) / len(logs))


def test_bleu_examples():
    assert smoothed_bleu_cost("a b c d".split(), "a b c d".split()) == 0.0
    assert smoothed_bleu_cost(list("xyz"), list("abc")) == 1.0
    value = smoothed_bleu_cost("a b c d".split(), "a b d c".split())
    assert value == pytest.approx(1 - (1 * 2 / 4 * 1 / 3 * 1 / 2) ** 0.25, abs=1e-12)
    assert value == pytest.approx(0.4627, abs=1e-4)


def test_bleu_rejects_empty():
    with pytest.raises(ContractError):
        smoothed_bleu_cost([], ["a"])
    with pytest.raises(ContractError):
        bleu1(["a"], [])


@settings(max_examples=300, deadline=None)
@given(SEQ.filter(bool), SEQ.filter(bool))
def test_bleu_matches_oracle(pred, gt):
    assert smoothed_bleu(pred, gt) == pytest.approx(bleu_oracle(pred, gt), rel=1e-12, abs=1e-15)
    assert 0.0 <= smoothed_bleu_cost(pred, gt) <= 1.0


@settings(max_examples=100, deadline=None)
@given(SEQ.filter(bool))
def test_costs_vanish_on_identity(x):
    assert hamming_cost(x, x) == 0
    assert edit_cost(x, x) == 0
    assert smoothed_bleu_cost(x, x) == pytest.approx(0.0, abs=1e-15)


def test_bleu1_examples():
    assert bleu1(list("abcd"), list("abcd")) == 1.0
    assert bleu1(["a", "b"], ["a", "c"]) == 0.5
    assert bleu1(["x"], ["a"]) == 0.0


def test_get_cost():
    assert get_cost("hamming")(list("ab"), list("ac")) == 1.0
    assert get_cost("bleu")([], ["a"]) == 1.0
    custom = get_cost(lambda p, g: 7.0)
    assert custom([1], [2]) == 7.0
    with pytest.raises(ContractError):
        get_cost("nope")
