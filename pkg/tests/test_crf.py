import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp as sp_logsumexp

from celt.autodiff import Tensor, gradient_check
from celt.crf import crf_decode, crf_log_partition, crf_negative_log_likelihood, crf_sequence_score


def brute_scores(em, trans, start, end):
    """Score of every tag path, keyed by the path."""
    T, L = em.shape
    out = {}
    for path in itertools.product(range(L), repeat=T):
        s = start[path[0]] + end[path[-1]] + sum(em[t, path[t]] for t in range(T))
        s += sum(trans[path[t - 1], path[t]] for t in range(1, T))
        out[path] = s
    return out


def random_instance(seed, T, L):
    r = np.random.default_rng(seed)
    return r.normal(size=(T, L)) * 2, r.normal(size=(L, L)), r.normal(size=L), r.normal(size=L)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 4))
def test_partition_and_viterbi_match_enumeration(seed, T, L):
    em, trans, start, end = random_instance(seed, T, L)
    scores = brute_scores(em, trans, start, end)
    logz = crf_log_partition(Tensor(em), Tensor(trans), Tensor(start), Tensor(end)).data[0]
    assert abs(logz - sp_logsumexp(list(scores.values()))) < 1e-8
    best = max(scores, key=scores.get)
    assert tuple(crf_decode(em, trans, start, end)) == best


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 4))
def test_sequence_score_matches_enumeration(seed, T, L):
    em, trans, start, end = random_instance(seed, T, L)
    path = np.random.default_rng(seed + 1).integers(0, L, size=T)
    got = crf_sequence_score(Tensor(em), path, Tensor(trans), Tensor(start), Tensor(end)).data[0]
    assert got == pytest.approx(brute_scores(em, trans, start, end)[tuple(path)], abs=1e-12)


def test_nll_is_nonnegative_and_padding_invariant():
    em, trans, start, end = random_instance(3, 3, 4)
    tags = np.array([1, 0, 3])
    single = crf_negative_log_likelihood(Tensor(em), tags, Tensor(trans), Tensor(start), Tensor(end)).item()
    assert single >= 0
    padded = np.concatenate([em, np.full((2, 4), 99.0)])[None]
    tags_p = np.array([[1, 0, 3, 2, 2]])
    mask = np.array([[1, 1, 1, 0, 0]], dtype=bool)
    got = crf_negative_log_likelihood(Tensor(padded), tags_p, Tensor(trans), Tensor(start), Tensor(end), mask).item()
    assert got == pytest.approx(single, abs=1e-12)


def test_nll_sums_over_batch_and_skips_empty_rows():
    a = random_instance(1, 3, 3)
    b = random_instance(2, 3, 3)
    trans, start, end = (Tensor(x) for x in a[1:])
    ta, tb = np.array([0, 1, 2]), np.array([2, 2, 0])
    na = crf_negative_log_likelihood(Tensor(a[0]), ta, trans, start, end).item()
    nb = crf_negative_log_likelihood(Tensor(b[0]), tb, trans, start, end).item()
    em = Tensor(np.stack([a[0], b[0], b[0]]))
    mask = np.array([[1, 1, 1], [1, 1, 1], [0, 0, 0]], dtype=bool)
    total = crf_negative_log_likelihood(em, np.stack([ta, tb, tb]), trans, start, end, mask).item()
    assert total == pytest.approx(na + nb, abs=1e-10)


def test_probabilities_of_all_paths_sum_to_one():
    em, trans, start, end = random_instance(7, 3, 3)
    total = 0.0
    for path in itertools.product(range(3), repeat=3):
        nll = crf_negative_log_likelihood(Tensor(em), np.array(path), Tensor(trans), Tensor(start), Tensor(end))
        total += np.exp(-nll.item())
    assert total == pytest.approx(1.0, abs=1e-12)


def test_viterbi_tie_breaks_to_lower_id():
    em = np.zeros((2, 3))
    assert crf_decode(em, np.zeros((3, 3)), np.zeros(3), np.zeros(3)) == [0, 0]


def test_nll_gradients():
    r = np.random.default_rng(0)
    em = Tensor(r.normal(size=(2, 4, 3)), requires_grad=True, name="em")
    trans = Tensor(r.normal(size=(3, 3)), requires_grad=True, name="trans")
    start = Tensor(r.normal(size=3), requires_grad=True, name="start")
    end = Tensor(r.normal(size=3), requires_grad=True, name="end")
    tags = np.array([[0, 2, 1, 1], [1, 0, 0, 0]])
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=bool)
    errs = gradient_check(lambda: crf_negative_log_likelihood(em, tags, trans, start, end, mask),
                          [em, trans, start, end])
    assert max(errs.values()) < 1e-7
