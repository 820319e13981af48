import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acousep.errors import ParameterError
from acousep.fastica import FastICAConfig, separate
from acousep.metrics import SIR_CAP_DB, accuracy, align, aligned_sirs, sir_db
from acousep.mixing import mix, random_mixing_matrix

from conftest import six_sources


@pytest.fixture(scope="module")
def truth():
    return np.random.default_rng(7).laplace(size=(6, 2000))


def test_align_identity(truth):
    amap = align(truth, truth)
    assert np.array_equal(amap.permutation, np.arange(6))
    assert np.all(amap.signs == 1)
    assert np.allclose(amap.scales, 1.0, atol=1e-12)


def test_align_swap_and_negation(truth):
    est = truth[[1, 0, 2, 3, 4, 5]].copy()
    est[2] *= -1
    amap = align(est, truth)
    assert list(amap.permutation[:3]) == [1, 0, 2]
    assert amap.signs[2] == -1
    assert np.allclose(amap.apply(est), truth, atol=1e-12)


def test_align_all_permutations(truth):
    for perm in itertools.permutations(range(6)):
        perm = np.array(perm)
        amap = align(truth[perm], truth)
        # truth row i sits at estimate row argwhere(perm == i)
        assert np.array_equal(perm[amap.permutation], np.arange(6))


def test_align_six_source_run():
    block = mix(six_sources(seed=8), random_mixing_matrix(6, 8))
    _, amap = aligned_sirs(separate(block, FastICAConfig(seed=8)).y, block.sources)
    assert np.all(np.abs(amap.correlations) >= 0.95)


def test_sir_examples(rng):
    s = rng.standard_normal(1000)
    assert sir_db(s, s) == SIR_CAP_DB
    e = rng.standard_normal(1000)
    e *= np.sqrt(0.01 * np.sum(s**2) / np.sum(e**2))
    assert sir_db(s + e, s) == pytest.approx(20.0, abs=1e-9)
    assert sir_db(np.zeros(1000), s) == pytest.approx(0.0, abs=1e-12)


def test_sir_zero_truth():
    with pytest.raises(ParameterError):
        sir_db(np.ones(10), np.zeros(10))


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 1000))
def test_sir_scale_invariant(gain, seed):
    r = np.random.default_rng(seed)
    s, y = r.standard_normal(200), r.standard_normal(200)
    assert sir_db(gain * y, gain * s) == pytest.approx(sir_db(y, s), rel=1e-9, abs=1e-9)


def test_accuracy_examples():
    assert accuracy([1, -1, 1], [1, -1, 1]).percent == 100.0
    assert accuracy([1, 1, -1, -1], [1, -1, 1, -1]).percent == 50.0


def test_accuracy_hand_count():
    pred = [1, 1, -1, -1, 1, -1, 1, 1, -1, -1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1]
    true = [1, -1, -1, 1, 1, -1, 1, -1, -1, -1, 1, 1, -1, 1, -1, -1, 1, -1, -1, 1]
    # counted by hand: tp 7, fp 4, tn 7, fn 2
    res = accuracy(pred, true)
    assert (res.true_positive, res.false_positive, res.true_negative, res.false_negative) == (7, 4, 7, 2)
    assert res.percent == pytest.approx(70.0)


def test_accuracy_empty():
    with pytest.raises(ParameterError):
        accuracy([], [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([1, -1]), st.sampled_from([1, -1])), min_size=1, max_size=60))
def test_accuracy_bounds(pairs):
    pred, true = zip(*pairs)
    res = accuracy(pred, true)
    assert 0.0 <= res.percent <= 100.0
    assert res.true_positive + res.false_positive + res.true_negative + res.false_negative == len(pairs)
