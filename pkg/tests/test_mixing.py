import numpy as np
import pytest

from acousep.errors import ParameterError
from acousep.mixing import MAX_CONDITION, MixedBlock, MixingModel, load_block, mix, random_mixing_matrix, save_block
from acousep.signals import Label, Signal

from conftest import six_sources


def _noise_sources(n, length, rate=8000, seed=0):
    rng = np.random.default_rng(seed)
    return [Signal(rng.laplace(size=length), rate, Label.WIND) for _ in range(n)]


def test_random_matrix_shape_and_condition():
    model = random_mixing_matrix(6, seed=1)
    assert model.a.shape == (6, 6)
    assert model.condition <= MAX_CONDITION


def test_random_matrix_deterministic():
    assert np.array_equal(random_mixing_matrix(2, 5).a, random_mixing_matrix(2, 5).a)


@pytest.mark.parametrize("seed", range(1, 21))
def test_condition_sweep_against_svd(seed):
    a = random_mixing_matrix(6, seed).a
    s = np.linalg.svd(a, compute_uv=False)
    assert s[0] / s[-1] <= MAX_CONDITION


@pytest.mark.parametrize("n", [0, 1])
def test_too_few_sources(n):
    with pytest.raises(ParameterError):
        random_mixing_matrix(n, 0)


def test_identity_mix_is_exact():
    sources = _noise_sources(4, 300)
    block = mix(sources, MixingModel.identity(4))
    for i, s in enumerate(sources):
        assert np.array_equal(block.x[i], s.samples)


def test_diagonal_scaling():
    s1, s2 = _noise_sources(2, 100)
    block = mix([s1, s2], MixingModel(np.array([[2.0, 0.0], [0.0, 3.0]])))
    assert np.array_equal(block.x[0], 2 * s1.samples)
    assert np.array_equal(block.x[1], 3 * s2.samples)


def test_mix_matches_naive_loop():
    sources = six_sources(seed=1)
    a = random_mixing_matrix(6, seed=1).a
    block = mix(sources, MixingModel(a))
    length = len(sources[0])
    assert length == 10000
    oracle = np.zeros((6, length))
    for j in range(6):
        for n in range(length):
            acc = 0.0
            for i in range(6):
                acc += a[j, i] * sources[i].samples[n]
            oracle[j, n] = acc
    assert np.max(np.abs(block.x - oracle)) <= 1e-12


def test_mix_is_linear():
    sources = _noise_sources(3, 200)
    model = random_mixing_matrix(3, 2)
    scaled = [Signal(2.5 * s.samples, s.sample_rate, s.label) for s in sources]
    assert np.allclose(mix(scaled, model).x, 2.5 * mix(sources, model).x, rtol=1e-14, atol=1e-14)


def test_inverse_reconstructs_sources():
    sources = six_sources(seed=2)
    block = mix(sources, random_mixing_matrix(6, 3))
    s_hat = np.linalg.solve(block.model.a, block.x)
    truth = np.vstack([s.samples for s in sources])
    assert np.linalg.norm(s_hat - truth) / np.linalg.norm(truth) <= 1e-9


def test_mismatches_rejected():
    a, b = _noise_sources(2, 100)
    with pytest.raises(ParameterError):
        mix([a, Signal(b.samples[:50], b.sample_rate)], MixingModel.identity(2))
    with pytest.raises(ParameterError):
        mix([a, Signal(b.samples, 16000)], MixingModel.identity(2))
    with pytest.raises(ParameterError):
        mix([a, b], MixingModel.identity(3))


def test_singular_matrix_rejected():
    with pytest.raises(ParameterError):
        MixingModel(np.ones((2, 2)))


def test_short_block_rejected():
    with pytest.raises(ParameterError):
        MixedBlock(np.zeros((4, 7)), 8000)


def test_block_persistence(tmp_path):
    sources = _noise_sources(3, 400, seed=4)
    block = mix(sources, random_mixing_matrix(3, 9))
    save_block(block, tmp_path)
    back = load_block(tmp_path)
    assert back.sample_rate == block.sample_rate
    assert np.allclose(back.x, block.x, rtol=1e-6, atol=1e-6)
    assert np.array_equal(back.model.a, block.model.a)
    assert back.labels == block.labels
    assert back.has_truth
