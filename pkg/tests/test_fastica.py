import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acousep.errors import DegeneracyError, ParameterError
from acousep.fastica import (
    Contrast,
    FastICAConfig,
    center,
    contrast_eval,
    separate,
    symmetric_decorrelation,
    whiten,
)
from acousep.metrics import aligned_sirs
from acousep.mixing import MixingModel, mix, random_mixing_matrix

from conftest import six_sources


def _cov(z):
    return z @ z.T / z.shape[1]


@pytest.mark.parametrize(
    "contrast, u, expected",
    [
        (Contrast.TANH, 0.0, (0.0, 1.0)),
        (Contrast.CUBIC, 2.0, (8.0, 12.0)),
        (Contrast.GAUSS, 1.0, (np.exp(-0.5), 0.0)),
    ],
)
def test_contrast_values(contrast, u, expected):
    g, dg = contrast_eval(contrast, u)
    assert g == pytest.approx(expected[0], abs=1e-15)
    assert dg == pytest.approx(expected[1], abs=1e-15)


@pytest.mark.parametrize("contrast", list(Contrast))
def test_contrast_derivative_matches_finite_difference(contrast):
    u = np.linspace(-3, 3, 61)
    h = 1e-6
    _, dg = contrast_eval(contrast, u)
    fd = (contrast_eval(contrast, u + h)[0] - contrast_eval(contrast, u - h)[0]) / (2 * h)
    assert np.allclose(dg, fd, atol=1e-6)


def test_center_constant_row():
    out, mean = center(np.vstack([np.full(50, 5.0), np.arange(50.0)]))
    assert np.all(out[0] == 0.0)
    assert mean[0] == 5.0


def test_center_zero_mean_unchanged():
    row = np.tile([1.0, -1.0], 20)
    out, _ = center(row[None, :])
    assert np.max(np.abs(out - row)) <= 1e-15


def test_center_matches_summation(rng):
    x = rng.normal(3.0, 2.0, size=(4, 999))
    out, mean = center(x)
    for j in range(4):
        naive = sum(float(v) for v in x[j]) / x.shape[1]
        assert mean[j] == pytest.approx(naive, abs=1e-12)
        assert abs(sum(float(v) for v in out[j]) / x.shape[1]) <= 1e-14


def test_whiten_white_input_is_fixed_point():
    # Walsh rows: exactly zero-mean, unit-variance and mutually orthogonal.
    n = np.arange(1024)
    x = np.vstack([1.0 - 2.0 * ((n >> b) & 1) for b in range(3)])
    z, transform, _ = whiten(x)
    assert np.linalg.norm(_cov(z) - np.eye(3)) <= 1e-6
    assert np.allclose(np.abs(transform), np.eye(3)[np.argmax(np.abs(transform), axis=1)], atol=1e-12)


def test_whiten_diagonal_case():
    n = np.arange(2048)
    x = np.vstack([2.0 * (1.0 - 2.0 * (n & 1)), 3.0 * (1.0 - 2.0 * ((n >> 1) & 1))])
    _, transform, _ = whiten(x)
    mags = np.sort(np.abs(transform[np.abs(transform) > 1e-12]))
    assert np.allclose(mags, [1 / 3, 1 / 2], atol=1e-12)
    # exactly one nonzero per row: a permuted, signed diagonal
    assert np.all(np.sum(np.abs(transform) > 1e-12, axis=1) == 1)


def test_whiten_random_block(rng):
    x = rng.standard_normal((6, 6)) @ rng.laplace(size=(6, 10000))
    xc, _ = center(x)
    z, _, _ = whiten(xc)
    # covariance computed by explicit column loop
    acc = np.zeros((6, 6))
    for col in z.T:
        acc += np.outer(col, col)
    assert np.linalg.norm(acc / z.shape[1] - np.eye(6)) <= 1e-6


def test_whiten_collinear_rows_is_degenerate(rng):
    row = rng.standard_normal(500)
    x = np.vstack([row, 2 * row, rng.standard_normal(500)])
    with pytest.raises(DegeneracyError, match="ratio"):
        whiten(center(x)[0])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_symmetric_decorrelation_is_orthonormal(n, seed):
    w = symmetric_decorrelation(np.random.default_rng(seed).standard_normal((n, n)))
    assert np.linalg.norm(w @ w.T - np.eye(n)) <= 1e-8


def test_symmetric_decorrelation_matches_polar_factor(rng):
    w = rng.standard_normal((5, 5))
    u, _, vt = np.linalg.svd(w)
    assert np.allclose(symmetric_decorrelation(w), u @ vt, atol=1e-12)


def test_identity_mixing_recovers_sources(rng):
    s = rng.laplace(size=(4, 8000))
    s = (s - s.mean(axis=1, keepdims=True)) / s.std(axis=1, keepdims=True)
    result = separate(s, FastICAConfig(seed=1))
    sirs, _ = aligned_sirs(result.y, s)
    assert np.all(sirs >= 20)


def test_six_synthetic_sources_random_mixing():
    sources = six_sources(seed=3)
    block = mix(sources, random_mixing_matrix(6, 3))
    result = separate(block, FastICAConfig(contrast=Contrast.TANH, tolerance=1e-6, max_iterations=200, seed=3))
    assert result.converged
    assert result.iterations_used <= 200
    sirs, amap = aligned_sirs(result.y, block.sources)
    assert sirs.mean() >= 20
    assert np.all(np.abs(amap.correlations) >= 0.95)


def test_result_invariants():
    block = mix(six_sources(seed=4), random_mixing_matrix(6, 4))
    result = separate(block, FastICAConfig(seed=9))
    assert np.allclose(result.y.var(axis=1), 1.0, atol=1e-6)
    w = result.rotation
    assert np.linalg.norm(w @ w.T - np.eye(6)) <= 1e-8
    assert np.array_equal(result.apply(block.x), result.y)
    again = separate(block, FastICAConfig(seed=9))
    assert np.array_equal(again.y, result.y)
    assert np.array_equal(again.unmixing, result.unmixing)


@pytest.mark.parametrize("contrast", list(Contrast))
def test_contrasts_all_separate(contrast):
    block = mix(six_sources(seed=6), random_mixing_matrix(6, 6))
    result = separate(block, FastICAConfig(contrast=contrast, seed=2, max_iterations=400))
    sirs, _ = aligned_sirs(result.y, block.sources)
    assert np.median(sirs) >= 10


def test_permuted_signed_fixed_point():
    block = mix(six_sources(seed=5), random_mixing_matrix(6, 5))
    result = separate(block, FastICAConfig(seed=0))
    perm = np.random.default_rng(1).permutation(6)
    signs = np.array([1, -1, 1, -1, -1, 1.0])
    flipped = signs[:, None] * result.y[perm]
    a, _ = aligned_sirs(result.y, block.sources)
    b, _ = aligned_sirs(flipped, block.sources)
    assert np.allclose(a, b)


def test_gaussian_sources_still_return(rng):
    result = separate(rng.standard_normal((4, 4000)), FastICAConfig(max_iterations=20, seed=0))
    assert np.all(np.isfinite(result.y))
    assert result.iterations_used <= 20


def test_block_too_short():
    with pytest.raises(ParameterError):
        separate(np.random.default_rng(0).standard_normal((4, 7)))


@pytest.mark.parametrize("kwargs", [dict(max_iterations=0), dict(tolerance=0.0), dict(contrast="sigmoid")])
def test_bad_config(kwargs):
    with pytest.raises((ParameterError, ValueError)):
        FastICAConfig(**kwargs)


def test_identity_model_block():
    s = np.random.default_rng(3).laplace(size=(3, 3000))
    from acousep.signals import Signal

    block = mix([Signal(r, 8000) for r in s], MixingModel.identity(3))
    assert separate(block).y.shape == (3, 3000)
