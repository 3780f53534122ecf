import itertools

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from quartet import _accel, kernels

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


def _mask(rng, T, M):
    allowed = rng.random((T, M)) > 0.3
    allowed[0] = False  # one fully masked row
    return allowed


def test_softmax_masked_entries_are_exact_zero(backend, rng):
    x = rng.standard_normal((3, 5, 7))
    allowed = _mask(rng, 5, 7)
    p = kernels.masked_softmax(x, allowed)
    assert np.all(p[:, ~allowed] == 0.0)
    assert np.all(p[:, 0] == 0.0)
    sums = p.sum(-1)[:, 1:]
    np.testing.assert_allclose(sums[:, allowed[1:].any(1)], 1.0, atol=1e-12)


def test_softmax_matches_reference(backend, rng):
    x = rng.standard_normal((2, 4, 6))
    allowed = np.ones((4, 6), bool)
    ref = np.exp(x) / np.exp(x).sum(-1, keepdims=True)
    np.testing.assert_allclose(kernels.masked_softmax(x, allowed), ref, rtol=1e-12)


def test_softmax_backward_matches_jacobian(backend, rng):
    x = rng.standard_normal((1, 1, 5))
    p = kernels.masked_softmax(x, np.ones((1, 5), bool))
    g = rng.standard_normal((1, 1, 5))
    J = np.diag(p[0, 0]) - np.outer(p[0, 0], p[0, 0])
    np.testing.assert_allclose(kernels.masked_softmax_backward(p, g)[0, 0], J @ g[0, 0], rtol=1e-12)


def test_layernorm_against_direct_formula(backend, rng):
    x = rng.standard_normal((6, 8))
    gain, bias = rng.standard_normal(8), rng.standard_normal(8)
    y, xhat, rstd = kernels.layernorm(x, gain, bias, 1e-5)
    mu = x.mean(1, keepdims=True)
    ref = (x - mu) / np.sqrt(x.var(1, keepdims=True) + 1e-5) * gain + bias
    np.testing.assert_allclose(y, ref, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(rstd, 1 / np.sqrt(x.var(1) + 1e-5), rtol=1e-12)


def test_sparse_ce_against_log_softmax(backend, rng):
    logits = rng.standard_normal((5, 9))
    t = rng.integers(0, 9, 5)
    losses, grad = kernels.sparse_ce(logits, t)
    logp = logits - np.log(np.exp(logits).sum(1, keepdims=True))
    np.testing.assert_allclose(losses, -logp[np.arange(5), t], rtol=1e-12)
    onehot = np.eye(9)[t]
    np.testing.assert_allclose(grad, (np.exp(logp) - onehot) / 5, rtol=1e-10, atol=1e-14)


@given(hnp.arrays(np.float64, st.integers(1, 30), elements=st.integers(-5, 5).map(float)))
def test_midrank_matches_scipy(x):
    for which in ("numpy",) + (("numba",) if _accel.HAVE_NUMBA else ()):
        np.testing.assert_allclose(kernels.impl("midrank", which)(x), scipy.stats.rankdata(x))


def _brute_counts(doubled):
    total = int(sum(doubled))
    counts = np.zeros(total + 1)
    for signs in itertools.product((0, 1), repeat=len(doubled)):
        counts[sum(r for r, s in zip(doubled, signs) if s)] += 1
    return counts


@settings(max_examples=40)
@given(st.lists(st.integers(1, 12), min_size=1, max_size=9))
def test_signed_rank_counts_match_enumeration(doubled):
    ref = _brute_counts(doubled)
    for which in ("numpy",) + (("numba",) if _accel.HAVE_NUMBA else ()):
        got = kernels.impl("signed_rank_counts", which)(np.array(doubled, dtype=np.int64))
        np.testing.assert_array_equal(got, ref)


@needs_numba
def test_backends_agree(rng):
    x = rng.standard_normal((4, 6, 6)).astype(np.float32)
    allowed = np.tril(np.ones((6, 6), bool), -1)
    a = kernels.impl("softmax", "numpy")(x, allowed)
    b = kernels.impl("softmax", "numba")(x, allowed)
    np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-7)
    x2 = rng.standard_normal((7, 16))
    ga = kernels.impl("layernorm", "numpy")(x2, np.ones(16), np.zeros(16), 1e-5)
    gb = kernels.impl("layernorm", "numba")(x2, np.ones(16), np.zeros(16), 1e-5)
    for u, v in zip(ga, gb):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-12)


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        kernels.set_backend("cuda")
