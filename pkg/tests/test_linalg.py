import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradnorm import linalg
from gradnorm.linalg import Rng, ShapeError


def splitmix_reference(seed, k):
    """Plain-integer SplitMix64, independent of both kernel backends."""
    mask = (1 << 64) - 1
    z = (seed + (k + 1) * 0x9E3779B97F4A7C15) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return z ^ (z >> 31)


def test_matmul_examples():
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(linalg.matmul(linalg.identity(2), b), b)
    np.testing.assert_array_equal(linalg.matmul(linalg.zeros(3, 2), b), linalg.zeros(3, 2))
    np.testing.assert_array_equal(linalg.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), b), [[19, 22], [43, 50]])


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        linalg.matmul(linalg.zeros(2, 3), linalg.zeros(2, 3))
    with pytest.raises(ShapeError):
        linalg.matmul_tn(linalg.zeros(2, 3), linalg.zeros(3, 3))
    with pytest.raises(ShapeError):
        linalg.matmul_nt(linalg.zeros(2, 3), linalg.zeros(3, 2))


def _naive(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            out[i, j] = sum(a[i, p] * b[p, j] for p in range(a.shape[1]))
    return out


@given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**32))
def test_matmul_matches_triple_loop(m, k, n, seed):
    rng = Rng(seed)
    a = rng.normal(m * k).reshape(m, k)
    b = rng.normal(k * n).reshape(k, n)
    want = _naive(a, b)
    np.testing.assert_allclose(linalg.matmul(a, b), want, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(linalg.matmul_tn(np.ascontiguousarray(a.T), b), want, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(linalg.matmul_nt(a, np.ascontiguousarray(b.T)), want, rtol=1e-12, atol=1e-12)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32))
def test_matmul_associative(m, k, n, p, seed):
    rng = Rng(seed)
    a = rng.normal(m * k).reshape(m, k)
    b = rng.normal(k * n).reshape(k, n)
    c = rng.normal(n * p).reshape(n, p)
    left = linalg.matmul(linalg.matmul(a, b), c)
    right = linalg.matmul(a, linalg.matmul(b, c))
    assert np.linalg.norm(left - right) <= 1e-10 * max(np.linalg.norm(left), 1.0)


def test_l2_norm_examples():
    assert linalg.l2_norm(linalg.zeros(3, 3)) == 0.0
    assert linalg.l2_norm(np.array([[3.0, 4.0]])) == 5.0
    m = Rng(1).normal(12).reshape(3, 4)
    assert linalg.l2_norm(-2.5 * m) == pytest.approx(2.5 * linalg.l2_norm(m), rel=1e-14)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30))
def test_l2_norm_nonnegative_and_zero_only_at_zero(vals):
    n = linalg.l2_norm(np.array([vals]))
    assert n >= 0.0
    assert (n == 0.0) == all(v == 0.0 for v in vals)


def test_gaussian_fill_degenerate_and_deterministic():
    m = linalg.gaussian_fill(Rng(3), 4, 5, mean=2.5, std=0.0)
    assert np.all(m == 2.5)
    a = linalg.gaussian_fill(Rng(9), 6, 7, 0.0, 1.0)
    b = linalg.gaussian_fill(Rng(9), 6, 7, 0.0, 1.0)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (6, 7) and np.all(np.isfinite(a))
    with pytest.raises(ValueError):
        linalg.gaussian_fill(Rng(0), 2, 2, std=-1.0)


def test_gaussian_fill_moments():
    m = linalg.gaussian_fill(Rng(2024), 1000, 1000, 0.0, 10.0)
    assert abs(m.mean()) < 0.1
    assert abs(m.std() / 10.0 - 1.0) < 0.01


def test_stream_matches_reference_splitmix():
    for seed in (0, 1, 0xDEADBEEF, (1 << 64) - 1):
        rng = Rng(seed)
        got = rng.uint64(20).tolist()
        assert got == [splitmix_reference(seed, k) for k in range(20)]
        assert rng.counter == 20


def test_uniform_is_top_53_bits():
    seed = 77
    u = Rng(seed).uniform(50)
    want = [((splitmix_reference(seed, k) >> 11) + 0.5) / 2**53 for k in range(50)]
    assert u.tolist() == want
    assert np.all((u > 0) & (u < 1))


def test_normal_is_box_muller_on_uniform_pairs():
    seed = 5
    z = Rng(seed).normal(7)
    u = [((splitmix_reference(seed, k) >> 11) + 0.5) / 2**53 for k in range(8)]
    want = []
    for j in range(4):
        r = np.sqrt(-2.0 * np.log(u[2 * j]))
        want += [r * np.cos(2 * np.pi * u[2 * j + 1]), r * np.sin(2 * np.pi * u[2 * j + 1])]
    np.testing.assert_allclose(z, want[:7], rtol=1e-14, atol=1e-15)
    rng = Rng(seed)
    rng.normal(7)
    assert rng.counter == 8


def test_split_draws_equal_one_draw():
    a = Rng(11)
    parts = np.concatenate([a.uniform(3), a.uniform(5)])
    np.testing.assert_array_equal(parts, Rng(11).uniform(8))


def test_derive_seed_separates_labels():
    seeds = {linalg.derive_seed(0, lab) for lab in ("base", "train", "test", "init", 0, 1)}
    assert len(seeds) == 6
    assert linalg.derive_seed(4, "eps", 2) == linalg.derive_seed(4, "eps", 2)
    assert linalg.derive_seed(4, "eps", 2) != linalg.derive_seed(4, "eps", 3)


def test_map_elementwise():
    z = linalg.zeros(2, 3)
    np.testing.assert_array_equal(linalg.map_elementwise(z, "tanh"), z)
    neg = -np.abs(Rng(0).normal(6).reshape(2, 3)) - 0.1
    np.testing.assert_array_equal(linalg.map_elementwise(neg, "relu"), z)
    np.testing.assert_array_equal(linalg.map_elementwise(neg, "relu_derivative"), z)
    big = Rng(1).normal(100).reshape(10, 10) * 3
    t = linalg.map_elementwise(big, "tanh")
    assert np.all(np.abs(t) < 1)
    with pytest.raises(ValueError, match="unknown"):
        linalg.map_elementwise(z, "sigmoid")
