import numpy as np
import pytest

from emomtl import numerics
from emomtl.numerics import Rng, clamp, hadamard, matmul, xavier_init


def naive_matmul(a, b):
    # triple-loop oracle, independent of the production path
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_identity():
    a = Rng(3).normal(0, 1, (3, 3))
    assert np.allclose(matmul(np.eye(3, dtype=np.float32), a), a)


def test_matmul_analytic():
    a = np.array([[1, 2], [3, 4]], dtype=np.float32)
    b = np.array([[1], [1]], dtype=np.float32)
    assert matmul(a, b).tolist() == [[3], [7]]


def test_matmul_matches_naive_oracle():
    rng = Rng(11)
    a = rng.normal(0, 1, (7, 5))
    b = rng.normal(0, 1, (5, 3))
    assert np.abs(matmul(a, b) - naive_matmul(a, b)).max() < 1e-6


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(np.zeros((2, 3), dtype=np.float32), np.zeros((2, 2), dtype=np.float32))


def test_matmul_associativity():
    rng = Rng(5)
    for _ in range(5):
        a, b, c = (rng.normal(0, 1, (4, 4)) for _ in range(3))
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        # float32 accumulation: relative, not exact
        assert np.abs(left - right).max() / np.abs(left).max() < 1e-4


def test_xavier_deterministic():
    assert np.array_equal(xavier_init(Rng(1), 4, 4), xavier_init(Rng(1), 4, 4))


def test_xavier_bound():
    w = xavier_init(Rng(1), 4, 4)
    assert np.abs(w).max() <= np.sqrt(6 / 8)


def test_xavier_sample_mean():
    w = xavier_init(Rng(9), 1000, 100)
    bound = np.sqrt(6 / 1100)
    sigma = bound / np.sqrt(3)  # stdev of U(-b, b)
    assert abs(w.mean()) < 3 * sigma / np.sqrt(w.size)


def test_xavier_rejects_bad_dims():
    with pytest.raises(ValueError):
        xavier_init(Rng(0), 0, 4)


def test_elementwise_trivial_cases():
    a = np.array([[2.0, 3.0]], dtype=np.float32)
    assert np.array_equal(numerics.add(a, np.zeros_like(a)), a)
    assert hadamard(a, np.array([[4.0, 5.0]], dtype=np.float32)).tolist() == [[8, 15]]
    assert clamp(np.array([0.0, 1e-20]), lo=1e-12).min() >= 1e-12


def test_elementwise_shape_mismatch():
    with pytest.raises(ValueError):
        numerics.add(np.zeros(2), np.zeros(3))


def test_operations_pure():
    a = Rng(2).normal(0, 1, (3, 3))
    snapshot = a.copy()
    matmul(a, a)
    numerics.scale(a, 2.0)
    clamp(a, lo=0.0)
    assert np.array_equal(a, snapshot)


def test_rng_identical_seed_identical_stream():
    r1, r2 = Rng(123), Rng(123)
    assert np.array_equal(r1.normal(0, 1, 50), r2.normal(0, 1, 50))
    assert np.array_equal(r1.permutation(20), r2.permutation(20))


def test_rng_spawn_streams_independent_and_stable():
    assert np.array_equal(Rng(7).spawn("a").random(10), Rng(7).spawn("a").random(10))
    assert not np.array_equal(Rng(7).spawn("a").random(10), Rng(7).spawn("b").random(10))


def test_precision_switch():
    with numerics.precision("float64"):
        assert numerics.zeros(2).dtype == np.float64
    assert numerics.zeros(2).dtype == np.float32
