import numpy as np
import pytest

from convmkit.mmd import (gaussian_kernel, median_bandwidth, mmd_brute_force,
                          mmd_loss, pairwise_sq_dists)
from convmkit.tensor import Tensor


def test_kernel_self_is_one():
    x = np.array([1.0, -2.0, 3.0])
    assert gaussian_kernel(x, x, 2.0) == 1.0


def test_kernel_requires_positive_sigma():
    with pytest.raises(ValueError):
        gaussian_kernel(np.zeros(2), np.ones(2), 0.0)


def test_median_of_three_points():
    # pairwise distances {1, 2, 3} -> median 2
    assert median_bandwidth(np.array([[0.0], [1.0], [3.0]])) == 2.0


def test_median_even_pair_count():
    # four 1-D points 0,1,2,4 -> distances {1,1,2,2,3,4} -> (2+2)/2
    assert median_bandwidth(np.array([[0.0], [1.0], [2.0], [4.0]])) == 2.0


def test_median_matches_exhaustive_oracle():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 8))
    dists = sorted(float(np.linalg.norm(x[i] - x[j]))
                   for i in range(50) for j in range(i + 1, 50))
    want = float(np.median(dists))
    assert abs(median_bandwidth(x) - want) < 1e-12


def test_median_zero_distance_error():
    with pytest.raises(ValueError):
        median_bandwidth(np.zeros((4, 3)))


def test_mmd_identical_sets_zero():
    x = np.random.default_rng(1).standard_normal((6, 4))
    val = float(mmd_loss(Tensor(x, dtype=np.float64), Tensor(x.copy(), dtype=np.float64),
                         1.3).data)
    assert val == 0.0


def test_mmd_single_sample_closed_form():
    xs = np.array([[1.0, 2.0]])
    xt = np.array([[0.5, -1.0]])
    sigma = 1.7
    want = 2.0 - 2.0 * np.exp(-np.sum((xs - xt) ** 2) / (2 * sigma ** 2))
    got = float(mmd_loss(Tensor(xs, dtype=np.float64), Tensor(xt, dtype=np.float64),
                         sigma).data)
    assert abs(got - want) < 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_mmd_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    ns, nt, d = rng.integers(2, 8), rng.integers(2, 8), rng.integers(1, 6)
    s = rng.standard_normal((ns, d))
    t = rng.standard_normal((nt, d))
    sigma = float(rng.uniform(0.5, 3.0))
    got = float(mmd_loss(Tensor(s, dtype=np.float64), Tensor(t, dtype=np.float64),
                         sigma).data)
    assert abs(got - mmd_brute_force(s, t, sigma)) < 1e-10


def test_mmd_symmetry():
    rng = np.random.default_rng(5)
    s = rng.standard_normal((6, 4))
    t = rng.standard_normal((5, 4))
    a = float(mmd_loss(Tensor(s, dtype=np.float64), Tensor(t, dtype=np.float64), 1.1).data)
    b = float(mmd_loss(Tensor(t, dtype=np.float64), Tensor(s, dtype=np.float64), 1.1).data)
    assert a == b


def test_mmd_nonnegative_and_positive_on_distinct_sets():
    rng = np.random.default_rng(6)
    for _ in range(10):
        s = rng.standard_normal((8, 3))
        t = rng.standard_normal((8, 3)) + 0.5
        v = float(mmd_loss(Tensor(s, dtype=np.float64), Tensor(t, dtype=np.float64),
                           1.0).data)
        assert v > 0.0


def test_mmd_invariant_under_common_feature_permutation():
    rng = np.random.default_rng(7)
    s = rng.standard_normal((5, 6))
    t = rng.standard_normal((4, 6))
    perm = rng.permutation(6)
    a = float(mmd_loss(Tensor(s, dtype=np.float64), Tensor(t, dtype=np.float64), 0.9).data)
    b = float(mmd_loss(Tensor(s[:, perm], dtype=np.float64),
                       Tensor(t[:, perm], dtype=np.float64), 0.9).data)
    assert abs(a - b) < 1e-12


def test_mmd_gradient_flows_into_both_sets():
    rng = np.random.default_rng(8)
    s = Tensor(rng.standard_normal((4, 3)), requires_grad=True, dtype=np.float64)
    t = Tensor(rng.standard_normal((5, 3)), requires_grad=True, dtype=np.float64)
    mmd_loss(s, t, 1.2).backward()
    assert s.grad is not None and np.any(s.grad != 0)
    assert t.grad is not None and np.any(t.grad != 0)


def test_mmd_dim_mismatch():
    with pytest.raises(ValueError):
        mmd_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), 1.0)


def test_pairwise_sq_dists_clipped_nonnegative():
    x = np.full((3, 2), 7.0)
    assert np.all(pairwise_sq_dists(x, x) >= 0.0)
