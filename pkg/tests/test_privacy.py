import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pfairdp.privacy import (
    DEFAULT_ORDERS,
    DpParams,
    NonPrivateError,
    clip_per_sample,
    compute_epsilon,
    epsilon_from_rdp,
    noise_for_target_epsilon,
    noisy_aggregate,
    rdp_subsampled_gaussian,
)


def mp_rdp(q, sigma, alpha, dps=60):
    """Plain binomial expansion of E[(mixture/base)^alpha] at high precision."""
    with mp.workdps(dps):
        q, sigma = mp.mpf(q), mp.mpf(sigma)
        total = mp.fsum(
            mp.binomial(alpha, k) * (1 - q) ** (alpha - k) * q**k * mp.e ** ((k * k - k) / (2 * sigma**2))
            for k in range(alpha + 1)
        )
        return mp.log(total) / (alpha - 1)


# the 20-point grid shared with the acceptance suite
RDP_GRID = [
    (q, s, a)
    for q, s, a in [
        (0.001, 0.8, 2), (0.001, 2.0, 16), (0.004, 1.1, 8), (0.004, 5.0, 64), (0.01, 1.5, 2),
        (0.01, 1.5, 32), (0.01, 1.5, 64), (0.02, 1.0, 4), (0.02, 1.0, 12), (0.02, 3.0, 40),
        (0.05, 0.7, 3), (0.05, 1.2, 20), (0.1, 1.0, 6), (0.1, 2.5, 50), (0.2, 0.9, 5),
        (0.2, 4.0, 64), (0.5, 1.0, 10), (0.5, 3.0, 30), (0.9, 1.3, 7), (0.0022, 1.0, 256),
    ]
]


def test_clip_under_cap_unchanged():
    g = np.array([[0.3, 0.4]])
    np.testing.assert_array_equal(clip_per_sample(g, 1.0), g)


def test_clip_three_four_five():
    np.testing.assert_allclose(clip_per_sample(np.array([[3.0, 4.0]]), 1.0), [[0.6, 0.8]])


def test_clip_zero_row_passes():
    np.testing.assert_array_equal(clip_per_sample(np.zeros((1, 3)), 1.0), np.zeros((1, 3)))


@given(
    st.lists(st.lists(st.floats(-1e4, 1e4, allow_nan=False), min_size=3, max_size=3), min_size=1, max_size=10),
    st.floats(1e-3, 10),
)
@settings(max_examples=200, deadline=None)
def test_clip_never_increases_norms_and_caps(rows, c):
    g = np.array(rows)
    out = clip_per_sample(g, c)
    before = np.linalg.norm(g, axis=1)
    after = np.linalg.norm(out, axis=1)
    assert np.all(after <= before + 1e-12)
    assert np.all(after <= c + 1e-12 * max(1.0, c))


def test_noisy_aggregate_without_noise_is_mean():
    g = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = noisy_aggregate(g, 1.0, 0.0, 2, np.random.default_rng(0))
    np.testing.assert_array_equal(out, [2.0, 3.0])


def test_noisy_aggregate_deterministic_given_rng():
    g = np.ones((4, 5))
    a = noisy_aggregate(g, 1.0, 1.0, 4, np.random.default_rng(9))
    b = noisy_aggregate(g, 1.0, 1.0, 4, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


def test_noisy_aggregate_variance():
    rng = np.random.default_rng(1)
    draws = np.array([noisy_aggregate(np.zeros((1, 3)), 1.0, 1.0, 1, rng) for _ in range(100_000)])
    np.testing.assert_allclose(draws.var(axis=0), 1.0, rtol=0.05)


def test_noisy_aggregate_empty_batch():
    with pytest.raises(ValueError):
        noisy_aggregate(np.zeros((0, 3)), 1.0, 1.0, 1, np.random.default_rng(0))


def test_full_batch_is_gaussian_rdp():
    assert rdp_subsampled_gaussian(1.0, 1.0, [2])[0] == 1.0
    orders = np.arange(2, 65)
    np.testing.assert_allclose(rdp_subsampled_gaussian(1.0, 1.7, orders), orders / (2 * 1.7**2), rtol=0, atol=1e-12)


def test_zero_sampling_rate_is_free():
    np.testing.assert_array_equal(rdp_subsampled_gaussian(0.0, 1.0, [2, 10, 64]), 0.0)
    # q -> 0 drives every order to 0 (for large orders only once q^alpha beats exp(alpha^2 / 2 sigma^2))
    values = [rdp_subsampled_gaussian(q, 1.0, [2, 64]) for q in (1e-2, 1e-6, 1e-20, 1e-40)]
    assert all(np.all(b <= a) for a, b in zip(values, values[1:]))
    assert np.all(values[-1] < 1e-12)


def test_zero_noise_is_non_private():
    with pytest.raises(NonPrivateError):
        rdp_subsampled_gaussian(0.1, 0.0, [2])


def test_invalid_orders():
    with pytest.raises(ValueError):
        rdp_subsampled_gaussian(0.1, 1.0, [1])
    with pytest.raises(ValueError):
        rdp_subsampled_gaussian(0.1, 1.0, [2.5])


def test_rdp_matches_high_precision_oracle_on_q001_s15():
    # frozen from the 60-digit binomial expansion
    frozen = {2: 5.5960783926800926e-05, 32: 2.3574932607812135, 64: 9.5439540968435415}
    got = rdp_subsampled_gaussian(0.01, 1.5, list(frozen))
    for (alpha, want), value in zip(frozen.items(), got):
        assert value == pytest.approx(want, rel=1e-6)
    orders = list(range(2, 65))
    got = rdp_subsampled_gaussian(0.01, 1.5, orders)
    for alpha, value in zip(orders, got):
        assert value == pytest.approx(float(mp_rdp(0.01, 1.5, alpha)), rel=1e-6)


@pytest.mark.parametrize("q,sigma,alpha", RDP_GRID)
def test_rdp_grid_against_oracle(q, sigma, alpha):
    got = rdp_subsampled_gaussian(q, sigma, [alpha])[0]
    assert got == pytest.approx(float(mp_rdp(q, sigma, alpha)), rel=1e-6)


def test_rdp_non_negative_and_monotone_in_order():
    for q, sigma in [(0.001, 0.5), (0.02, 1.0), (0.3, 4.0)]:
        r = rdp_subsampled_gaussian(q, sigma, DEFAULT_ORDERS)
        assert np.all(r >= 0)
        assert np.all(np.diff(r) >= 0)


def test_epsilon_zero_steps():
    assert epsilon_from_rdp([0.5, 0.2], [2, 3], steps=0).epsilon == 0.0


def test_epsilon_requires_orders():
    with pytest.raises(ValueError):
        epsilon_from_rdp([], [], steps=1)


def test_epsilon_matches_dense_order_oracle():
    # 60-digit oracle, minimum over every integer order 2..256
    frozen = 6.91285946602862
    with mp.workdps(40):
        oracle = min(
            2000 * mp_rdp(0.02, 1.0, a, dps=40) + mp.log(mp.mpf(10) ** 5) / (a - 1) for a in range(2, 257)
        )
    assert float(oracle) == pytest.approx(frozen, rel=1e-9)
    assert compute_epsilon(1.0, 0.02, 2000, 1e-5).epsilon == pytest.approx(frozen, rel=0.02)


def test_epsilon_monotone_on_grid():
    for q in (0.001, 0.01, 0.05):
        for sigma in (0.7, 1.0, 2.0, 4.0):
            eps_steps = [compute_epsilon(sigma, q, t).epsilon for t in (10, 20, 40, 80, 160)]
            assert all(a <= b for a, b in zip(eps_steps, eps_steps[1:]))
    for q in (0.001, 0.01, 0.05):
        eps_sigma = [compute_epsilon(s, q, 500).epsilon for s in (0.7, 1.0, 2.0, 4.0, 8.0)]
        assert all(a >= b for a, b in zip(eps_sigma, eps_sigma[1:]))
    for sigma in (0.8, 2.0):
        eps_q = [compute_epsilon(sigma, q, 500).epsilon for q in (0.001, 0.005, 0.02, 0.1)]
        assert all(a <= b for a, b in zip(eps_q, eps_q[1:]))


@pytest.mark.parametrize("target", [0.1, 0.5, 1.0, 3.0, 10.0])
def test_noise_calibration_round_trip(target):
    q, steps = 20 / 24150, 20 * math.ceil(24150 / 20)
    sigma = noise_for_target_epsilon(target, q, steps)
    eps = compute_epsilon(sigma, q, steps).epsilon
    assert eps <= target
    assert eps >= target * (1 - 1e-3)


def test_noise_calibration_monotone_and_deterministic():
    q, steps = 0.001, 5000
    sigmas = [noise_for_target_epsilon(t, q, steps) for t in (0.1, 1.0, 10.0)]
    assert sigmas[0] > sigmas[1] > sigmas[2]
    assert noise_for_target_epsilon(0.1, q, steps) == sigmas[0]


def test_noise_calibration_unreachable():
    with pytest.raises(ValueError, match="unreachable"):
        noise_for_target_epsilon(1e-4, 0.5, 10_000)


def test_dp_params_delta_must_be_below_one_over_n():
    DpParams(1.0, 1.0, 1e-5).check_dataset_size(1000)
    with pytest.raises(ValueError):
        DpParams(1.0, 1.0, 1e-2).check_dataset_size(1000)
    with pytest.raises(ValueError):
        DpParams(-1.0)
