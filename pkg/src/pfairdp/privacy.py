"""DP-SGD primitives and a Renyi DP accountant for the subsampled Gaussian.

The accountant follows the usual RDP recipe: per-step RDP of the
Poisson-subsampled Gaussian mechanism at integer orders, linear
composition over steps, then ``eps = min_a [T * rdp(a) + log(1/delta) / (a - 1)]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

DEFAULT_DELTA = 1e-5

# 2..64 alone cannot certify eps below log(1/delta)/63 (~0.18 at delta=1e-5),
# so the default grid continues with sparser large orders.
DEFAULT_ORDERS: tuple[int, ...] = tuple(range(2, 65)) + (
    72, 80, 96, 112, 128, 160, 192, 224, 256, 320, 384, 448, 512, 640, 768, 896, 1024,
)

SIGMA_BOUNDS = (0.3, 100.0)


class NonPrivateError(ValueError):
    """Raised when a mechanism has no finite privacy guarantee (sigma = 0)."""


@dataclass(frozen=True)
class DpParams:
    noise_multiplier: float
    clipping_norm: float = 1.0
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be >= 0")
        if self.clipping_norm <= 0:
            raise ValueError("clipping_norm must be > 0")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")

    def check_dataset_size(self, n: int) -> None:
        if self.delta >= 1.0 / n:
            raise ValueError(f"delta={self.delta} must be below 1/n = {1.0 / n:.3g}")


@dataclass(frozen=True)
class PrivacySpend:
    epsilon: float
    delta: float
    steps: int
    sampling_rate: float | None = None
    noise_multiplier: float | None = None
    order: float | None = None


# ---------------------------------------------------------------------------
# Mechanism primitives


def clip_per_sample(grads: np.ndarray, clipping_norm: float) -> np.ndarray:
    """Scale each row ``g`` by ``min(1, C / ||g||)``; zero rows pass through."""
    if clipping_norm <= 0:
        raise ValueError("clipping_norm must be > 0")
    grads = np.asarray(grads, dtype=np.float64)
    norms = np.linalg.norm(grads, axis=1)
    scale = np.minimum(1.0, clipping_norm / np.maximum(norms, 1e-300))
    return grads * scale[:, None]


def noisy_aggregate(
    clipped: np.ndarray,
    clipping_norm: float,
    sigma: float,
    batch_size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """``(sum of clipped rows + N(0, sigma^2 C^2 I)) / batch_size``."""
    clipped = np.asarray(clipped, dtype=np.float64)
    if clipped.shape[0] == 0 or batch_size <= 0:
        raise ValueError("empty batch")
    total = clipped.sum(axis=0)
    if sigma > 0:
        total = total + rng.normal(0.0, sigma * clipping_norm, size=total.shape)
    return total / batch_size


# ---------------------------------------------------------------------------
# Accountant


def _log_expm1(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    small = x < 30.0
    out[small] = np.log(np.expm1(x[small]))
    out[~small] = x[~small] + np.log1p(-np.exp(-x[~small]))
    return out


def _rdp_order(q: float, sigma: float, alpha: int) -> float:
    if q == 1.0:
        return alpha / (2.0 * sigma**2)
    # A = E[(mixture / base)^alpha] = 1 + sum_{k>=2} pmf_k (exp(k(k-1)/(2 sigma^2)) - 1);
    # summing A - 1 directly keeps full relative precision as q -> 0.
    k = np.arange(2, alpha + 1, dtype=np.float64)
    log_binom = gammaln(alpha + 1) - gammaln(k + 1) - gammaln(alpha - k + 1)
    log_terms = (
        log_binom
        + k * np.log(q)
        + (alpha - k) * np.log1p(-q)
        + _log_expm1(k * (k - 1) / (2.0 * sigma**2))
    )
    log_a_minus_1 = logsumexp(log_terms)
    if log_a_minus_1 > 30.0:
        log_a = log_a_minus_1 + np.log1p(np.exp(-log_a_minus_1))
    else:
        log_a = np.log1p(np.exp(log_a_minus_1))
    return float(log_a / (alpha - 1))


def rdp_subsampled_gaussian(q: float, sigma: float, orders=DEFAULT_ORDERS) -> np.ndarray:
    """Per-step RDP of the Poisson-subsampled Gaussian mechanism.

    Args:
        q: sampling rate in [0, 1].
        sigma: noise multiplier (noise std / l2 sensitivity).
        orders: integer Renyi orders >= 2.

    Returns:
        Array of RDP values, one per order.

    Raises:
        NonPrivateError: if ``sigma == 0`` and ``q > 0``.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"sampling rate must lie in [0, 1], got {q!r}")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    orders = np.atleast_1d(np.asarray(orders))
    if orders.size == 0:
        raise ValueError("empty order list")
    if np.any(orders < 2) or np.any(orders != np.round(orders)):
        raise ValueError("orders must be integers >= 2")
    if q == 0.0:
        return np.zeros(orders.size)
    if sigma == 0.0:
        raise NonPrivateError("sigma = 0: the mechanism is non-private")
    return np.array([_rdp_order(float(q), float(sigma), int(a)) for a in orders])


def epsilon_from_rdp(
    rdp,
    orders=DEFAULT_ORDERS,
    steps: int = 1,
    delta: float = DEFAULT_DELTA,
    *,
    sampling_rate: float | None = None,
    noise_multiplier: float | None = None,
) -> PrivacySpend:
    """Convert per-step RDP values into an (eps, delta) spend after ``steps`` steps."""
    rdp = np.atleast_1d(np.asarray(rdp, dtype=np.float64))
    orders = np.atleast_1d(np.asarray(orders, dtype=np.float64))
    if orders.size == 0:
        raise ValueError("empty order list")
    if rdp.shape != orders.shape:
        raise ValueError("rdp and orders must have the same length")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if steps == 0:
        return PrivacySpend(0.0, delta, 0, sampling_rate, noise_multiplier, None)
    eps = steps * rdp + np.log(1.0 / delta) / (orders - 1.0)
    best = int(np.argmin(eps))
    return PrivacySpend(
        epsilon=float(max(eps[best], 0.0)),
        delta=delta,
        steps=int(steps),
        sampling_rate=sampling_rate,
        noise_multiplier=noise_multiplier,
        order=float(orders[best]),
    )


def compute_epsilon(
    sigma: float, q: float, steps: int, delta: float = DEFAULT_DELTA, orders=DEFAULT_ORDERS
) -> PrivacySpend:
    if steps == 0:
        return PrivacySpend(0.0, delta, 0, q, sigma, None)
    rdp = rdp_subsampled_gaussian(q, sigma, orders)
    return epsilon_from_rdp(rdp, orders, steps, delta, sampling_rate=q, noise_multiplier=sigma)


def noise_for_target_epsilon(
    target_eps: float,
    q: float,
    steps: int,
    delta: float = DEFAULT_DELTA,
    orders=DEFAULT_ORDERS,
    bounds: tuple[float, float] = SIGMA_BOUNDS,
    rtol: float = 1e-3,
) -> float:
    """Smallest-noise sigma (to ``rtol``) whose spend does not exceed ``target_eps``.

    Bisection over ``bounds``; the returned sigma always satisfies
    ``target_eps * (1 - rtol) <= eps(sigma) <= target_eps``.
    """
    if target_eps <= 0:
        raise ValueError("target_eps must be > 0")
    lo, hi = bounds

    def eps(sigma):
        return compute_epsilon(sigma, q, steps, delta, orders).epsilon

    eps_hi = eps(hi)
    if eps_hi > target_eps:
        raise ValueError(f"target eps={target_eps} unreachable: sigma={hi} still gives eps={eps_hi:.4g}")
    if eps(lo) <= target_eps:
        raise ValueError(f"target eps={target_eps} unreachable: sigma={lo} already gives less")
    for _ in range(200):
        if target_eps - eps_hi <= rtol * target_eps:
            return hi
        mid = 0.5 * (lo + hi)
        eps_mid = eps(mid)
        if eps_mid <= target_eps:
            hi, eps_hi = mid, eps_mid
        else:
            lo = mid
    return hi
