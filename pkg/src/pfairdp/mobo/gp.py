"""Gaussian-process surrogate: Matern-5/2 ARD kernel, type-II maximum likelihood.

Targets are standardised before fitting; predictions are returned in the
original units. Hyperparameters (log length-scales, log signal variance,
log noise variance) are fitted by L-BFGS-B on the exact log marginal
likelihood from several seeded starts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

NOISE_FLOOR = 1e-6
JITTERS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
LOG_LENGTHSCALE_BOUNDS = (np.log(1e-2), np.log(1e2))
LOG_SIGNAL_BOUNDS = (np.log(1e-2), np.log(1e2))
LOG_NOISE_BOUNDS = (np.log(NOISE_FLOOR), np.log(1.0))
SQRT5 = np.sqrt(5.0)


class GpError(RuntimeError):
    pass


def matern52(x1: np.ndarray, x2: np.ndarray, lengthscales: np.ndarray, signal_var: float) -> np.ndarray:
    diff = (x1[:, None, :] - x2[None, :, :]) / lengthscales
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    return signal_var * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-SQRT5 * r)


def _cholesky(k: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor, escalating diagonal jitter until it succeeds."""
    eye = np.eye(k.shape[0])
    for jitter in JITTERS:
        try:
            return np.linalg.cholesky(k + jitter * eye), jitter
        except np.linalg.LinAlgError:
            continue
    raise GpError("kernel matrix is not positive definite even with jitter 1e-4")


def _unpack(theta: np.ndarray, d: int):
    return np.exp(theta[:d]), float(np.exp(theta[d])), float(np.exp(theta[d + 1]))


def log_marginal_likelihood(theta: np.ndarray, x: np.ndarray, y: np.ndarray, grad: bool = False):
    """Exact LML of standardised targets ``y`` (and its gradient w.r.t. ``theta``)."""
    n, d = x.shape
    ls, sf2, sn2 = _unpack(theta, d)
    diff = (x[:, None, :] - x[None, :, :]) / ls
    sq = diff * diff
    r = np.sqrt(np.sum(sq, axis=-1))
    e = np.exp(-SQRT5 * r)
    k_sig = sf2 * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * e
    try:
        chol, _ = _cholesky(k_sig + sn2 * np.eye(n))
    except GpError:
        return (-np.inf, np.zeros_like(theta)) if grad else -np.inf
    alpha = cho_solve((chol, True), y)
    lml = -0.5 * y @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * n * np.log(2 * np.pi)
    if not grad:
        return float(lml)
    w = np.outer(alpha, alpha) - cho_solve((chol, True), np.eye(n))
    g = np.empty_like(theta)
    base = sf2 * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e
    for j in range(d):
        g[j] = 0.5 * np.sum(w * base * sq[:, :, j])
    g[d] = 0.5 * np.sum(w * k_sig)
    g[d + 1] = 0.5 * sn2 * np.trace(w)
    return float(lml), g


@dataclass
class GaussianProcess:
    """Fitted surrogate for one objective."""

    x: np.ndarray
    y_mean: float
    y_std: float
    theta: np.ndarray | None
    chol: np.ndarray | None
    alpha: np.ndarray | None
    noise_only: bool = False
    lml: float = float("nan")

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.theta[: self.x.shape[1]])

    @property
    def signal_variance(self) -> float:
        return float(np.exp(self.theta[self.x.shape[1]]))

    @property
    def noise_variance(self) -> float:
        """Observation noise variance in the original target units."""
        if self.noise_only:
            return self.y_std**2
        return float(np.exp(self.theta[self.x.shape[1] + 1])) * self.y_std**2

    def posterior(self, x_new) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and latent variance at ``x_new`` in original units.

        Variances below zero from round-off are clamped to 0.
        """
        x_new = np.atleast_2d(np.asarray(x_new, dtype=np.float64))
        if self.noise_only:
            mean = np.full(x_new.shape[0], self.y_mean)
            return mean, np.full(x_new.shape[0], self.y_std**2)
        d = self.x.shape[1]
        ls, sf2, _ = _unpack(self.theta, d)
        k_star = matern52(x_new, self.x, ls, sf2)
        mean = k_star @ self.alpha
        v = solve_triangular(self.chol, k_star.T, lower=True)
        var = sf2 - np.sum(v * v, axis=0)
        var = np.maximum(var, 0.0)
        return mean * self.y_std + self.y_mean, var * self.y_std**2

    def raw_variance(self, x_new) -> np.ndarray:
        """Standardised latent variance before clamping (for diagnostics)."""
        x_new = np.atleast_2d(np.asarray(x_new, dtype=np.float64))
        ls, sf2, _ = _unpack(self.theta, self.x.shape[1])
        v = solve_triangular(self.chol, matern52(x_new, self.x, ls, sf2).T, lower=True)
        return sf2 - np.sum(v * v, axis=0)


def _bounds(d: int) -> list[tuple[float, float]]:
    return [LOG_LENGTHSCALE_BOUNDS] * d + [LOG_SIGNAL_BOUNDS, LOG_NOISE_BOUNDS]


def gp_fit(x, y, seed: int = 0, restarts: int = 8) -> GaussianProcess:
    """Fit hyperparameters by maximising the LML from ``restarts`` seeded starts.

    The first start is a fixed default (length-scales 0.5, unit signal,
    noise 1e-2); the rest are uniform in the log-bounds. If all inputs are
    identical the kernel carries no information and a noise-only model is
    returned: constant mean, variance equal to the target variance.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    n, d = x.shape
    if n != y.size:
        raise GpError("x and y have different lengths")
    if n == 0:
        raise GpError("cannot fit a GP to zero points")
    y_mean = float(y.mean())
    y_std = float(y.std())
    if not np.isfinite(y_std) or y_std <= 0:
        y_std = 1.0
    if n == 1 or np.all(x == x[0]):
        return GaussianProcess(x, y_mean, float(y.std()) if n > 1 else 1.0, None, None, None, noise_only=True)
    ys = (y - y_mean) / y_std

    bounds = _bounds(d)
    rng = np.random.default_rng(seed)
    starts = [np.concatenate([np.full(d, np.log(0.5)), [0.0, np.log(1e-2)]])]
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    for _ in range(restarts - 1):
        starts.append(lo + rng.random(d + 2) * (hi - lo))

    def neg(theta):
        val, g = log_marginal_likelihood(theta, x, ys, grad=True)
        if not np.isfinite(val):
            return 1e25, np.zeros_like(theta)
        return -val, -g

    best_theta, best_val = None, -np.inf
    for start in starts:
        res = minimize(neg, start, jac=True, method="L-BFGS-B", bounds=bounds)
        val = -float(res.fun)
        if np.isfinite(val) and val > best_val:
            best_theta, best_val = np.asarray(res.x), val
    if best_theta is None:
        raise GpError("hyperparameter optimisation failed from every start")

    ls, sf2, sn2 = _unpack(best_theta, d)
    chol, _ = _cholesky(matern52(x, x, ls, sf2) + sn2 * np.eye(n))
    alpha = cho_solve((chol, True), ys)
    return GaussianProcess(x, y_mean, y_std, best_theta, chol, alpha, lml=best_val)


def gp_posterior(gp: GaussianProcess, x_new) -> tuple[np.ndarray, np.ndarray]:
    return gp.posterior(x_new)
