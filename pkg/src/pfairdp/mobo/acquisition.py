"""Surrogates per objective, Monte-Carlo EHVI and the candidate-pool maximiser."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from ..pipeline import TABLE7_DOMAIN, Domain, PipelineConfig
from .gp import GaussianProcess, gp_fit
from .pareto import BoxDecomposition, ParetoArchive

N_MC = 512
CANDIDATE_BUDGET = 2048
JITTER_SIGMA = 0.05
JITTER_PER_FRONT_POINT = 8


@dataclass
class SurrogateSet:
    """One independent GP per transformed objective."""

    models: list[GaussianProcess]

    def posterior(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Means and variances, each of shape ``(n, n_objectives)``."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = [gp.posterior(x) for gp in self.models]
        return np.column_stack([m for m, _ in out]), np.column_stack([v for _, v in out])


def fit_surrogates(x, y, seed: int = 0, restarts: int = 8) -> SurrogateSet:
    """Fit one GP per column of ``y`` on unit-cube inputs ``x``."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    ss = np.random.SeedSequence(seed).spawn(y.shape[1])
    return SurrogateSet(
        [gp_fit(x, y[:, k], seed=int(s.generate_state(1)[0]), restarts=restarts) for k, s in enumerate(ss)]
    )


def ehvi_batch(mean: np.ndarray, var: np.ndarray, front, reference, n_mc: int = N_MC, seed: int = 0) -> np.ndarray:
    """Monte-Carlo EHVI for many candidates from their marginal posteriors.

    The same standard-normal draws are shared by every candidate (common
    random numbers), so comparisons between candidates are not blurred by
    independent sampling noise.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    mean = np.atleast_2d(np.asarray(mean, dtype=np.float64))
    sd = np.sqrt(np.maximum(np.atleast_2d(np.asarray(var, dtype=np.float64)), 0.0))
    boxes = BoxDecomposition(front, reference)
    z = np.random.default_rng(seed).standard_normal((n_mc, mean.shape[1]))
    out = np.empty(mean.shape[0])
    chunk = max(1, 65536 // n_mc)
    for start in range(0, mean.shape[0], chunk):
        mu = mean[start : start + chunk]
        s = sd[start : start + chunk]
        samples = mu[:, None, :] + s[:, None, :] * z[None, :, :]
        hvi = boxes.improvement(samples.reshape(-1, mean.shape[1]))
        out[start : start + chunk] = hvi.reshape(mu.shape[0], n_mc).mean(axis=1)
    return out


def ehvi(surrogates: SurrogateSet, x, archive: ParetoArchive, n_mc: int = N_MC, seed: int = 0) -> float:
    """Expected hypervolume improvement of one unit-cube point ``x``."""
    mean, var = surrogates.posterior(np.asarray(x, dtype=np.float64).reshape(1, -1))
    return float(ehvi_batch(mean, var, archive.front_points(), archive.reference, n_mc, seed)[0])


def candidate_pool(
    archive: ParetoArchive,
    domain: Domain,
    candidate_budget: int = CANDIDATE_BUDGET,
    seed: int = 0,
    jitter_per_point: int = JITTER_PER_FRONT_POINT,
) -> np.ndarray:
    """Quasi-random unit-cube points plus jittered copies of the front's configs.

    Every candidate is snapped onto the domain (integer fields rounded) so
    the acquisition is scored at exactly the configuration that would be run.
    """
    d = len(domain.bounds())
    rng = np.random.default_rng(seed)
    parts = []
    if candidate_budget > 0:
        sobol = qmc.Sobol(d=d, scramble=True, seed=rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # non power-of-two sample sizes
            parts.append(sobol.random(candidate_budget))
    if jitter_per_point > 0 and archive.front:
        anchors = np.array([domain.to_unit(archive.records[i].config) for i in archive.front])
        noisy = anchors[:, None, :] + JITTER_SIGMA * rng.standard_normal((anchors.shape[0], jitter_per_point, d))
        parts.append(np.clip(noisy.reshape(-1, d), 0.0, 1.0))
    if not parts:
        raise ValueError("empty candidate pool")
    pool = np.vstack(parts)
    base = PipelineConfig()
    return np.array([domain.to_unit(domain.from_unit(u, base)) for u in pool])


def score_candidates(
    surrogates: SurrogateSet, pool: np.ndarray, archive: ParetoArchive, n_mc: int = N_MC, seed: int = 0
) -> np.ndarray:
    mean, var = surrogates.posterior(pool)
    return ehvi_batch(mean, var, archive.front_points(), archive.reference, n_mc, seed)


def propose_next(
    surrogates: SurrogateSet,
    archive: ParetoArchive,
    candidate_budget: int = CANDIDATE_BUDGET,
    seed: int = 0,
    *,
    domain: Domain = TABLE7_DOMAIN,
    base_config: PipelineConfig | None = None,
    n_mc: int = N_MC,
    jitter_per_point: int = JITTER_PER_FRONT_POINT,
) -> PipelineConfig:
    """EHVI argmax over the candidate pool; ties go to the lowest pool index."""
    base = base_config if base_config is not None else PipelineConfig()
    pool = candidate_pool(archive, domain, candidate_budget, seed, jitter_per_point)
    scores = score_candidates(surrogates, pool, archive, n_mc, seed)
    return domain.from_unit(pool[int(np.argmax(scores))], base)
