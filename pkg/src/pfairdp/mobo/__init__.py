"""Multi-objective Bayesian optimisation over pipeline configurations."""

from .acquisition import SurrogateSet, candidate_pool, ehvi, ehvi_batch, fit_surrogates, propose_next, score_candidates
from .export import read_front_csv, write_cross_sections, write_front_csv, write_hv_trace_csv
from .gp import GaussianProcess, GpError, gp_fit, gp_posterior, log_marginal_likelihood
from .pareto import (
    BoxDecomposition,
    ParetoArchive,
    dominates,
    hypervolume,
    hypervolume_improvement,
    pareto_filter,
    pareto_mask,
)
from .search import grid_configs, run_grid_search, run_mobo, run_random_search, sample_random_configs

__all__ = [
    "BoxDecomposition",
    "GaussianProcess",
    "GpError",
    "ParetoArchive",
    "SurrogateSet",
    "candidate_pool",
    "dominates",
    "ehvi",
    "ehvi_batch",
    "fit_surrogates",
    "gp_fit",
    "gp_posterior",
    "grid_configs",
    "hypervolume",
    "hypervolume_improvement",
    "log_marginal_likelihood",
    "pareto_filter",
    "pareto_mask",
    "propose_next",
    "read_front_csv",
    "run_grid_search",
    "run_mobo",
    "run_random_search",
    "sample_random_configs",
    "score_candidates",
    "write_cross_sections",
    "write_front_csv",
    "write_hv_trace_csv",
]
