"""Search procedures over the pipeline configuration cube: MOBO, random, grid."""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable

import numpy as np

from ..pipeline import (
    REFERENCE_POINT,
    TABLE7_DOMAIN,
    TUNED_FIELDS,
    Domain,
    EvaluationRecord,
    ObjectiveTriple,
    PipelineConfig,
)
from .acquisition import CANDIDATE_BUDGET, N_MC, fit_surrogates, propose_next
from .pareto import ParetoArchive

logger = logging.getLogger(__name__)

Evaluate = Callable[[PipelineConfig], "EvaluationRecord | ObjectiveTriple"]
LOG_UNIFORM = ("noise_multiplier", "learning_rate")
GRID_FIELDS = ("repair_level", "noise_multiplier", "clipping_norm", "epochs")
GRID_BATCH_SIZE = 32
GRID_LEARNING_RATE = 1e-2


def _as_record(config: PipelineConfig, result) -> EvaluationRecord:
    if isinstance(result, EvaluationRecord):
        return result
    if isinstance(result, ObjectiveTriple):
        return EvaluationRecord(config, result)
    raise TypeError(f"evaluate must return EvaluationRecord or ObjectiveTriple, got {type(result).__name__}")


class _Recorder:
    """Single coordinator that appends results to the archive in order."""

    def __init__(self, archive: ParetoArchive, on_record: Callable[[EvaluationRecord], None] | None):
        self.archive = archive
        self.on_record = on_record

    def add(self, config: PipelineConfig, result) -> None:
        record = _as_record(config, result)
        self.archive.add(record, record.objectives.transformed)
        if self.on_record is not None:
            self.on_record(record)
        o = record.objectives
        logger.info(
            "eval %d: acc=%.4f spd=%.4f eps=%.4g hv=%.4f",
            len(self.archive), o.accuracy, o.spd, o.epsilon, self.archive.hv_trace[-1],
        )


def _evaluate_all(evaluate: Evaluate, configs: Iterable[PipelineConfig], recorder: _Recorder, n_workers: int) -> None:
    configs = list(configs)
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            # map yields results in submission order
            for config, result in zip(configs, pool.map(evaluate, configs)):
                recorder.add(config, result)
    else:
        for config in configs:
            recorder.add(config, evaluate(config))


def sample_random_configs(
    n: int, seed: int, domain: Domain = TABLE7_DOMAIN, base: PipelineConfig | None = None
) -> list[PipelineConfig]:
    """Log-uniform learning rate and noise multiplier; uniform everything else.

    Integer fields are drawn uniformly from the inclusive integer range.
    """
    base = base if base is not None else PipelineConfig()
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        values = {}
        for name in TUNED_FIELDS:
            lo, hi = getattr(domain, name)
            if name in domain.INTEGER:
                values[name] = int(rng.integers(lo, hi + 1))
            elif name in LOG_UNIFORM:
                values[name] = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
            else:
                values[name] = float(rng.uniform(lo, hi))
        out.append(base.replace(**values))
    return out


def grid_configs(
    levels: int = 4,
    domain: Domain = TABLE7_DOMAIN,
    base: PipelineConfig | None = None,
    batch_size: int = GRID_BATCH_SIZE,
    learning_rate: float = GRID_LEARNING_RATE,
) -> list[PipelineConfig]:
    """Full factorial over uniform levels of the four varied fields."""
    if levels < 2:
        raise ValueError("grid search needs at least 2 levels per field")
    base = (base if base is not None else PipelineConfig()).replace(batch_size=batch_size, learning_rate=learning_rate)
    axes = []
    for name in GRID_FIELDS:
        lo, hi = getattr(domain, name)
        vals = np.linspace(lo, hi, levels)
        if name in domain.INTEGER:
            axes.append([int(round(v)) for v in vals])
        else:
            axes.append([float(v) for v in vals])
    return [base.replace(**dict(zip(GRID_FIELDS, combo))) for combo in itertools.product(*axes)]


def run_random_search(
    evaluate: Evaluate,
    budget: int = 300,
    seed: int = 0,
    *,
    domain: Domain = TABLE7_DOMAIN,
    base_config: PipelineConfig | None = None,
    n_workers: int = 1,
    on_record: Callable[[EvaluationRecord], None] | None = None,
) -> ParetoArchive:
    base = (base_config if base_config is not None else PipelineConfig()).replace(seed=seed)
    archive = ParetoArchive(REFERENCE_POINT)
    _evaluate_all(evaluate, sample_random_configs(budget, seed, domain, base), _Recorder(archive, on_record), n_workers)
    return archive


def run_grid_search(
    evaluate: Evaluate,
    levels: int = 4,
    seed: int = 0,
    *,
    domain: Domain = TABLE7_DOMAIN,
    base_config: PipelineConfig | None = None,
    batch_size: int = GRID_BATCH_SIZE,
    learning_rate: float = GRID_LEARNING_RATE,
    n_workers: int = 1,
    on_record: Callable[[EvaluationRecord], None] | None = None,
) -> ParetoArchive:
    base = (base_config if base_config is not None else PipelineConfig()).replace(seed=seed)
    archive = ParetoArchive(REFERENCE_POINT)
    configs = grid_configs(levels, domain, base, batch_size, learning_rate)
    _evaluate_all(evaluate, configs, _Recorder(archive, on_record), n_workers)
    return archive


def run_mobo(
    evaluate: Evaluate,
    budget: int = 250,
    n_init: int = 16,
    seed: int = 0,
    *,
    domain: Domain = TABLE7_DOMAIN,
    base_config: PipelineConfig | None = None,
    candidate_budget: int = CANDIDATE_BUDGET,
    n_mc: int = N_MC,
    gp_restarts: int = 8,
    on_record: Callable[[EvaluationRecord], None] | None = None,
) -> ParetoArchive:
    """Random initial design, then fit / posterior / acquire / evaluate until ``budget``.

    Each iteration fits one GP per transformed objective on all evaluations
    so far and evaluates the EHVI maximiser over the candidate pool.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    base = (base_config if base_config is not None else PipelineConfig()).replace(seed=seed)
    archive = ParetoArchive(REFERENCE_POINT)
    recorder = _Recorder(archive, on_record)
    init = sample_random_configs(min(n_init, budget), seed, domain, base)
    _evaluate_all(evaluate, init, recorder, 1)
    iteration_seeds = np.random.SeedSequence([seed, 1]).generate_state(max(budget - len(init), 1))
    for it in range(len(archive), budget):
        x = np.array([domain.to_unit(r.config) for r in archive.records])
        step_seed = int(iteration_seeds[it - len(init)])
        surrogates = fit_surrogates(x, archive.objectives, seed=step_seed, restarts=gp_restarts)
        config = propose_next(
            surrogates, archive, candidate_budget, step_seed, domain=domain, base_config=base, n_mc=n_mc
        )
        recorder.add(config, evaluate(config))
    return archive
