import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pfairdp.mobo import (
    BoxDecomposition,
    ParetoArchive,
    SurrogateSet,
    candidate_pool,
    dominates,
    ehvi,
    ehvi_batch,
    fit_surrogates,
    gp_fit,
    grid_configs,
    hypervolume,
    hypervolume_improvement,
    log_marginal_likelihood,
    pareto_filter,
    pareto_mask,
    propose_next,
    run_grid_search,
    run_mobo,
    run_random_search,
    sample_random_configs,
    score_candidates,
)
from pfairdp.mobo.gp import LOG_LENGTHSCALE_BOUNDS, LOG_NOISE_BOUNDS, LOG_SIGNAL_BOUNDS
from pfairdp.pipeline import DESK_DOMAIN, REFERENCE_POINT, TABLE7_DOMAIN, EvaluationRecord, ObjectiveTriple, PipelineConfig


def brute_force_mask(pts):
    pts = np.asarray(pts)
    return np.array([not any(dominates(q, p) for q in pts) for p in pts], dtype=bool)


def hvi_inclusion_exclusion(y, front, ref):
    """Exact HVI of each row of y: |box(y)| minus |box(y) ∩ union of front boxes| by inclusion-exclusion."""
    y = np.atleast_2d(y)
    out = np.prod(np.clip(y - ref, 0, None), axis=1)
    for r in range(1, len(front) + 1):
        for subset in itertools.combinations(range(len(front)), r):
            corner = np.min(front[list(subset)], axis=0)
            out -= (-1) ** (r + 1) * np.prod(np.clip(np.minimum(y, corner) - ref, 0, None), axis=1)
    return out


# -- dominance and filtering -------------------------------------------------------------


def test_dominates_examples():
    assert dominates((2, 2, 2), (1, 1, 1))
    assert not dominates((1, 1, 1), (1, 1, 1))
    assert not dominates((2, 0, 0), (0, 2, 0))
    assert not dominates((0, 2, 0), (2, 0, 0))
    with pytest.raises(ValueError):
        dominates((1, 2), (1, 2, 3))


triples = arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)), elements=st.integers(-3, 3).map(float))


@given(triples)
@settings(max_examples=200, deadline=None)
def test_dominates_irreflexive_antisymmetric(pts):
    for a in pts:
        assert not dominates(a, a)
        for b in pts:
            assert not (dominates(a, b) and dominates(b, a))


def test_pareto_filter_examples():
    np.testing.assert_array_equal(pareto_filter([[1.0, 2.0, 3.0]]), [[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(pareto_filter([[1, 1, 1], [2, 2, 2], [3, 3, 3]]), [[3, 3, 3]])
    mask = pareto_mask([[1, 0, 0], [1, 0, 0], [0, 0, 0]])
    np.testing.assert_array_equal(mask, [True, True, False])


def test_pareto_filter_matches_brute_force_on_200_points():
    pts = np.random.default_rng(0).normal(size=(200, 3))
    np.testing.assert_array_equal(pareto_mask(pts), brute_force_mask(pts))


@given(triples)
@settings(max_examples=200, deadline=None)
def test_pareto_mask_brute_force_and_idempotent(pts):
    np.testing.assert_array_equal(pareto_mask(pts), brute_force_mask(pts))
    once = pareto_filter(pts)
    assert pareto_filter(once).shape == once.shape


# -- hypervolume ----------------------------------------------------------------------------


def test_hypervolume_examples():
    assert hypervolume(np.empty((0, 3)), (0, 0, 0)) == 0.0
    assert hypervolume([[1, 2, 3]], (0, 0, 0)) == 6.0
    assert hypervolume([[1, 2], [2, 1]], (0, 0)) == 3.0
    # points not strictly above the reference are excluded
    assert hypervolume([[1, 2, 3], [-1, 5, 5]], (0, 0, 0)) == 6.0


@pytest.mark.parametrize("seed", range(5))
def test_hypervolume_matches_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    front = rng.uniform(0.1, 1.0, size=(int(rng.integers(1, 11)), 3))
    ref = np.zeros(3)
    hi = front.max(axis=0)
    u = rng.uniform(0, 1, size=(10**6, 3)) * hi
    covered = np.zeros(len(u), dtype=bool)
    for p in front:
        covered |= np.all(u <= p, axis=1)
    estimate = covered.mean() * np.prod(hi)
    assert hypervolume(front, ref) == pytest.approx(estimate, rel=0.01)


@pytest.mark.parametrize("seed", range(10))
def test_hypervolume_matches_inclusion_exclusion(seed):
    rng = np.random.default_rng(100 + seed)
    front = rng.uniform(0, 1, size=(int(rng.integers(1, 8)), 3))
    big = np.array([[10.0, 10.0, 10.0]])
    # HV(front) = |box(big)| - HVI(big | front) when big dominates everything
    want = 1000.0 - hvi_inclusion_exclusion(big, front, np.zeros(3))[0]
    assert hypervolume(front, np.zeros(3)) == pytest.approx(want, rel=1e-12)


@given(arrays(np.float64, (6, 3), elements=st.floats(0.01, 1.0)), st.integers(0, 5))
@settings(max_examples=100, deadline=None)
def test_dominated_point_leaves_hypervolume_unchanged(front, k):
    dominated = front[k] * 0.5
    ref = np.zeros(3)
    assert hypervolume(np.vstack([front, dominated]), ref) == pytest.approx(hypervolume(front, ref), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_box_decomposition_equals_hypervolume_difference(seed):
    rng = np.random.default_rng(seed)
    front = rng.uniform(0, 1, size=(7, 3))
    ref = np.full(3, -0.1)
    ys = rng.uniform(-0.2, 1.2, size=(50, 3))
    got = BoxDecomposition(front, ref).improvement(ys)
    base = hypervolume(front, ref)
    want = [hypervolume(np.vstack([front, y]), ref) - base for y in ys]
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)
    assert hypervolume_improvement(ys[0], front, ref) == pytest.approx(want[0], abs=1e-12)


def test_archive_front_and_trace():
    rng = np.random.default_rng(3)
    archive = ParetoArchive(np.zeros(3))
    pts = rng.uniform(0, 1, size=(60, 3))
    for p in pts:
        archive.add(EvaluationRecord(PipelineConfig(), ObjectiveTriple(0.5, 0.5, 1.0)), p)
    assert sorted(archive.front) == list(np.flatnonzero(brute_force_mask(pts)))
    assert np.all(np.diff(archive.hv_trace) >= 0)
    assert archive.hv_trace[-1] == pytest.approx(hypervolume(pts, np.zeros(3)))
    assert len(archive) == 60


# -- Gaussian process --------------------------------------------------------------------------


def smooth(x):
    return np.sin(3 * x[:, 0]) + x[:, 1] ** 2


@pytest.fixture(scope="module")
def fitted():
    x = np.random.default_rng(0).uniform(size=(25, 2))
    y = smooth(x)
    return x, y, gp_fit(x, y, seed=0)


def test_gp_interpolates_noiseless_data(fitted):
    x, y, gp = fitted
    mean, _ = gp.posterior(x)
    np.testing.assert_allclose(mean, y, atol=1e-4)


def test_gp_far_field_returns_prior_mean(fitted):
    _, y, gp = fitted
    mean, var = gp.posterior(np.array([[1e3, 1e3]]))
    assert mean[0] == pytest.approx(y.mean(), abs=1e-3)
    assert var[0] == pytest.approx(gp.signal_variance * gp.y_std**2, rel=1e-6)


def test_gp_lml_beats_random_hyperparameters(fitted):
    x, y, gp = fitted
    ys = (y - gp.y_mean) / gp.y_std
    bounds = np.array([LOG_LENGTHSCALE_BOUNDS] * 2 + [LOG_SIGNAL_BOUNDS, LOG_NOISE_BOUNDS])
    rng = np.random.default_rng(1)
    best = log_marginal_likelihood(gp.theta, x, ys)
    for _ in range(100):
        theta = bounds[:, 0] + rng.random(4) * (bounds[:, 1] - bounds[:, 0])
        assert log_marginal_likelihood(theta, x, ys) <= best


def test_gp_lml_gradient_matches_finite_differences(fitted):
    x, y, gp = fitted
    ys = (y - y.mean()) / y.std()
    theta = np.array([np.log(0.3), np.log(0.7), np.log(1.5), np.log(0.05)])
    _, g = log_marginal_likelihood(theta, x, ys, grad=True)
    h = 1e-6
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        fd = (log_marginal_likelihood(theta + e, x, ys) - log_marginal_likelihood(theta - e, x, ys)) / (2 * h)
        assert g[j] == pytest.approx(fd, rel=1e-5, abs=1e-6)


def test_gp_training_point_variance_below_noise(fitted):
    x, _, gp = fitted
    _, var = gp.posterior(x)
    assert np.all(var <= gp.noise_variance + 1e-6)
    assert gp.noise_variance >= 1e-6 * gp.y_std**2 * (1 - 1e-12)


def dense_matern(a, b, ls, sf2):
    out = np.empty((len(a), len(b)))
    for i in range(len(a)):
        for j in range(len(b)):
            r = math.sqrt(sum(((a[i, k] - b[j, k]) / ls[k]) ** 2 for k in range(a.shape[1])))
            out[i, j] = sf2 * (1 + math.sqrt(5) * r + 5 * r * r / 3) * math.exp(-math.sqrt(5) * r)
    return out


def test_gp_posterior_matches_dense_solve(fitted):
    x, y, gp = fitted
    d = x.shape[1]
    ls, sf2, sn2 = np.exp(gp.theta[:d]), np.exp(gp.theta[d]), np.exp(gp.theta[d + 1])
    ys = (y - gp.y_mean) / gp.y_std
    k = dense_matern(x, x, ls, sf2) + (sn2 + 1e-10) * np.eye(len(x))  # 1e-10: first factorisation jitter
    xq = np.random.default_rng(5).uniform(size=(10, 2))
    ks = dense_matern(xq, x, ls, sf2)
    mean = ks @ np.linalg.solve(k, ys) * gp.y_std + gp.y_mean
    var = (sf2 - np.einsum("ij,ji->i", ks, np.linalg.solve(k, ks.T))) * gp.y_std**2
    got_mean, got_var = gp.posterior(xq)
    np.testing.assert_allclose(got_mean, mean, atol=1e-8)
    np.testing.assert_allclose(got_var, np.maximum(var, 0), atol=1e-8)


def test_gp_symmetric_training_points():
    x = np.array([[0.2, 0.5], [0.8, 0.5]])
    gp = gp_fit(x, np.array([1.0, 3.0]), seed=0)
    mean, _ = gp.posterior(np.array([[0.5, 0.5]]))
    assert mean[0] == pytest.approx(2.0, abs=1e-9)
    # mirror-image query points see mirror-image data, so equal targets give equal means
    gp_equal = gp_fit(np.array([[0.2, 0.5], [0.8, 0.5], [0.5, 0.1]]), np.array([1.0, 1.0, 0.0]), seed=0)
    left, var_left = gp_equal.posterior(np.array([[0.3, 0.5]]))
    right, var_right = gp_equal.posterior(np.array([[0.7, 0.5]]))
    assert left[0] == pytest.approx(right[0], abs=1e-12)
    assert var_left[0] == pytest.approx(var_right[0], abs=1e-12)


@given(st.integers(0, 10**6))
@settings(max_examples=20, deadline=None)
def test_gp_raw_variance_never_meaningfully_negative(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(12, 3))
    x = np.vstack([x, x[:3] + 1e-9])  # near-duplicates stress the factorisation
    gp = gp_fit(x, rng.normal(size=len(x)), seed=seed, restarts=2)
    xq = np.vstack([x, rng.uniform(size=(20, 3))])
    assert np.all(gp.raw_variance(xq) >= -1e-12)
    assert np.all(gp.posterior(xq)[1] >= 0)


def test_gp_degenerate_rows_give_noise_only_model():
    x = np.tile([[0.3, 0.3]], (5, 1))
    y = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    gp = gp_fit(x, y)
    assert gp.noise_only
    mean, var = gp.posterior(np.array([[0.9, 0.1]]))
    assert mean[0] == pytest.approx(3.0)
    assert var[0] == pytest.approx(y.var())


def test_gp_reproducible_given_seed():
    x = np.random.default_rng(2).uniform(size=(15, 3))
    y = x.sum(axis=1)
    np.testing.assert_array_equal(gp_fit(x, y, seed=7).theta, gp_fit(x, y, seed=7).theta)


# -- EHVI --------------------------------------------------------------------------------------

FRONT3 = np.array([[3.0, 1.0, 1.0], [1.0, 3.0, 1.0], [1.0, 1.0, 3.0]])
REF0 = np.zeros(3)


def test_ehvi_zero_variance_dominated_is_zero():
    assert ehvi_batch([[0.5, 0.5, 0.5]], [[0.0, 0.0, 0.0]], FRONT3, REF0)[0] == 0.0


def test_ehvi_zero_variance_equals_exact_improvement():
    y = np.array([[2.0, 2.0, 2.0]])
    # box(y) has volume 8; its overlap with the front's union is 3*2 - 3*1 + 1 = 4
    assert hvi_inclusion_exclusion(y, FRONT3, REF0)[0] == 4.0
    assert ehvi_batch(y, np.zeros((1, 3)), FRONT3, REF0)[0] == pytest.approx(4.0, abs=1e-12)


def test_ehvi_mc_agrees_with_dense_oracle():
    mean = np.array([1.8, 1.6, 1.7])
    sd = np.array([0.6, 0.4, 0.5])
    est = ehvi_batch(mean[None], (sd**2)[None], FRONT3, REF0, n_mc=10**4, seed=0)[0]
    rng = np.random.default_rng(12345)
    total, n = 0.0, 0
    for _ in range(10):
        samples = mean + sd * rng.standard_normal((10**5, 3))
        total += hvi_inclusion_exclusion(samples, FRONT3, REF0).sum()
        n += 10**5
    assert est == pytest.approx(total / n, rel=0.05)


def test_ehvi_deterministic_and_nonnegative():
    rng = np.random.default_rng(0)
    mean = rng.uniform(0, 3, size=(30, 3))
    var = rng.uniform(0, 1, size=(30, 3))
    a = ehvi_batch(mean, var, FRONT3, REF0, seed=4)
    np.testing.assert_array_equal(a, ehvi_batch(mean, var, FRONT3, REF0, seed=4))
    assert np.all(a >= 0)
    with pytest.raises(ValueError):
        ehvi_batch(mean, var, FRONT3, REF0, n_mc=0)


# -- proposal ------------------------------------------------------------------------------------


class ConstantModel:
    """Stub surrogate: a fixed mean and variance everywhere."""

    def __init__(self, mean, var):
        self.mean, self.var = mean, var

    def posterior(self, x):
        n = np.atleast_2d(x).shape[0]
        return np.full(n, self.mean), np.full(n, self.var)


def small_archive():
    archive = ParetoArchive(REF0)
    for k, y in enumerate(FRONT3):
        archive.add(EvaluationRecord(PipelineConfig(repair_level=0.1 * (k + 1)), ObjectiveTriple(0.7, 0.1, 1.0)), y)
    return archive


def test_propose_next_single_candidate():
    archive = small_archive()
    sur = SurrogateSet([ConstantModel(2.0, 1.0)] * 3)
    pool = candidate_pool(archive, DESK_DOMAIN, 1, seed=3, jitter_per_point=0)
    assert pool.shape == (1, 6)
    got = propose_next(sur, archive, 1, seed=3, domain=DESK_DOMAIN, jitter_per_point=0)
    assert got == DESK_DOMAIN.from_unit(pool[0], PipelineConfig())


def test_propose_next_tie_goes_to_lowest_index():
    archive = small_archive()
    sur = SurrogateSet([ConstantModel(0.5, 0.0)] * 3)
    pool = candidate_pool(archive, TABLE7_DOMAIN, 64, seed=1)
    assert np.all(score_candidates(sur, pool, archive) == 0)
    assert propose_next(sur, archive, 64, seed=1) == TABLE7_DOMAIN.from_unit(pool[0], PipelineConfig())


def test_candidate_pool_size_and_snapping():
    archive = small_archive()
    pool = candidate_pool(archive, TABLE7_DOMAIN, 100, seed=0)
    assert pool.shape == (100 + 3 * 8, 6)
    assert np.all((pool >= 0) & (pool <= 1))
    for u in pool[:20]:
        config = TABLE7_DOMAIN.from_unit(u, PipelineConfig())
        assert TABLE7_DOMAIN.from_unit(TABLE7_DOMAIN.to_unit(config), PipelineConfig()) == config
        np.testing.assert_allclose(TABLE7_DOMAIN.to_unit(config), u, rtol=0, atol=1e-12)


def test_propose_next_returns_pool_argmax():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(20, 6))
    y = np.column_stack([x[:, 0] + x[:, 1], 1 - x[:, 0], x[:, 2] - x[:, 3]]) * 3
    archive = ParetoArchive(np.full(3, -10.0))
    for xi, yi in zip(x, y):
        archive.add(EvaluationRecord(TABLE7_DOMAIN.from_unit(xi, PipelineConfig()), ObjectiveTriple(0.5, 0.5, 1.0)), yi)
    sur = fit_surrogates(x, y, seed=0, restarts=2)
    pool = candidate_pool(archive, TABLE7_DOMAIN, 256, seed=9)
    scores = score_candidates(sur, pool, archive, seed=9)
    chosen = propose_next(sur, archive, 256, seed=9)
    u = TABLE7_DOMAIN.to_unit(chosen)
    got = score_candidates(sur, u[None], archive, seed=9)[0]
    assert np.all(got >= scores - 1e-12)
    assert ehvi(sur, u, archive, seed=9) == pytest.approx(got)


# -- baselines -----------------------------------------------------------------------------------


def test_random_configs_in_bounds_and_deterministic():
    configs = sample_random_configs(500, seed=3)
    assert all(TABLE7_DOMAIN.contains(c) for c in configs)
    assert configs == sample_random_configs(500, seed=3)
    assert configs != sample_random_configs(500, seed=4)
    assert {c.epochs for c in configs} <= set(range(30, 129))


def test_random_log_learning_rate_mean():
    lo, hi = TABLE7_DOMAIN.learning_rate
    logs = np.log([c.learning_rate for c in sample_random_configs(10**4, seed=0)])
    se = (math.log(hi) - math.log(lo)) / math.sqrt(12) / math.sqrt(len(logs))
    assert abs(logs.mean() - 0.5 * (math.log(lo) + math.log(hi))) < 3 * se


def test_grid_has_256_points_with_endpoint_levels():
    configs = grid_configs(4)
    assert len(configs) == 256
    for name in ("repair_level", "noise_multiplier", "clipping_norm", "epochs"):
        values = sorted({getattr(c, name) for c in configs})
        assert len(values) == 4
        assert values[0] == TABLE7_DOMAIN.__getattribute__(name)[0]
        assert values[-1] == TABLE7_DOMAIN.__getattribute__(name)[1]
    assert {c.batch_size for c in configs} == {32}
    assert {c.learning_rate for c in configs} == {1e-2}


def fake_objective(config: PipelineConfig) -> ObjectiveTriple:
    """Cheap deterministic trade-off: more repair costs accuracy, more noise costs accuracy but buys privacy."""
    acc = 0.9 - 0.2 * config.repair_level - 0.02 * config.noise_multiplier + 0.0005 * config.epochs
    spd = 0.2 * (1 - config.repair_level) + 0.01 * config.clipping_norm
    eps = config.epochs / (10 * config.noise_multiplier**2) + 0.01 * config.batch_size
    return ObjectiveTriple(min(acc, 0.99), max(spd, 1e-3), eps)


def test_grid_search_front_equals_brute_force():
    archive = run_grid_search(fake_objective)
    assert len(archive) == 256
    np.testing.assert_array_equal(archive.on_front(), brute_force_mask(archive.objectives))
    assert archive.hv_trace[-1] == pytest.approx(hypervolume(archive.objectives, REFERENCE_POINT))


def test_random_search_budget_and_parallel_order():
    a = run_random_search(fake_objective, budget=12, seed=5)
    b = run_random_search(fake_objective, budget=12, seed=5, n_workers=2)
    assert len(a) == 12
    assert [r.config for r in a.records] == [r.config for r in b.records]
    np.testing.assert_array_equal(a.objectives, b.objectives)


def test_run_mobo_bookkeeping():
    seen = []
    archive = run_mobo(fake_objective, budget=14, n_init=6, seed=2, candidate_budget=128, n_mc=64,
                       gp_restarts=2, on_record=seen.append)
    assert len(archive) == 14 == len(seen)
    assert len(archive.hv_trace) == 14
    assert np.all(np.diff(archive.hv_trace) >= 0)
    assert [r.config for r in archive.records[:6]] == sample_random_configs(6, 2, base=PipelineConfig(seed=2))
    assert all(TABLE7_DOMAIN.contains(r.config) for r in archive.records)
    again = run_mobo(fake_objective, budget=14, n_init=6, seed=2, candidate_budget=128, n_mc=64, gp_restarts=2)
    np.testing.assert_array_equal(archive.objectives, again.objectives)


def test_run_mobo_budget_below_init_and_errors():
    assert len(run_mobo(fake_objective, budget=3, n_init=16, candidate_budget=16, n_mc=8, gp_restarts=1)) == 3
    with pytest.raises(ValueError):
        run_mobo(fake_objective, budget=0)
