"""Group fairness metrics and the two bias mitigation steps.

Conventions: ``protected == 1`` marks the privileged group and a
prediction/label of 1 is the favourable outcome.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset


class FairnessError(ValueError):
    pass


def _group_rates(preds, protected) -> tuple[float, float]:
    preds = np.asarray(preds)
    protected = np.asarray(protected)
    if preds.shape != protected.shape:
        raise FairnessError("preds and protected must have the same length")
    priv = protected == 1
    n_priv = int(priv.sum())
    n_unpriv = priv.size - n_priv
    if n_priv == 0 or n_unpriv == 0:
        raise FairnessError("both protected groups must be present")
    fav = preds == 1
    return int(fav[priv].sum()) / n_priv, int(fav[~priv].sum()) / n_unpriv


def statistical_parity_difference(preds, protected) -> float:
    """P(pred=1 | privileged) - P(pred=1 | unprivileged)."""
    rate_priv, rate_unpriv = _group_rates(preds, protected)
    return rate_priv - rate_unpriv


def disparate_impact(preds, protected) -> float:
    """P(pred=1 | unprivileged) / P(pred=1 | privileged)."""
    rate_priv, rate_unpriv = _group_rates(preds, protected)
    if rate_priv == 0:
        raise FairnessError("disparate impact undefined: privileged favourable rate is 0")
    return rate_unpriv / rate_priv


@dataclass(frozen=True)
class FairnessReport:
    spd: float
    di: float
    risk_difference: float


def fairness_report(preds, protected) -> FairnessReport:
    rate_priv, rate_unpriv = _group_rates(preds, protected)
    spd = rate_priv - rate_unpriv
    di = rate_unpriv / rate_priv if rate_priv > 0 else float("inf")
    return FairnessReport(spd=spd, di=di, risk_difference=abs(spd))


# ---------------------------------------------------------------------------
# Disparate impact remover


def _tie_blocks(sorted_values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unique values of a sorted sample with the first/last rank position of each, in [0, 1]."""
    n = sorted_values.size
    uniq, first, counts = np.unique(sorted_values, return_index=True, return_counts=True)
    if n == 1:
        half = np.array([0.5])
        return uniq, half, half
    return uniq, first / (n - 1), (first + counts - 1) / (n - 1)


class QuantileRepairer:
    """Per-feature quantile maps for the disparate impact remover.

    Fitted on one dataset (the training split); ``transform`` can then be
    applied to any dataset with the same schema. Each repaired value moves
    from its within-group quantile position ``u`` toward the median of the
    two group quantile functions at ``u``; ``repair_level`` interpolates
    linearly between the original (0) and the fully repaired value (1).

    A value shared by several records of a group occupies a block of rank
    positions; each record draws its own position uniformly inside the
    block (seeded), so discrete columns such as one-hot indicators can be
    fully equalised across groups. Distinct values never swap order.

    Args:
        repair_level: amount of repair in [0, 1].
        columns: ``"all"`` repairs every feature column, ``"continuous"``
            leaves one-hot columns untouched.
        seed: seed for the tie-breaking draws.
    """

    def __init__(self, repair_level: float, columns: str = "all", seed: int = 0):
        if not 0.0 <= repair_level <= 1.0:
            raise FairnessError(f"repair_level must lie in [0, 1], got {repair_level!r}")
        if columns not in ("continuous", "all"):
            raise FairnessError(f"columns must be 'continuous' or 'all', got {columns!r}")
        self.repair_level = float(repair_level)
        self.columns = columns
        self.seed = seed
        self.columns_: np.ndarray | None = None
        self._maps: list[dict] = []

    def fit(self, data: Dataset) -> "QuantileRepairer":
        if data.protected.min() == data.protected.max():
            raise FairnessError("both protected groups must be present")
        if self.columns == "all":
            self.columns_ = np.arange(data.n_features)
        else:
            self.columns_ = data.continuous_columns
        self._maps = []
        for j in self.columns_:
            col = data.features[:, j]
            per_group = {}
            for g in (0, 1):
                sorted_vals = np.sort(col[data.protected == g])
                per_group[g] = (sorted_vals, *_tie_blocks(sorted_vals))
            self._maps.append(per_group)
        return self

    def _positions(self, values: np.ndarray, per_group_g, rng) -> np.ndarray:
        _, uniq, lo, hi = per_group_g
        if uniq.size == 1:
            lo_u = np.where(values == uniq[0], lo[0], np.where(values < uniq[0], 0.0, 1.0))
            hi_u = np.where(values == uniq[0], hi[0], lo_u)
        else:
            k = np.searchsorted(uniq, values)
            k_clip = np.minimum(k, uniq.size - 1)
            exact = uniq[k_clip] == values
            mid = (lo + hi) / 2.0
            between = np.interp(values, uniq, mid)
            lo_u = np.where(exact, lo[k_clip], between)
            hi_u = np.where(exact, hi[k_clip], between)
        return lo_u + rng.random(values.size) * (hi_u - lo_u)

    def _repair_column(self, values: np.ndarray, groups: np.ndarray, per_group: dict, rng) -> np.ndarray:
        out = values.copy()
        quantile_fns = []
        for h in (0, 1):
            sorted_h = per_group[h][0]
            grid = np.linspace(0.0, 1.0, sorted_h.size) if sorted_h.size > 1 else np.array([0.0])
            quantile_fns.append((grid, sorted_h))
        for g in (0, 1):
            mask = groups == g
            if not mask.any():
                continue
            u = self._positions(values[mask], per_group[g], rng)
            # with two groups the per-quantile median is the mean of both quantile functions
            target = sum(np.interp(u, grid, q) for grid, q in quantile_fns) / 2.0
            out[mask] = (1.0 - self.repair_level) * values[mask] + self.repair_level * target
        return out

    def transform(self, data: Dataset) -> Dataset:
        if self.columns_ is None:
            raise FairnessError("repairer is not fitted")
        if self.repair_level == 0.0:
            return data
        features = np.array(data.features, copy=True)
        for j, per_group in zip(self.columns_, self._maps):
            rng = np.random.default_rng([self.seed, int(j)])
            features[:, j] = self._repair_column(data.features[:, j], data.protected, per_group, rng)
        return data.with_features(features)


def dir_repair(data: Dataset, repair_level: float, columns: str = "all", seed: int = 0) -> Dataset:
    """Repair ``data`` with quantile maps fitted on ``data`` itself."""
    return QuantileRepairer(repair_level, columns, seed).fit(data).transform(data)


# ---------------------------------------------------------------------------
# Reject option classification


@dataclass(frozen=True)
class RocParams:
    classification_threshold: float
    margin: float

    def __post_init__(self):
        t, m = self.classification_threshold, self.margin
        if not 0.0 < t < 1.0:
            raise FairnessError(f"classification_threshold must lie in (0, 1), got {t!r}")
        if m < 0 or t - m <= 0.0 or t + m >= 1.0:
            raise FairnessError(f"critical band [{t - m}, {t + m}] must lie inside (0, 1)")


@dataclass(frozen=True)
class RocGridSpec:
    thresholds: tuple[float, ...] = tuple(round(0.01 * k, 2) for k in range(1, 100))
    margins: tuple[float, ...] = tuple(round(0.01 * k, 2) for k in range(0, 26))


def roc_postprocess(scores, protected, params: RocParams) -> np.ndarray:
    """Threshold scores, flipping decisions by group inside the critical band.

    Scores inside ``[threshold - margin, threshold + margin]`` get the
    favourable label when unprivileged and the unfavourable label when
    privileged; all other scores follow ``score >= threshold``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    protected = np.asarray(protected)
    t, m = params.classification_threshold, params.margin
    preds = (scores >= t).astype(np.int8)
    if m > 0:
        band = (scores >= t - m) & (scores <= t + m)
        preds[band] = (protected[band] == 0).astype(np.int8)
    return preds


def fit_roc_params(scores, protected, labels, grid: RocGridSpec = RocGridSpec()) -> RocParams:
    """Exhaustive grid search for the ROC band minimising |SPD|.

    Ties are broken by higher accuracy, then smaller margin, then grid order.
    Cells whose band leaves (0, 1) are skipped.
    """
    scores = np.asarray(scores, dtype=np.float64)
    protected = np.asarray(protected)
    labels = np.asarray(labels)
    cells = [
        (t, m)
        for t in grid.thresholds
        for m in grid.margins
        if 0.0 < t < 1.0 and m >= 0 and t - m > 0.0 and t + m < 1.0
    ]
    if not cells:
        raise FairnessError("empty ROC grid")
    priv = protected == 1
    n_priv = int(priv.sum())
    n_unpriv = priv.size - n_priv
    if n_priv == 0 or n_unpriv == 0:
        raise FairnessError("both protected groups must be present")

    best_key = None
    best = None
    for t, m in cells:
        preds = roc_postprocess(scores, protected, RocParams(t, m))
        fav = preds == 1
        # integer counts keep identical cells bit-identical for tie-breaking
        gap = abs(int(fav[priv].sum()) * n_unpriv - int(fav[~priv].sum()) * n_priv)
        correct = int((preds == labels).sum())
        key = (gap, -correct, m)
        if best_key is None or key < best_key:
            best_key, best = key, (t, m)
    return RocParams(*best)
