"""The fair + private training pipeline as a black box from configuration to objectives.

``evaluate`` chains: optional quantile repair (maps fitted on train, reused
on dev/test) -> (DP-)training -> optional reject-option postprocessing
(fitted on dev, applied to test) and reports test accuracy, test |SPD| and
the accountant's epsilon.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .data import Dataset
from .fairness import QuantileRepairer, fit_roc_params, roc_postprocess, statistical_parity_difference
from .model import MlpSpec, TrainingError, TrainSpec, steps_per_epoch, train
from .privacy import DEFAULT_DELTA, DpParams, noise_for_target_epsilon

logger = logging.getLogger(__name__)

CLAMP = 1e-6
EPSILON_CAP = 1e6  # reported epsilon for non-private runs

TUNED_FIELDS = ("repair_level", "noise_multiplier", "clipping_norm", "epochs", "learning_rate", "batch_size")


class Splits(NamedTuple):
    train: Dataset
    dev: Dataset
    test: Dataset


@dataclass(frozen=True)
class PipelineConfig:
    repair_level: float = 1.0
    noise_multiplier: float = 1.0
    clipping_norm: float = 1.0
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 32
    preprocessing: bool = True
    dp: bool = True
    postprocessing: bool = False
    # when set, the noise multiplier is calibrated to this epsilon before training
    target_epsilon: float | None = None
    optimizer: str = "adam"
    hidden: tuple[int, ...] = (6, 6)
    delta: float = DEFAULT_DELTA
    repair_columns: str = "all"
    seed: int = 0

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass(frozen=True)
class Domain:
    """Box bounds for the six tuned hyperparameters."""

    repair_level: tuple[float, float] = (0.0, 1.0)
    noise_multiplier: tuple[float, float] = (1.0, 5.0)
    clipping_norm: tuple[float, float] = (0.1, 2.0)
    epochs: tuple[int, int] = (30, 128)
    learning_rate: tuple[float, float] = (1e-3, 0.1)
    batch_size: tuple[int, int] = (16, 64)

    INTEGER = ("epochs", "batch_size")

    def bounds(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in TUNED_FIELDS], dtype=np.float64)

    def contains(self, config: PipelineConfig) -> bool:
        for name in TUNED_FIELDS:
            lo, hi = getattr(self, name)
            if not lo <= getattr(config, name) <= hi:
                return False
        return True

    def to_unit(self, config: PipelineConfig) -> np.ndarray:
        b = self.bounds()
        v = np.array([getattr(config, f) for f in TUNED_FIELDS], dtype=np.float64)
        return (v - b[:, 0]) / (b[:, 1] - b[:, 0])

    def from_unit(self, u, base: PipelineConfig) -> PipelineConfig:
        """Map a unit-cube point onto the domain (integer fields rounded)."""
        b = self.bounds()
        v = b[:, 0] + np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0) * (b[:, 1] - b[:, 0])
        values = {}
        for name, x in zip(TUNED_FIELDS, v):
            if name in self.INTEGER:
                lo, hi = getattr(self, name)
                values[name] = int(min(max(int(round(x)), lo), hi))
            else:
                values[name] = float(x)
        return base.replace(**values)


TABLE7_DOMAIN = Domain()
DESK_DOMAIN = Domain(epochs=(5, 20))


# ---------------------------------------------------------------------------
# Objectives


def _logit(x):
    return np.log(x) - np.log1p(-x)


def objective_transform(accuracy: float, spd: float, epsilon: float) -> tuple[float, float, float]:
    """Map (accuracy, |SPD|, epsilon) to the real line, larger = better on every axis.

    Accuracy and SPD are clamped to ``[1e-6, 1 - 1e-6]`` and epsilon is
    floored at ``1e-6`` first.
    """
    acc = min(max(float(accuracy), CLAMP), 1.0 - CLAMP)
    s = min(max(float(spd), CLAMP), 1.0 - CLAMP)
    eps = max(float(epsilon), CLAMP)
    return (float(_logit(acc)), float(-_logit(s)), float(-np.log(eps)))


def inverse_transform(t_utility: float, t_fairness: float, t_privacy: float) -> tuple[float, float, float]:
    def sigmoid(z):
        return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))

    return (sigmoid(t_utility), sigmoid(-t_fairness), math.exp(-t_privacy))


# anti-ideal point: accuracy 0, SPD 1, epsilon 1
REFERENCE_RAW = (0.0, 1.0, 1.0)
REFERENCE_POINT = np.array(objective_transform(*REFERENCE_RAW))


@dataclass(frozen=True)
class ObjectiveTriple:
    accuracy: float
    spd: float
    epsilon: float
    failed: bool = False

    @property
    def transformed(self) -> tuple[float, float, float]:
        return objective_transform(self.accuracy, self.spd, self.epsilon)

    @classmethod
    def worst(cls) -> "ObjectiveTriple":
        return cls(accuracy=0.0, spd=1.0, epsilon=EPSILON_CAP, failed=True)


@dataclass
class EvaluationRecord:
    config: PipelineConfig
    objectives: ObjectiveTriple
    wall_time_s: float = 0.0
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        o = self.objectives
        return json.dumps(
            {
                "config": self.config.to_dict(),
                "raw_objectives": {"accuracy": o.accuracy, "spd": o.spd, "epsilon": o.epsilon},
                "transformed_objectives": list(o.transformed),
                "seed": self.config.seed,
                "wall_time_s": round(self.wall_time_s, 3),
                "failed": o.failed,
                **({"extras": self.extras} if self.extras else {}),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "EvaluationRecord":
        d = json.loads(line)
        raw = d["raw_objectives"]
        return cls(
            config=PipelineConfig.from_dict(d["config"]),
            objectives=ObjectiveTriple(raw["accuracy"], raw["spd"], raw["epsilon"], d.get("failed", False)),
            wall_time_s=d.get("wall_time_s", 0.0),
            extras=d.get("extras", {}),
        )


def append_log(path: str | Path, record: EvaluationRecord) -> None:
    with open(path, "a") as fh:
        fh.write(record.to_json() + "\n")


def read_log(path: str | Path) -> list[EvaluationRecord]:
    with open(path) as fh:
        return [EvaluationRecord.from_json(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Evaluation


def calibrate_noise(config: PipelineConfig, n_train: int) -> float:
    q = config.batch_size / n_train
    steps = config.epochs * steps_per_epoch(n_train, config.batch_size)
    return noise_for_target_epsilon(config.target_epsilon, q, steps, config.delta)


def evaluate_detailed(config: PipelineConfig, splits: Splits) -> EvaluationRecord:
    """Run the pipeline once; training failures yield worst-case objectives."""
    start = time.perf_counter()
    train_set, dev_set, test_set = splits
    extras: dict = {}
    if config.preprocessing:
        repairer = QuantileRepairer(config.repair_level, config.repair_columns, config.seed).fit(train_set)
        train_set = repairer.transform(train_set)
        dev_set = repairer.transform(dev_set)
        test_set = repairer.transform(test_set)

    dp = None
    if config.dp:
        sigma = config.noise_multiplier
        if config.target_epsilon is not None:
            sigma = calibrate_noise(config, len(train_set))
            extras["calibrated_noise_multiplier"] = sigma
        dp = DpParams(sigma, config.clipping_norm, config.delta)
    mlp = MlpSpec((train_set.n_features, *config.hidden, 1), init_seed=config.seed)
    spec = TrainSpec(
        epochs=config.epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        optimizer=config.optimizer,
        dp=dp,
        seed=config.seed,
    )
    try:
        trained = train(train_set, mlp, spec)
    except TrainingError as exc:
        logger.warning("evaluation failed (%s); recording worst-case objectives", exc)
        return EvaluationRecord(config, ObjectiveTriple.worst(), time.perf_counter() - start, {"error": str(exc)})

    scores = trained.predict_scores(test_set.features)
    if not np.all(np.isfinite(scores)):
        return EvaluationRecord(config, ObjectiveTriple.worst(), time.perf_counter() - start, {"error": "non-finite scores"})
    if config.postprocessing:
        params = fit_roc_params(trained.predict_scores(dev_set.features), dev_set.protected, dev_set.labels)
        preds = roc_postprocess(scores, test_set.protected, params)
        extras["roc"] = [params.classification_threshold, params.margin]
    else:
        preds = (scores >= 0.5).astype(np.int8)

    accuracy = float(np.mean(preds == test_set.labels))
    spd = abs(statistical_parity_difference(preds, test_set.protected))
    epsilon = trained.privacy.epsilon if trained.privacy is not None else EPSILON_CAP
    if not math.isfinite(epsilon):
        epsilon = EPSILON_CAP
    return EvaluationRecord(
        config, ObjectiveTriple(accuracy, spd, epsilon), time.perf_counter() - start, extras
    )


def evaluate(config: PipelineConfig, splits: Splits) -> ObjectiveTriple:
    return evaluate_detailed(config, splits).objectives


@dataclass(frozen=True)
class Evaluator:
    """``evaluate_detailed`` bound to fixed splits; picklable for worker pools."""

    splits: Splits

    def __call__(self, config: PipelineConfig) -> EvaluationRecord:
        return evaluate_detailed(config, self.splits)


def make_evaluator(splits: Splits) -> Callable[[PipelineConfig], EvaluationRecord]:
    return Evaluator(splits)


# ---------------------------------------------------------------------------
# Replication presets

# module switches per model: (preprocessing, dp, postprocessing)
_PANNEKOEK = {
    "S-NN": (False, False, False),
    "F-NN": (False, False, True),
    "DP-NN": (False, True, False),
    "DPF-NN": (False, True, True),
}
_XU = {
    "PrivLR": (False, True, False),
    "FairLR": (True, False, False),
    "PFLR": (True, True, False),
    "PFLR*": (True, True, True),
}
PRESET_NAMES = tuple(_PANNEKOEK) + tuple(_XU)
PANNEKOEK_EPSILON = 0.1
XU_EPSILONS = (0.1, 1.0, 10.0)


def replication_preset(name: str, epsilon: float | None = None, seed: int = 0) -> PipelineConfig:
    """Module switches and training recipe of a replicated model.

    The neural-network presets train 20 epochs; the logistic-regression
    equivalents train 100 epochs; both use Adam, batch 20, lr 1e-3 on a
    6-6-1 network. DP models get a noise level calibrated to ``epsilon``
    (default 0.1 for the neural-network presets, required for the others).
    """
    if name in _PANNEKOEK:
        pre, dp, post = _PANNEKOEK[name]
        epochs = 20
        if dp and epsilon is None:
            epsilon = PANNEKOEK_EPSILON
    elif name in _XU:
        pre, dp, post = _XU[name]
        epochs = 100
        if dp and epsilon is None:
            raise ValueError(f"preset {name!r} needs an epsilon (one of {XU_EPSILONS})")
    else:
        raise ValueError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")
    return PipelineConfig(
        repair_level=1.0,
        noise_multiplier=0.0,
        clipping_norm=1.0,
        epochs=epochs,
        learning_rate=1e-3,
        batch_size=20,
        preprocessing=pre,
        dp=dp,
        postprocessing=post,
        target_epsilon=epsilon if dp else None,
        optimizer="adam",
        hidden=(6, 6),
        seed=seed,
    )
