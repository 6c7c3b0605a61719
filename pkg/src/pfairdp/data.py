"""Dataset loading, preprocessing and synthetic biased data.

The Adult census data is read from the standard UCI CSV pair
(``adult.data`` + ``adult.test``). Rows with a ``?`` in any field are
dropped, categorical columns are one-hot encoded, continuous columns are
standardised with statistics from the training split only.
"""

from __future__ import annotations

import csv
import io
import logging
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

ADULT_URL = "https://archive.ics.uci.edu/ml/machine-learning-databases/adult/"
ADULT_FILES = ("adult.data", "adult.test")

ADULT_COLUMNS = [
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education-num",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
    "native-country",
    "income",
]
ADULT_CONTINUOUS = [
    "age",
    "fnlwgt",
    "education-num",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
]
ADULT_CATEGORICAL = [c for c in ADULT_COLUMNS if c not in ADULT_CONTINUOUS and c != "income"]
ADULT_LABEL = "income"

# privileged value per protected attribute
PRIVILEGED = {"sex": "Male", "race": "White"}

MISSING = "?"

# (train, dev, test) fractions
REPLICATION_SPLIT = (0.534, 0.133, 0.333)
# 80/20 with a 10% slice of the training share held out for ROC fitting
PARETO_SPLIT = (0.72, 0.08, 0.20)


class DataError(ValueError):
    """Raised for malformed, empty or otherwise unusable input data."""


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = REPLICATION_SPLIT
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3:
            raise ValueError("fractions must have three entries (train, dev, test)")
        if any(f < 0 for f in self.fractions):
            raise ValueError("fractions must be non-negative")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {sum(self.fractions)!r}")


@dataclass(frozen=True)
class SyntheticSpec:
    n_records: int = 12540
    n_continuous: int = 8
    group_fraction: float = 0.6
    bias_strength: float = 0.88
    seed: int = 0
    base_rate: float = 0.18
    signal: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.group_fraction < 1.0:
            raise ValueError("group_fraction must lie in (0, 1)")
        if self.bias_strength < 0:
            raise ValueError("bias_strength must be >= 0")
        if self.n_continuous < 1:
            raise ValueError("n_continuous must be >= 1")
        if not 0.0 < self.base_rate < 1.0:
            raise ValueError("base_rate must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Encoded feature matrix with binary labels and a binary protected vector.

    ``protected`` is 1 for the privileged group; ``labels`` is 1 for the
    favourable outcome. ``column_schema`` lists ``(name, kind)`` pairs with
    kind ``"continuous"`` or ``"one-hot"``; one-hot column names are
    ``"<attribute>=<value>"``.
    """

    features: np.ndarray
    labels: np.ndarray
    protected: np.ndarray
    column_schema: tuple[tuple[str, str], ...]
    normalization: dict = field(default_factory=dict)
    row_index: np.ndarray | None = None
    favorable_label: int = 1

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels).astype(np.int8)
        protected = np.asarray(self.protected).astype(np.int8)
        if features.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n = features.shape[0]
        if labels.shape != (n,) or protected.shape != (n,):
            raise DataError("features, labels and protected must have the same number of rows")
        if features.shape[1] != len(self.column_schema):
            raise DataError("column_schema does not match the feature width")
        for arr in (features, labels, protected):
            arr.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "protected", protected)
        object.__setattr__(self, "column_schema", tuple(tuple(c) for c in self.column_schema))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def continuous_columns(self) -> np.ndarray:
        return np.array(
            [i for i, (_, kind) in enumerate(self.column_schema) if kind == "continuous"], dtype=int
        )

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(
            features=features,
            labels=self.labels,
            protected=self.protected,
            column_schema=self.column_schema,
            normalization=self.normalization,
            row_index=self.row_index,
        )

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            protected=self.protected[idx],
            column_schema=self.column_schema,
            normalization=self.normalization,
            row_index=None if self.row_index is None else self.row_index[idx],
        )


# ---------------------------------------------------------------------------
# Adult loading


def _read_text(source: str | Path) -> str:
    source = str(source)
    if source.startswith(("http://", "https://")):
        try:
            with urllib.request.urlopen(source, timeout=60) as resp:
                return resp.read().decode("utf-8")
        except OSError as exc:
            raise DataError(f"cannot reach {source}: {exc}") from exc
    try:
        return Path(source).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {source}: {exc}") from exc


def _parse_adult_text(text: str, origin: str) -> list[list[str]]:
    rows = []
    for lineno, fields in enumerate(csv.reader(io.StringIO(text), skipinitialspace=True), start=1):
        if not fields or all(not f.strip() for f in fields):
            continue
        # adult.test opens with a "|1x3 Cross validator" banner
        if len(fields) == 1 and fields[0].startswith("|"):
            continue
        if len(fields) != len(ADULT_COLUMNS):
            raise DataError(
                f"{origin}: row {lineno} has {len(fields)} columns, expected {len(ADULT_COLUMNS)}"
            )
        rows.append([f.strip() for f in fields])
    return rows


def load_adult(path_or_url: str | Path) -> pd.DataFrame:
    """Read the Adult census CSV data and apply list-wise deletion.

    ``path_or_url`` may be a directory (or URL prefix ending in ``/``)
    holding ``adult.data`` and ``adult.test``, or a single CSV file in the
    same 15-column layout. Records with a missing (``?``) field are removed.

    Returns:
        DataFrame with the standard Adult columns; continuous columns are
        integers and ``income`` is normalised to ``"<=50K"``/``">50K"``.

    Raises:
        DataError: if the source is unreachable, a row is malformed, or no
            records remain.
    """
    source = str(path_or_url)
    if source.startswith(("http://", "https://")):
        sources = [source + f for f in ADULT_FILES] if source.endswith("/") else [source]
    elif Path(source).is_dir():
        sources = [str(Path(source) / f) for f in ADULT_FILES]
    else:
        sources = [source]

    rows: list[list[str]] = []
    for src in sources:
        rows.extend(_parse_adult_text(_read_text(src), src))
    if not rows:
        raise DataError("no records")

    table = pd.DataFrame(rows, columns=ADULT_COLUMNS)
    complete = ~(table == MISSING).any(axis=1)
    dropped = int((~complete).sum())
    table = table[complete].reset_index(drop=True)
    if table.empty:
        raise DataError("no records")
    logger.info("loaded %d Adult records (%d dropped for missing values)", len(table), dropped)

    for col in ADULT_CONTINUOUS:
        try:
            table[col] = table[col].astype(np.int64)
        except ValueError as exc:
            bad = pd.to_numeric(table[col], errors="coerce").isna().to_numpy().nonzero()[0][0]
            raise DataError(f"row {bad}: non-numeric value in column {col!r}") from exc
    table["income"] = table["income"].str.rstrip(".")
    unknown = set(table["income"]) - {"<=50K", ">50K"}
    if unknown:
        raise DataError(f"unexpected income labels: {sorted(unknown)}")
    return table


def download_adult(dest: str | Path, url: str = ADULT_URL) -> Path:
    """Fetch ``adult.data`` and ``adult.test`` into ``dest`` unchanged."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    for name in ADULT_FILES:
        target = dest / name
        if target.exists():
            continue
        target.write_text(_read_text(url + name))
    return dest


def write_table_cache(table: pd.DataFrame, path: str | Path) -> None:
    """Cache a parsed table as one CSV with the columns in ``ADULT_COLUMNS`` order."""
    table.loc[:, ADULT_COLUMNS].to_csv(path, index=False)


def read_table_cache(path: str | Path) -> pd.DataFrame:
    table = pd.read_csv(path, dtype={c: str for c in ADULT_CATEGORICAL + [ADULT_LABEL]})
    if list(table.columns) != ADULT_COLUMNS:
        raise DataError(f"{path}: unexpected cache column order")
    return table


# ---------------------------------------------------------------------------
# Preprocessing


def split_indices(n: int, split: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded random partition of ``range(n)`` into train/dev/test index arrays."""
    n_train = int(round(split.fractions[0] * n))
    n_dev = int(round(split.fractions[1] * n))
    n_test = n - n_train - n_dev
    if min(n_train, n_dev, n_test) <= 0:
        raise DataError("a split is empty")
    perm = np.random.default_rng(split.seed).permutation(n)
    return perm[:n_train], perm[n_train : n_train + n_dev], perm[n_train + n_dev :]


def preprocess(
    raw: pd.DataFrame,
    protected_attr: str = "sex",
    split: SplitSpec = SplitSpec(),
    *,
    continuous: list[str] | None = None,
    label_col: str = ADULT_LABEL,
    favorable_value: str = ">50K",
    privileged_value: str | None = None,
) -> tuple[Dataset, Dataset, Dataset]:
    """Encode a raw table and split it into train/dev/test ``Dataset``s.

    Categorical columns become one-hot blocks (categories taken from the
    whole table, sorted, so every split shares one schema). Continuous
    columns are standardised with mean/std of the training rows only. The
    protected column is removed from the features.
    """
    if protected_attr not in raw.columns:
        raise DataError(f"unknown protected attribute {protected_attr!r}")
    if continuous is None:
        continuous = [c for c in ADULT_CONTINUOUS if c in raw.columns]
    values = sorted(raw[protected_attr].astype(str).unique())
    if len(values) != 2:
        raise DataError(f"protected column {protected_attr!r} is not binary: {values}")
    if privileged_value is None:
        privileged_value = PRIVILEGED.get(protected_attr, values[-1])
    if privileged_value not in values:
        raise DataError(f"privileged value {privileged_value!r} not present in {protected_attr!r}")

    train_idx, dev_idx, test_idx = split_indices(len(raw), split)

    protected = (raw[protected_attr].astype(str) == privileged_value).to_numpy(np.int8)
    labels = (raw[label_col].astype(str) == favorable_value).to_numpy(np.int8)

    blocks = []
    schema: list[tuple[str, str]] = []
    normalization = {}
    train_rows = raw.iloc[train_idx]
    for col in raw.columns:
        if col in (protected_attr, label_col):
            continue
        if col in continuous:
            x = raw[col].to_numpy(np.float64)
            mean = float(train_rows[col].to_numpy(np.float64).mean())
            std = float(train_rows[col].to_numpy(np.float64).std())
            if std == 0.0:
                std = 1.0
            normalization[col] = (mean, std)
            blocks.append(((x - mean) / std)[:, None])
            schema.append((col, "continuous"))
        else:
            cats = sorted(raw[col].astype(str).unique())
            codes = pd.Categorical(raw[col].astype(str), categories=cats).codes
            onehot = np.zeros((len(raw), len(cats)))
            onehot[np.arange(len(raw)), codes] = 1.0
            blocks.append(onehot)
            schema.extend((f"{col}={c}", "one-hot") for c in cats)
    features = np.hstack(blocks)
    row_index = np.arange(len(raw))

    def make(idx):
        return Dataset(
            features=features[idx],
            labels=labels[idx],
            protected=protected[idx],
            column_schema=tuple(schema),
            normalization=normalization,
            row_index=row_index[idx],
        )

    out = make(train_idx), make(dev_idx), make(test_idx)
    for part in out:
        if part.protected.min() == part.protected.max():
            raise DataError("a split contains only one protected group")
    return out


def load_adult_splits(
    data_path: str | Path, split: SplitSpec, protected_attr: str = "sex"
) -> tuple[Dataset, Dataset, Dataset]:
    return preprocess(load_adult(data_path), protected_attr, split)


# ---------------------------------------------------------------------------
# Synthetic biased data


def _logit(p: float) -> float:
    return float(np.log(p) - np.log1p(-p))


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Gaussian features whose means shift with group and label.

    Favourable-label rates per group are ``sigmoid(logit(base_rate) +/-
    bias_strength / 2)`` so the label-rate gap grows monotonically with
    ``bias_strength`` and vanishes at 0. Each feature mixes a label signal
    and a group signal with seeded random loadings; features are then
    standardised over the whole dataset.
    """
    if spec.n_records < 4:
        raise DataError("n_records must be >= 4 to populate both groups and both labels")
    # tagged key: a bare default_rng(seed) would replay split_indices' permutation
    rng = np.random.default_rng([spec.seed, 0x5D17])
    n = spec.n_records
    n_priv = min(max(int(round(spec.group_fraction * n)), 2), n - 2)
    protected = np.zeros(n, dtype=np.int8)
    protected[rng.permutation(n)[:n_priv]] = 1

    centre = _logit(spec.base_rate)
    p_fav = np.where(
        protected == 1,
        1.0 / (1.0 + np.exp(-(centre + spec.bias_strength / 2))),
        1.0 / (1.0 + np.exp(-(centre - spec.bias_strength / 2))),
    )
    labels = (rng.random(n) < p_fav).astype(np.int8)
    # both labels must be present in both groups
    for g in (0, 1):
        members = np.flatnonzero(protected == g)
        for y in (0, 1):
            if not np.any(labels[members] == y):
                labels[members[0 if y == 1 else -1]] = y

    label_load = rng.uniform(0.2, 1.0, spec.n_continuous) * rng.choice([-1.0, 1.0], spec.n_continuous)
    group_load = rng.uniform(0.0, 0.8, spec.n_continuous) * rng.choice([-1.0, 1.0], spec.n_continuous)
    means = spec.signal * (
        np.outer(labels - 0.5, label_load) + np.outer(protected - 0.5, group_load)
    )
    x = means + rng.standard_normal((n, spec.n_continuous))
    mu, sd = x.mean(axis=0), x.std(axis=0)
    x = (x - mu) / sd
    schema = tuple((f"x{j}", "continuous") for j in range(spec.n_continuous))
    normalization = {name: (float(m), float(s)) for (name, _), m, s in zip(schema, mu, sd)}
    return Dataset(
        features=x,
        labels=labels,
        protected=protected,
        column_schema=schema,
        normalization=normalization,
        row_index=np.arange(n),
    )


def split_dataset(data: Dataset, split: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Partition an already-encoded dataset (e.g. a synthetic one)."""
    train_idx, dev_idx, test_idx = split_indices(len(data), split)
    return data.subset(train_idx), data.subset(dev_idx), data.subset(test_idx)
