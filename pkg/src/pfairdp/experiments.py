"""Experiment drivers behind the command line: replication studies and Pareto-front runs."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import pandas as pd

from .data import (
    PARETO_SPLIT,
    REPLICATION_SPLIT,
    DataError,
    SplitSpec,
    SyntheticSpec,
    download_adult,
    generate_synthetic,
    load_adult,
    preprocess,
    split_dataset,
)
from .mobo import (
    ParetoArchive,
    pareto_mask,
    run_grid_search,
    run_mobo,
    run_random_search,
    write_cross_sections,
    write_front_csv,
    write_hv_trace_csv,
)
from .mobo.export import FRONT_COLUMNS
from .pipeline import (
    DESK_DOMAIN,
    REFERENCE_POINT,
    TABLE7_DOMAIN,
    XU_EPSILONS,
    Evaluator,
    PipelineConfig,
    Splits,
    append_log,
    evaluate_detailed,
    read_log,
    replication_preset,
)

logger = logging.getLogger(__name__)

PANNEKOEK_ROWS = ("S-NN", "DP-NN", "F-NN", "DPF-NN")
XU_ROWS = ("PrivLR", "PFLR", "PFLR*")
DEFAULT_ADULT_PATH = Path("data/adult")

DESK_BUDGETS = {"mobo": 30, "random": 40, "grid": 81}
PAPER_BUDGETS = {"mobo": 250, "random": 300, "grid": 256}
GRID_LEVELS = {"desk": 3, "paper": 4}


# ---------------------------------------------------------------------------
# Data


def resolve_adult(data_path: str | Path | None, download: bool) -> Path:
    """Directory or file holding the Adult data, fetching it first if asked."""
    path = Path(data_path) if data_path is not None else DEFAULT_ADULT_PATH
    if download:
        download_adult(path)
    if not path.exists():
        raise DataError(f"Adult data not found at {path}; pass --data-path or --download")
    return path


# ---------------------------------------------------------------------------
# Replication


def study_rows(study: str) -> list[tuple[str, float | None]]:
    if study == "pannekoek":
        return [(name, None) for name in PANNEKOEK_ROWS]
    if study == "xu":
        return [(name, eps) for name in XU_ROWS for eps in XU_EPSILONS]
    raise ValueError(f"unknown study {study!r}; expected 'pannekoek' or 'xu'")


def _std(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float(values.std(ddof=1)) if values.size > 1 else 0.0


def replicate_study(raw: pd.DataFrame, study: str, runs: int = 10, seed: int = 0) -> pd.DataFrame:
    """Run every preset of a study ``runs`` times and summarise mean and std.

    Run ``k`` uses seed ``seed + k`` for both the data split and training,
    so the same seeds are shared across models.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    rows = study_rows(study)
    results: dict[tuple, list] = {row: [] for row in rows}
    for k in range(runs):
        run_seed = seed + k
        splits = Splits(*preprocess(raw, "sex", SplitSpec(REPLICATION_SPLIT, run_seed)))
        for name, eps in rows:
            record = evaluate_detailed(replication_preset(name, eps, run_seed), splits)
            results[(name, eps)].append(record.objectives)
            logger.info("%s eps=%s run %d: acc=%.4f rd=%.4f", name, eps, k, record.objectives.accuracy, record.objectives.spd)
    out = []
    for (name, eps), objs in results.items():
        acc = [o.accuracy for o in objs]
        rd = [o.spd for o in objs]
        eps_reported = [o.epsilon for o in objs]
        out.append(
            {
                "model": name,
                "target_epsilon": eps if eps is not None else (replication_preset(name, None).target_epsilon or float("nan")),
                "runs": runs,
                "accuracy_mean": float(np.mean(acc)),
                "accuracy_std": _std(acc),
                "risk_difference_mean": float(np.mean(rd)),
                "risk_difference_std": _std(rd),
                "epsilon_mean": float(np.mean(eps_reported)),
                "failed_runs": int(sum(o.failed for o in objs)),
            }
        )
    return pd.DataFrame(out)


def format_study_table(table: pd.DataFrame) -> str:
    lines = [f"{'model':<8} {'eps':>6} {'accuracy':>18} {'risk difference':>20} {'reported eps':>13}"]
    for row in table.itertuples(index=False):
        eps = "-" if np.isnan(row.target_epsilon) else f"{row.target_epsilon:g}"
        reported = "inf" if row.epsilon_mean >= 1e6 else f"{row.epsilon_mean:.4f}"
        lines.append(
            f"{row.model:<8} {eps:>6} {100 * row.accuracy_mean:>9.2f} ± {100 * row.accuracy_std:<5.2f}%"
            f" {row.risk_difference_mean:>11.4f} ± {row.risk_difference_std:<6.4f} {reported:>13}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Pareto-front runs

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "required": ["name", "method"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9._-]+$"},
        "method": {"enum": ["mobo", "random", "grid"]},
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"enum": ["adult", "synthetic"]},
                "path": {"type": "string"},
                "download": {"type": "boolean"},
                "synthetic": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "n_records": {"type": "integer", "minimum": 4},
                        "n_continuous": {"type": "integer", "minimum": 1},
                        "group_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                        "bias_strength": {"type": "number", "minimum": 0},
                        "base_rate": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                        "signal": {"type": "number"},
                    },
                },
            },
        },
        "scale": {"enum": ["desk", "paper"]},
        "budget": {"type": "integer", "minimum": 1},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "output_dir": {"type": "string"},
        "n_init": {"type": "integer", "minimum": 1},
        "grid_levels": {"type": "integer", "minimum": 2},
        "candidate_budget": {"type": "integer", "minimum": 1},
        "n_mc": {"type": "integer", "minimum": 1},
        "n_workers": {"type": "integer", "minimum": 1},
        "pipeline": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preprocessing": {"type": "boolean"},
                "dp": {"type": "boolean"},
                "postprocessing": {"type": "boolean"},
                "optimizer": {"enum": ["adam", "sgd"]},
                "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "repair_columns": {"enum": ["all", "continuous"]},
            },
        },
    },
}

# network and optimiser per dataset when the run file does not override them
DATASET_DEFAULTS = {
    "adult": {"hidden": [6, 6], "optimizer": "adam"},
    "synthetic": {"hidden": [30, 30], "optimizer": "sgd"},
}


@dataclass
class RunConfig:
    name: str
    method: str
    dataset: dict = field(default_factory=lambda: {"name": "adult"})
    scale: str = "desk"
    budget: int | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    n_init: int = 16
    grid_levels: int | None = None
    candidate_budget: int = 2048
    n_mc: int = 512
    n_workers: int = 1
    pipeline: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        jsonschema.validate(d, RUN_CONFIG_SCHEMA)
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "method": self.method,
            "dataset": self.dataset,
            "scale": self.scale,
            "budget": self.effective_budget,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "n_init": self.n_init,
            "grid_levels": self.effective_grid_levels,
            "candidate_budget": self.candidate_budget,
            "n_mc": self.n_mc,
            "n_workers": self.n_workers,
            "pipeline": self.pipeline,
        }

    @property
    def dataset_name(self) -> str:
        return self.dataset.get("name", "adult")

    @property
    def effective_grid_levels(self) -> int:
        return self.grid_levels if self.grid_levels is not None else GRID_LEVELS[self.scale]

    @property
    def effective_budget(self) -> int:
        if self.method == "grid":
            return self.effective_grid_levels**4
        if self.budget is not None:
            return self.budget
        return (DESK_BUDGETS if self.scale == "desk" else PAPER_BUDGETS)[self.method]

    @property
    def domain(self):
        return DESK_DOMAIN if self.scale == "desk" else TABLE7_DOMAIN

    def base_config(self) -> PipelineConfig:
        opts = {**DATASET_DEFAULTS[self.dataset_name], **self.pipeline}
        opts["hidden"] = tuple(opts["hidden"])
        return PipelineConfig(**opts)


def load_splits(run: RunConfig, seed: int) -> Splits:
    """Train/dev/test splits for one seed of a run (80/20 with a dev slice)."""
    split = SplitSpec(PARETO_SPLIT, seed)
    if run.dataset_name == "synthetic":
        spec = SyntheticSpec(seed=seed, **run.dataset.get("synthetic", {}))
        return Splits(*split_dataset(generate_synthetic(spec), split))
    path = resolve_adult(run.dataset.get("path"), run.dataset.get("download", False))
    return Splits(*preprocess(load_adult(path), "sex", split))


def run_search(run: RunConfig, seed: int, splits: Splits, log_path: Path | None = None) -> ParetoArchive:
    evaluate = Evaluator(splits)
    on_record = (lambda rec: append_log(log_path, rec)) if log_path is not None else None
    common = {"domain": run.domain, "base_config": run.base_config(), "on_record": on_record}
    if run.method == "mobo":
        return run_mobo(
            evaluate,
            run.effective_budget,
            min(run.n_init, run.effective_budget),
            seed,
            candidate_budget=run.candidate_budget,
            n_mc=run.n_mc,
            **common,
        )
    if run.method == "random":
        return run_random_search(evaluate, run.effective_budget, seed, n_workers=run.n_workers, **common)
    return run_grid_search(evaluate, run.effective_grid_levels, seed, n_workers=run.n_workers, **common)


def front_table(archive: ParetoArchive) -> pd.DataFrame:
    rows = []
    for i in archive.front:
        o = archive.records[i].objectives
        c = archive.records[i].config
        rows.append({"index": i, "accuracy": o.accuracy, "spd": o.spd, "epsilon": o.epsilon, **c.to_dict()})
    return pd.DataFrame(rows).sort_values(["epsilon", "index"]) if rows else pd.DataFrame(rows)


def summary_text(run: RunConfig, seed: int, archive: ParetoArchive) -> str:
    buf = io.StringIO()
    buf.write(f"run: {run.name}\nmethod: {run.method}\ndataset: {run.dataset_name}\nscale: {run.scale}\n")
    buf.write(f"seed: {seed}\nevaluations: {len(archive)}\n")
    buf.write(f"failed evaluations: {sum(r.objectives.failed for r in archive.records)}\n")
    buf.write(f"final hypervolume: {archive.hv_trace[-1]!r}\nfront size: {len(archive.front)}\n\n")
    buf.write("front (sorted by epsilon):\n")
    buf.write(f"{'index':>6} {'accuracy':>9} {'spd':>8} {'epsilon':>10}\n")
    table = front_table(archive)
    for row in table.itertuples(index=False):
        buf.write(f"{row.index:>6} {row.accuracy:>9.4f} {row.spd:>8.4f} {row.epsilon:>10.4f}\n")
    return buf.getvalue()


def write_run_artifacts(run_dir: Path, run: RunConfig, seed: int, archive: ParetoArchive) -> None:
    write_front_csv(archive, run_dir / "front.csv")
    write_hv_trace_csv([(run.method, seed, archive.hv_trace)], run_dir / "hv_trace.csv")
    write_cross_sections(archive, run_dir)
    (run_dir / "summary.txt").write_text(summary_text(run, seed, archive))


def optimize(run: RunConfig) -> dict[int, ParetoArchive]:
    """Execute a run file; one artifact directory per seed.

    A single seed writes straight into ``<output_dir>/<name>/``; several
    seeds get ``seed-<s>/`` subdirectories plus a combined ``hv_trace.csv``.
    """
    root = Path(run.output_dir) / run.name
    root.mkdir(parents=True, exist_ok=True)
    (root / "run_config.json").write_text(json.dumps(run.to_dict(), indent=2, sort_keys=True) + "\n")
    archives = {}
    for seed in run.seeds:
        run_dir = root if len(run.seeds) == 1 else root / f"seed-{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        log_path = run_dir / "log.jsonl"
        log_path.write_text("")
        splits = load_splits(run, seed)
        archive = run_search(run, seed, splits, log_path)
        write_run_artifacts(run_dir, run, seed, archive)
        archives[seed] = archive
    if len(run.seeds) > 1:
        write_hv_trace_csv([(run.method, s, a.hv_trace) for s, a in archives.items()], root / "hv_trace.csv")
    return archives


# ---------------------------------------------------------------------------
# Queries on emitted artifacts


def query_front(front_csv: str | Path, accuracy_min: float) -> pd.DataFrame:
    """Front points with accuracy >= ``accuracy_min``, sorted by epsilon."""
    path = Path(front_csv)
    if not path.exists():
        raise FileNotFoundError(f"front file not found: {path}")
    table = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in FRONT_COLUMNS if c not in table.columns]
    if missing:
        raise DataError(f"{path} is not a front CSV (missing columns {missing})")
    hits = table[(table["on_front"] == 1) & (table["accuracy"] >= accuracy_min)]
    return hits.sort_values(["epsilon", "accuracy"], ascending=[True, False], kind="stable")


def recompute_on_front(front_csv: str | Path) -> np.ndarray:
    table = pd.read_csv(front_csv, float_precision="round_trip")
    return pareto_mask(table[["t_utility", "t_fairness", "t_privacy"]].to_numpy())


def trace_from_log(log_path: str | Path) -> list[float]:
    """Hypervolume after each logged evaluation, recomputed from the raw objectives."""
    archive = ParetoArchive(REFERENCE_POINT)
    for record in read_log(log_path):
        archive.add(record, record.objectives.transformed)
    return archive.hv_trace


def collect_traces(run_dirs: list[str | Path]) -> list[tuple[str, int, list[float]]]:
    """Traces of every per-seed directory below the given run directories."""
    traces = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        cfg_path = run_dir / "run_config.json"
        if not cfg_path.exists():
            raise FileNotFoundError(f"{run_dir} has no run_config.json")
        cfg = json.loads(cfg_path.read_text())
        seeds = cfg["seeds"]
        for seed in seeds:
            sub = run_dir if len(seeds) == 1 else run_dir / f"seed-{seed}"
            traces.append((cfg["method"], seed, trace_from_log(sub / "log.jsonl")))
    return traces


def similar_utility_pairs(archive_or_csv, max_accuracy_gap: float = 0.01, min_epsilon_ratio: float = 1.5):
    """Front pairs with near-equal accuracy but clearly different epsilon."""
    if isinstance(archive_or_csv, ParetoArchive):
        pts = [(archive_or_csv.records[i].objectives.accuracy, archive_or_csv.records[i].objectives.epsilon, i)
               for i in archive_or_csv.front]
    else:
        table = pd.read_csv(archive_or_csv, float_precision="round_trip")
        front = table[table["on_front"] == 1]
        pts = list(zip(front["accuracy"], front["epsilon"], front.index))
    pairs = []
    for a in range(len(pts)):
        for b in range(a + 1, len(pts)):
            acc_a, eps_a, i = pts[a]
            acc_b, eps_b, j = pts[b]
            if abs(acc_a - acc_b) < max_accuracy_gap and max(eps_a, eps_b) >= min_epsilon_ratio * min(eps_a, eps_b):
                pairs.append((i, j))
    return pairs


def write_csv_rows(path: str | Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
