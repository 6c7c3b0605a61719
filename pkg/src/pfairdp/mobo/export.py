"""CSV exports of an archive: all evaluations with front flags, hypervolume traces, 2-D cross sections."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..pipeline import TUNED_FIELDS
from .pareto import ParetoArchive, pareto_mask

CONFIG_COLUMNS = TUNED_FIELDS + ("preprocessing", "dp", "postprocessing")
OBJECTIVE_COLUMNS = ("accuracy", "spd", "epsilon", "t_utility", "t_fairness", "t_privacy")
FRONT_COLUMNS = CONFIG_COLUMNS + OBJECTIVE_COLUMNS + ("on_front",)
HV_COLUMNS = ("iteration", "hypervolume", "method", "seed")
# name -> (first objective, second objective); u = utility, f = fairness, v/p = privacy
CROSS_SECTIONS = {"uv": (0, 2), "uf": (0, 1), "fp": (1, 2)}


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)  # shortest round-tripping form
    return str(value)


def front_rows(archive: ParetoArchive) -> list[list[str]]:
    on_front = archive.on_front()
    rows = []
    for i, record in enumerate(archive.records):
        o = record.objectives
        t = archive.objectives[i]
        row = [getattr(record.config, name) for name in CONFIG_COLUMNS]
        row += [float(o.accuracy), float(o.spd), float(o.epsilon), float(t[0]), float(t[1]), float(t[2])]
        row.append(bool(on_front[i]))
        rows.append([_fmt(v) for v in row])
    return rows


def write_front_csv(archive: ParetoArchive, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FRONT_COLUMNS)
        writer.writerows(front_rows(archive))


def write_hv_trace_csv(traces: list[tuple[str, int, list[float]]], path: str | Path) -> None:
    """``traces`` holds ``(method, seed, hv_trace)`` triples; iterations start at 1."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HV_COLUMNS)
        for method, seed, trace in traces:
            for k, hv in enumerate(trace, start=1):
                writer.writerow([k, _fmt(float(hv)), method, seed])


def write_cross_sections(archive: ParetoArchive, directory: str | Path, prefix: str = "xsect_") -> list[Path]:
    """Pairwise projections of the 3-D front, flagged with 2-D non-dominance."""
    names = ("accuracy", "spd", "epsilon")
    t_names = ("t_utility", "t_fairness", "t_privacy")
    front = archive.front
    pts = archive.objectives[front] if front else np.empty((0, 3))
    paths = []
    for tag, (a, b) in CROSS_SECTIONS.items():
        path = Path(directory) / f"{prefix}{tag}.csv"
        mask = pareto_mask(pts[:, [a, b]]) if len(front) else np.zeros(0, dtype=bool)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", names[a], names[b], t_names[a], t_names[b], "on_2d_front"])
            for k, i in enumerate(front):
                raw = archive.records[i].objectives
                raw_vals = (raw.accuracy, raw.spd, raw.epsilon)
                writer.writerow(
                    [i]
                    + [_fmt(float(raw_vals[a])), _fmt(float(raw_vals[b]))]
                    + [_fmt(float(pts[k, a])), _fmt(float(pts[k, b]))]
                    + [_fmt(bool(mask[k]))]
                )
        paths.append(path)
    return paths


def read_front_csv(path: str | Path):
    import pandas as pd

    return pd.read_csv(path, float_precision="round_trip")
