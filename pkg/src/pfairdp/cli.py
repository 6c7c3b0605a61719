"""Command-line entry point.

Commands:
    ingest       parse (optionally download) the Adult data and report its bias statistics
    replicate    run the pannekoek or xu replication presets and summarise them
    optimize     search for a Pareto front (mobo, random or grid) and export it
    front-query  list front points above an accuracy floor, sorted by epsilon
    hv-trace     recompute and merge hypervolume traces from run logs
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import jsonschema

from . import __version__
from .data import PARETO_SPLIT, DataError, SplitSpec, load_adult, preprocess, write_table_cache
from .experiments import (
    RunConfig,
    collect_traces,
    format_study_table,
    optimize,
    query_front,
    replicate_study,
    resolve_adult,
)
from .fairness import disparate_impact, statistical_parity_difference
from .mobo import write_hv_trace_csv

logger = logging.getLogger("pfairdp")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-path", help="Adult directory, file or URL prefix (default: data/adult)")
    p.add_argument("--download", action="store_true", help="fetch the Adult files into --data-path first")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pfairdp", description="Fair and differentially private training with Pareto-front search.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse the Adult data and print dataset statistics")
    _add_data_flags(p)
    p.add_argument("--seed", type=int, default=0, help="split seed for the training-split statistics")
    p.add_argument("--cache", help="write the parsed table to this CSV")

    p = sub.add_parser("replicate", help="run a replication study")
    p.add_argument("--study", choices=("pannekoek", "xu"), required=True)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="first seed; run k uses seed + k")
    p.add_argument("--out", help="CSV path for the mean/std table (default: runs/replicate_<study>.csv)")
    _add_data_flags(p)

    p = sub.add_parser("optimize", help="search for a Pareto front and export it")
    p.add_argument("--config", help="JSON run file; command-line flags override its fields")
    p.add_argument("--name", help="run name (artifacts go to <output-dir>/<name>/)")
    p.add_argument("--method", choices=("mobo", "random", "grid"))
    p.add_argument("--dataset", choices=("adult", "synthetic"))
    p.add_argument("--budget", type=int, help="number of evaluations (ignored by grid)")
    p.add_argument("--seed", type=int, action="append", help="seed; repeat for several paired runs")
    p.add_argument("--output-dir", help="root directory for run artifacts (default: runs)")
    scale = p.add_mutually_exclusive_group()
    scale.add_argument("--desk-scale", dest="scale", action="store_const", const="desk",
                       help="reduced budgets (mobo 30, random 40, grid 3 levels) and epochs in [5, 20]")
    scale.add_argument("--paper-scale", dest="scale", action="store_const", const="paper",
                       help="full budgets (mobo 250, random 300, grid 4 levels) and epochs in [30, 128]")
    _add_data_flags(p)

    p = sub.add_parser("front-query", help="front points with accuracy >= a floor, sorted by epsilon")
    p.add_argument("front_csv")
    p.add_argument("--accuracy-min", type=float, default=0.0)

    p = sub.add_parser("hv-trace", help="recompute hypervolume traces from run logs")
    p.add_argument("run_dirs", nargs="+", help="run directories written by optimize")
    p.add_argument("--out", help="write the merged trace CSV here")
    return parser


def _run_config_from_args(args) -> RunConfig:
    d: dict = {}
    if args.config:
        with open(args.config) as fh:
            d = json.load(fh)
    for key, value in (("name", args.name), ("method", args.method), ("budget", args.budget),
                       ("output_dir", args.output_dir), ("scale", args.scale)):
        if value is not None:
            d[key] = value
    if args.seed:
        d["seeds"] = list(args.seed)
    dataset = dict(d.get("dataset", {}))
    if args.dataset:
        dataset["name"] = args.dataset
    if args.data_path:
        dataset["path"] = args.data_path
    if args.download:
        dataset["download"] = True
    if dataset:
        d["dataset"] = dataset
    if "name" not in d and "method" in d:
        d["name"] = f"{dataset.get('name', 'adult')}-{d['method']}"
    return RunConfig.from_dict(d)


def cmd_ingest(args) -> int:
    path = resolve_adult(args.data_path, args.download)
    raw = load_adult(path)
    train, _, _ = preprocess(raw, "sex", SplitSpec(PARETO_SPLIT, args.seed))
    print(f"records after list-wise deletion: {len(raw)}")
    print(f"encoded features: {train.n_features}")
    print(f"favourable-label rate: {(raw['income'] == '>50K').mean():.4f}")
    print(f"training split ({len(train)} records), protected attribute sex:")
    print(f"  label SPD: {statistical_parity_difference(train.labels, train.protected):.4f}")
    print(f"  label DI:  {disparate_impact(train.labels, train.protected):.4f}")
    if args.cache:
        write_table_cache(raw, args.cache)
        print(f"cached table written to {args.cache}")
    return 0


def cmd_replicate(args) -> int:
    raw = load_adult(resolve_adult(args.data_path, args.download))
    table = replicate_study(raw, args.study, args.runs, args.seed)
    out = Path(args.out) if args.out else Path("runs") / f"replicate_{args.study}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out, index=False)
    print(format_study_table(table))
    print(f"\nwritten to {out}")
    return 0


def cmd_optimize(args) -> int:
    run = _run_config_from_args(args)
    archives = optimize(run)
    root = Path(run.output_dir) / run.name
    for seed, archive in archives.items():
        print(f"{run.method} seed {seed}: {len(archive)} evaluations, front size {len(archive.front)}, "
              f"final hypervolume {archive.hv_trace[-1]:.4f}")
    print(f"artifacts in {root}")
    return 0


def cmd_front_query(args) -> int:
    hits = query_front(args.front_csv, args.accuracy_min)
    if hits.empty:
        print(f"no front points with accuracy >= {args.accuracy_min}")
        return 0
    cols = ["accuracy", "epsilon", "spd", "repair_level", "noise_multiplier", "clipping_norm",
            "epochs", "learning_rate", "batch_size"]
    print(hits[cols].to_string(index=False))
    return 0


def cmd_hv_trace(args) -> int:
    traces = collect_traces(args.run_dirs)
    for method, seed, trace in traces:
        print(f"{method:<7} seed {seed:<4} evaluations {len(trace):<5} final hypervolume {trace[-1]:.4f}")
    if args.out:
        write_hv_trace_csv(traces, args.out)
        print(f"written to {args.out}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "replicate": cmd_replicate,
    "optimize": cmd_optimize,
    "front-query": cmd_front_query,
    "hv-trace": cmd_hv_trace,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except jsonschema.ValidationError as exc:
        print(f"error: invalid run config: {exc.message}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
