"""Command-line entry point: dataset prep, training runs and ablation sweeps.

Results land under `<results-root>/<config-hash>/`; report.json files are
byte-for-byte reproducible from (config, seed), wall-clock timings go to a
sidecar. Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .errors import ConfigError, DataError, NumericError
from .graphs import (
    AttributedGraph,
    generate_grid,
    load_edge_list,
    load_features_labels,
    load_manifest,
    one_hot_features,
    remove_edges,
    sample_semi_supervised,
    sample_supervised_fraction,
    split_links,
)
from .hierarchy import build_hierarchy, dump_hierarchy, flatten_partitions, modularity
from .model import HcGnnModel
from .tasks import (
    TrainReport,
    train_community_detection,
    train_inductive,
    train_link_prediction,
    train_node_classification,
)


def _results_root(explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    return Path(os.environ.get("HCGNN_RESULTS_ROOT", "runs"))


def _load_graph(cfg: ExperimentConfig) -> AttributedGraph:
    ds = cfg.dataset
    if "grid" in ds:
        graph = generate_grid(int(ds["grid"][0]), int(ds["grid"][1]))
    else:
        graph = load_edge_list(
            ds["edges"], ds.get("num_nodes"), one_based=ds.get("one_based", False)
        )
    if ds.get("features") or ds.get("labels"):
        graph = load_features_labels(ds.get("features"), ds.get("labels"), graph)
    return graph


def _build_model(cfg: ExperimentConfig, base: AttributedGraph, seed: int, method: str):
    h = cfg.hierarchy
    hier = build_hierarchy(
        base,
        method,
        lam=int(h["lambda"]),
        seed=seed,
        lam_strict=bool(h["lambda_strict"]),
        target_levels=int(h["target_levels"]),
    )
    model = HcGnnModel(
        hier,
        base.features.shape[1],
        int(cfg.model["num_layers"]),
        dim=int(cfg.model["dim"]),
        seed=seed,
        per_level_weights=bool(cfg.model["per_level_weights"]),
    )
    return model


def run_single(
    cfg: ExperimentConfig,
    seed: int,
    method: str | None = None,
    levels_used: int | None = None,
    sparsity: tuple[str, float] | None = None,
) -> TrainReport:
    """One seeded training run under optional sweep overrides."""
    method = method or cfg.hierarchy["method"]
    if levels_used is None:
        levels_used = cfg.hierarchy["levels_used"]
    epochs = int(cfg.train["epochs"])
    lr = float(cfg.train["lr"])
    if cfg.task == "inductive":
        entries = load_manifest(cfg.dataset["manifest"])
        report = train_inductive(
            {
                "num_layers": int(cfg.model["num_layers"]),
                "dim": int(cfg.model["dim"]),
                "hierarchy_method": method,
                "lam": int(cfg.hierarchy["lambda"]),
                "lam_strict": bool(cfg.hierarchy["lambda_strict"]),
                "target_levels": int(cfg.hierarchy["target_levels"]),
            },
            entries,
            epochs=epochs,
            lr=lr,
            seed=seed,
        )
    else:
        graph = _load_graph(cfg)
        if sparsity is not None:
            graph = remove_edges(graph, sparsity[1], sparsity[0], seed=seed)
        if graph.features is None:
            graph = one_hot_features(graph)
        if cfg.task == "link-pred":
            split = split_links(graph, seed)
            model = _build_model(cfg, split.residual_graph, seed, method)
            report = train_link_prediction(
                model, graph, split, epochs, lr, seed, levels_used
            )
        elif cfg.task == "node-class":
            split = sample_semi_supervised(
                graph,
                per_class=int(cfg.split["per_class"]),
                val_size=int(cfg.split["val_size"]),
                test_size=int(cfg.split["test_size"]),
                seed=seed,
            )
            model = _build_model(cfg, graph, seed, method)
            report = train_node_classification(
                model, graph, split, epochs, lr, seed, levels_used
            )
        else:  # community
            split = sample_supervised_fraction(
                graph, float(cfg.split["train_frac"]), seed=seed
            )
            model = _build_model(cfg, graph, seed, method)
            report = train_community_detection(
                model, graph, split, epochs, lr, seed, levels_used
            )
    report.metadata["hierarchy_method"] = method
    if levels_used is not None:
        report.metadata["levels_used"] = int(levels_used)
    if sparsity is not None:
        report.metadata["sparsity"] = {"mode": sparsity[0], "fraction": sparsity[1]}
    return report


def _run_for_pool(args) -> TrainReport:
    cfg_dict, seed, overrides = args
    return run_single(ExperimentConfig(**cfg_dict), seed, **overrides)


def _run_many(cfg: ExperimentConfig, jobs: int, jobspecs: list[tuple[int, dict]]):
    """Execute (seed, overrides) runs, optionally on a process pool."""
    payload = [(cfg.to_dict(), seed, ov) for seed, ov in jobspecs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_for_pool, payload))
    return [_run_for_pool(p) for p in payload]


def _aggregate(reports: list[TrainReport]) -> dict[str, tuple[float, float]]:
    keys = reports[0].test_metrics.keys()
    return {
        k: (
            float(np.mean([r.test_metrics[k] for r in reports])),
            float(np.std([r.test_metrics[k] for r in reports])),
        )
        for k in keys
    }


def _write_reports(reports: list[TrainReport], out_dir: Path) -> None:
    for r in reports:
        run_dir = out_dir / str(r.seed)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "report.json").write_text(r.to_json(include_timing=False) + "\n")
        (run_dir / "timing.txt").write_text(f"{r.wall_clock_sec:.3f}\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_hierarchy(cfg: ExperimentConfig, out_root: Path) -> int:
    graph = _load_graph(cfg)
    seed = int(cfg.train["seeds"][0])
    h = cfg.hierarchy
    hier = build_hierarchy(
        graph,
        h["method"],
        lam=int(h["lambda"]),
        seed=seed,
        lam_strict=bool(h["lambda_strict"]),
        target_levels=int(h["target_levels"]),
    )
    out_dir = out_root / cfg.config_hash()
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "hierarchy.txt"
    path.write_text(dump_hierarchy(hier))
    print(f"levels {hier.num_levels}")
    print("sizes " + " ".join(str(s) for s in hier.level_sizes()))
    for lvl in range(1, len(hier.partitions) + 1):
        q = modularity(hier.graphs[0], flatten_partitions(hier.partitions, lvl))
        print(f"modularity level {lvl + 1}: {q:.6f}")
    for k, g in enumerate(hier.graphs[1:], start=2):
        if g.num_edges == 0 and g.num_nodes > 1:
            warnings.warn(f"level {k} has no edges (lambda too large?)")
    print(f"wrote {path}")
    return 0


def cmd_train(cfg: ExperimentConfig, out_root: Path, jobs: int) -> int:
    seeds = [int(s) for s in cfg.train["seeds"]]
    reports = _run_many(cfg, jobs, [(s, {}) for s in seeds])
    out_dir = out_root / cfg.config_hash()
    _write_reports(reports, out_dir)
    agg = _aggregate(reports)
    with (out_dir / "aggregate.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "mean", "std", "n"])
        for k, (mean, std) in agg.items():
            writer.writerow([k, f"{mean:.6f}", f"{std:.6f}", len(reports)])
    for k, (mean, std) in agg.items():
        print(f"{k} {mean:.3f}±{std:.3f}")
    print(f"wrote {out_dir}")
    return 0


def _sweep_rows(cfg, jobs, variants, out_name, out_root, aggregate_rows):
    """Run every (label, overrides) variant across all seeds and emit a CSV."""
    seeds = [int(s) for s in cfg.train["seeds"]]
    out_dir = out_root / cfg.config_hash()
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for label, overrides in variants:
        reports = _run_many(cfg, jobs, [(s, overrides) for s in seeds])
        if aggregate_rows:
            agg = _aggregate(reports)
            key = reports[0].primary_metric()
            rows.append([*label, key, f"{agg[key][0]:.6f}", f"{agg[key][1]:.6f}", len(reports)])
        else:
            for r in reports:
                key = r.primary_metric()
                rows.append([*label, r.seed, key, f"{r.test_metrics[key]:.6f}"])
    path = out_dir / out_name
    header = (
        ["setting", "metric", "mean", "std", "n"]
        if aggregate_rows
        else ["mode", "fraction", "seed", "metric", "value"]
    )
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    print(f"wrote {path}")
    return 0


def cmd_sweep_levels(cfg: ExperimentConfig, out_root: Path, jobs: int) -> int:
    graph = _load_graph(cfg)
    if graph.features is None:
        graph = one_hot_features(graph)
    base = graph
    if cfg.task == "link-pred":
        base = split_links(graph, int(cfg.train["seeds"][0])).residual_graph
    probe = build_hierarchy(
        base,
        cfg.hierarchy["method"],
        lam=int(cfg.hierarchy["lambda"]),
        seed=int(cfg.train["seeds"][0]),
        lam_strict=bool(cfg.hierarchy["lambda_strict"]),
        target_levels=int(cfg.hierarchy["target_levels"]),
    )
    variants = [((f"levels:{j}",), {"levels_used": j}) for j in range(1, probe.num_levels + 1)]
    variants.append((("flat",), {"method": "flat"}))
    return _sweep_rows(cfg, jobs, variants, "sweep_levels.csv", out_root, True)


def cmd_sweep_hierarchy(cfg: ExperimentConfig, out_root: Path, jobs: int) -> int:
    variants = [
        ((m,), {"method": m}) for m in ("louvain", "girvan_newman", "random", "flat")
    ]
    return _sweep_rows(cfg, jobs, variants, "sweep_hierarchy.csv", out_root, True)


def cmd_sweep_sparsity(cfg: ExperimentConfig, out_root: Path, jobs: int) -> int:
    spar = cfg.sparsity or {}
    modes = [spar["mode"]] if spar.get("mode") else ["global", "per-node"]
    fractions = [float(f) for f in spar.get("fractions", [0.1, 0.2, 0.3, 0.4, 0.5])]
    variants = []
    for mode in modes:
        for frac in fractions:
            overrides = {"sparsity": (mode, frac)} if frac > 0 else {}
            variants.append(((mode, f"{frac:g}"), overrides))
    return _sweep_rows(cfg, jobs, variants, "sweep_sparsity.csv", out_root, False)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hcgnn",
        description="Hierarchy-aware graph neural network experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("hierarchy", "train", "sweep-levels", "sweep-hierarchy", "sweep-sparsity"):
        p = sub.add_parser(name)
        p.add_argument("config", help="JSON experiment config")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY.PATH=VALUE",
            help="override a config field (flags win)",
        )
        p.add_argument("--out", default=None, help="results root (default $HCGNN_RESULTS_ROOT or ./runs)")
        p.add_argument("--jobs", type=int, default=1, help="parallel runs")
        p.add_argument(
            "--lambda-strict",
            action="store_true",
            help="use the strict crossing-count reading (count > lambda)",
        )
        p.add_argument("--one-based", action="store_true", help="edge files use 1-based node ids")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        overrides = list(args.overrides)
        if args.lambda_strict:
            overrides.append("hierarchy.lambda_strict=true")
        if args.one_based:
            overrides.append("dataset.one_based=true")
        cfg = load_config(args.config, overrides)
        out_root = _results_root(args.out)
        dispatch = {
            "hierarchy": cmd_hierarchy,
            "train": lambda c, o: cmd_train(c, o, args.jobs),
            "sweep-levels": lambda c, o: cmd_sweep_levels(c, o, args.jobs),
            "sweep-hierarchy": lambda c, o: cmd_sweep_hierarchy(c, o, args.jobs),
            "sweep-sparsity": lambda c, o: cmd_sweep_sparsity(c, o, args.jobs),
        }
        return dispatch[args.command](cfg, out_root)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
