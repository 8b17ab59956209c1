"""Command-line interface.

Subcommands: generate-data, run, compare, export-metrics. Exit codes:
0 success, 1 configuration error, 2 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .config import (
    ConfigError,
    compare_spec,
    config_with_strategy,
    load_raw,
    load_run_config,
    parse_config,
)
from .data import generate, save_dataset, save_dataset_csv
from .nn import DivergenceError
from .orchestrator import compare_strategies, run, save_comparison_csv


def _cmd_generate_data(args) -> int:
    cfg = load_run_config(args.config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    datasets, planted = generate(cfg.gen)
    for ds in datasets:
        if args.format in ("binary", "both"):
            save_dataset(ds, out / f"vehicle_{ds.vehicle_id:03d}.bin")
        if args.format in ("csv", "both"):
            save_dataset_csv(ds, out / f"vehicle_{ds.vehicle_id:03d}.csv")
    manifest = {
        "n_vehicles": cfg.gen.n_vehicles,
        "n_sectors": cfg.gen.n_sectors,
        "seed": cfg.gen.seed,
        "planted_clusters": planted.tolist(),
        "categories": [ds.category for ds in datasets],
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
    print(f"wrote {len(datasets)} vehicle datasets to {out}")
    return 0


def _cmd_run(args) -> int:
    raw = load_raw(args.config)
    cfg = parse_config(raw)
    if args.strategy:
        cfg = config_with_strategy(cfg, raw, args.strategy)
    result = run(cfg, out_dir=args.out_dir)
    final = result.metrics[-1]
    print(
        f"strategy={cfg.strategy.kind} rounds={cfg.rounds} "
        f"final_accuracy={final.global_test_accuracy:.4f} "
        f"params_transmitted={result.total_params_transmitted()} "
        f"success_rate={final.transfer_success_rate:.3f}"
    )
    if args.out_dir:
        print(f"artifacts in {args.out_dir}")
    return 0


def _cmd_compare(args) -> int:
    raw = load_raw(args.config)
    cfg = parse_config(raw)
    names, include_centralized = compare_spec(raw)
    if args.strategies:
        names = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if args.no_centralized:
        include_centralized = False
    strategies = [config_with_strategy(cfg, raw, n).strategy for n in names]
    rows = compare_strategies(cfg, strategies, include_centralized=include_centralized)
    header = f"{'strategy':>14s} {'final_acc':>10s} {'conv_round':>10s} {'params_tx':>14s} {'succ_rate':>10s}"
    print(header)
    for r in rows:
        rate = "-" if r["mean_success_rate"] is None else f"{r['mean_success_rate']:.3f}"
        print(
            f"{r['strategy']:>14s} {r['final_accuracy']:>10.4f} "
            f"{r['convergence_round']:>10d} {r['total_params_transmitted']:>14d} {rate:>10s}"
        )
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_comparison_csv(rows, out / "comparison.csv")
        print(f"wrote {out / 'comparison.csv'}")
    return 0


def _cmd_export_metrics(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"run directory not found: {run_dir}")
    doc = {}
    summary = run_dir / "summary.json"
    if summary.exists():
        doc["summary"] = json.loads(summary.read_text())
    for name in ("metrics", "outcomes"):
        path = run_dir / f"{name}.csv"
        if path.exists():
            with open(path, newline="") as f:
                doc[name] = list(csv.DictReader(f))
    importance = run_dir / "importance.json"
    if importance.exists():
        doc["importance"] = json.loads(importance.read_text())
    if not doc:
        raise ConfigError(f"no run artifacts found in {run_dir}")
    out_path = Path(args.output) if args.output else run_dir / "export.json"
    with open(out_path, "w") as f:
        json.dump(doc, f, indent=2)
    print(f"wrote {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sigla",
        description="Clustered layer-wise federated learning simulator "
        "for mmWave beam-sector selection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write per-vehicle dataset files")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--format", choices=("binary", "csv", "both"), default="binary")
    p.set_defaults(func=_cmd_generate_data)

    p = sub.add_parser("run", help="run one strategy, emit metrics CSV + summary")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--strategy", default=None, help="override [strategy] kind")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("compare", help="run several strategies on identical data")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--strategies", default=None, help="comma-separated names")
    p.add_argument("--no-centralized", action="store_true")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("export-metrics", help="bundle run artifacts into one JSON")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(func=_cmd_export_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"runtime divergence: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
