"""Command-line entry point: run, partition, diagnose, sweep, plot.

Exit codes: 0 success, 1 runtime failure, 2 configuration/usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .datasets import ConfigurationError, Dataset, IngestionError, load_csv, load_idx
from .diagnostics import (class_aggregates, deviation_report, make_probe_client,
                          margin_report, per_class_accuracy, update_sign_probe)
from .losses import CalibrationSpec
from .models import load_params
from .partition import (InfeasiblePartitionError, partition_dirichlet,
                        partition_quantity, skew_report)
from .runner import run_experiment, run_sweep
from .svgplot import emit_plot

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _load_dataset_args(args) -> Dataset:
    if args.csv:
        return load_csv(args.csv, args.num_classes)
    if args.idx_images:
        if not args.idx_labels:
            raise ConfigError("idx-labels", "required together with --idx-images")
        return load_idx(args.idx_images, args.idx_labels,
                        num_classes=args.num_classes if args.num_classes > 0 else None)
    raise ConfigError("dataset", "provide --csv or --idx-images/--idx-labels")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    text = Path(args.config).read_text(encoding="utf-8")
    artifact = run_experiment(cfg, config_text=text)
    s = artifact.summary
    print(f"{s['name']}: strategy={s['strategy']} loss={s['loss_kind']} rounds={s['rounds']} "
          f"final_acc={s['final_test_acc_mean']:.4f} +/- {s['final_test_acc_std']:.4f} "
          f"({len(s['seeds'])} seeds) -> {artifact.run_dir}")
    return EXIT_OK


def cmd_partition(args) -> int:
    dataset = _load_dataset_args(args)
    if args.scheme == "quantity":
        part = partition_quantity(dataset, args.clients, args.alpha, args.seed)
    elif args.scheme == "dirichlet":
        part = partition_dirichlet(dataset, args.clients, args.beta,
                                   min_size=args.min_size if args.min_size > 0 else None,
                                   seed=args.seed)
    else:
        raise ConfigError("scheme", f"unknown scheme {args.scheme!r}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    part.save_manifest(out)
    skew_csv = out.with_suffix(".skew.csv")
    skew_report(part, dataset).save_csv(skew_csv)
    print(f"wrote {out} and {skew_csv} "
          f"({part.scheme}, {part.num_clients} clients, {len(dataset)} samples)")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    params = load_params(args.checkpoint)
    dataset = _load_dataset_args(args)
    if dataset.dim != params.arch.dim or dataset.num_classes != params.arch.num_classes:
        raise ConfigError("checkpoint", f"arch {params.arch} does not match dataset "
                          f"(dim {dataset.dim}, {dataset.num_classes} classes)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    pca = per_class_accuracy(params, dataset)
    lines = ["class,count,accuracy"]
    for c in range(dataset.num_classes):
        a = pca.per_class[c]
        lines.append(f"{c},{pca.counts[c]},{'' if np.isnan(a) else f'{a:.6f}'}")
    (out / "per_class_accuracy.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    counts = pca.counts
    present = np.flatnonzero(counts > 0)
    cutoff = args.threshold_ratio * counts.max() if counts.max() > 0 else 0
    majority = [int(c) for c in present if counts[c] >= cutoff]
    minority = [int(c) for c in present if counts[c] < cutoff]
    calib = CalibrationSpec(tau=args.tau, counts=counts, count_floor=args.count_floor)
    if majority and minority:
        agg = class_aggregates(params, dataset)
        deviation_report(agg, majority, minority).save_csv(out / "deviation_bounds.csv")
        agg_cal = class_aggregates(params, dataset, calibration=calib)
        deviation_report(agg_cal, majority, minority,
                         calibration=calib).save_csv(out / "deviation_bounds_calibrated.csv")
    else:
        for name in ("deviation_bounds.csv", "deviation_bounds_calibrated.csv"):
            (out / name).write_text(
                "majority,minority,count_majority,count_minority,ratio,bound,undefined,exceeds_factor\n",
                encoding="utf-8")

    margin_report(params, dataset).save_csv(out / "margins.csv", out / "margin_bounds.csv")

    if args.probe:
        probe_data = make_probe_client(params.arch.dim, params.arch.num_classes,
                                       n_majority=50 * args.probe_minority,
                                       n_minority=args.probe_minority, seed=args.seed)
        res = update_sign_probe(params, probe_data, lr=args.lr, steps=args.probe_steps,
                                  batch_size=args.batch_size, trials=args.probe_trials,
                                  seed=args.seed)
        probe = {
            "majority": res.majority,
            "minority": res.minority,
            "frac_minority_negative": res.frac_minority_negative,
            "frac_majority_positive": res.frac_majority_positive,
            "trials": len(res.minority_dots),
        }
        (out / "probe.json").write_text(json.dumps(probe, indent=1), encoding="utf-8")
        print(f"probe: minority-negative fraction {res.frac_minority_negative:.2f}, "
              f"majority-positive fraction {res.frac_majority_positive:.2f}")
    print(f"diagnostics written to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = load_config(args.config)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("values", "need at least one axis value")
    strategies = [s.strip() for s in args.strategies.split(",")] if args.strategies else None
    table, results = run_sweep(base, args.axis, values, strategies)
    print(f"sweep table -> {table} ({len(results)} cells)")
    return EXIT_OK


def cmd_plot(args) -> int:
    if not args.metrics:
        raise ConfigError("metrics", "need at least one metrics JSONL path")
    out = emit_plot(args.metrics, args.out, labels=args.labels.split(",") if args.labels else None)
    print(f"plot -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedlc",
                                     description="Deterministic federated-learning simulator "
                                                 "with calibrated local losses")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a configured experiment over its seeds")
    p.add_argument("config", help="TOML experiment config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("partition", help="split a dataset across clients and report skew")
    p.add_argument("--csv", default="", help="CSV dataset (label,f1,...,fd)")
    p.add_argument("--idx-images", default="", help="IDX images file")
    p.add_argument("--idx-labels", default="", help="IDX labels file")
    p.add_argument("--num-classes", type=int, default=0)
    p.add_argument("--scheme", choices=["quantity", "dirichlet"], required=True)
    p.add_argument("--clients", type=int, required=True)
    p.add_argument("--alpha", type=int, default=2, help="shards per client (quantity)")
    p.add_argument("--beta", type=float, default=0.5, help="Dirichlet concentration")
    p.add_argument("--min-size", type=int, default=0, help="0 selects the default rule")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="manifest JSON path")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("diagnose", help="per-class accuracy, deviation bounds, margins")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--csv", default="")
    p.add_argument("--idx-images", default="")
    p.add_argument("--idx-labels", default="")
    p.add_argument("--num-classes", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--count-floor", type=float, default=1.0)
    p.add_argument("--threshold-ratio", type=float, default=0.5)
    p.add_argument("--probe", action="store_true", help="run the update-sign probe")
    p.add_argument("--probe-minority", type=int, default=10)
    p.add_argument("--probe-steps", type=int, default=5)
    p.add_argument("--probe-trials", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sweep", help="run an axis sweep off a base config")
    p.add_argument("config")
    p.add_argument("--axis", required=True, help="dotted config path, e.g. local_epochs or loss.tau")
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--strategies", default="", help="optional comma-separated strategy columns")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="emit an SVG accuracy-vs-round plot")
    p.add_argument("metrics", nargs="*", help="metrics JSONL paths")
    p.add_argument("--out", required=True)
    p.add_argument("--labels", default="", help="comma-separated legend labels")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ConfigurationError, InfeasiblePartitionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestionError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
