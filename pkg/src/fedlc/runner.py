"""Experiment execution: data preparation, per-seed runs, artifacts on disk.

Every run directory contains the exact config snapshot used, one metrics
JSONL + per-class CSV + final checkpoint per seed, and a summary with the
final-round mean and standard deviation across seeds.  Files are written
atomically (temp + rename) so concurrent sweeps never interleave output.
"""

from __future__ import annotations

import copy
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, serialize_config
from .datasets import Dataset, concat, generate_synthetic, load_csv, load_idx, SyntheticSpec
from .diagnostics import class_aggregates, deviation_report
from .fedcore import ClientState, RoundReport, ServerState, TrainConfig, run_round
from .models import Arch, ModelParams, init_params, save_params
from .partition import partition_dirichlet, partition_quantity

OUTPUT_ROOT_ENV = "FEDLC_OUTPUT_ROOT"


@dataclass
class RunArtifact:
    run_dir: Path
    config_path: Path
    metrics_paths: list[Path]
    per_class_paths: list[Path]
    checkpoint_paths: list[Path]
    summary: dict
    plot_path: Path | None = None


def resolve_output_dir(cfg: ExperimentConfig) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    out = Path(cfg.output_dir)
    if root:
        return Path(root) / out
    return out


def _atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def prepare_clients(cfg: ExperimentConfig, seed: int) -> tuple[dict[int, ClientState], Dataset, Arch]:
    """Materialize per-client training data and the global test set for one seed.

    Synthetic data is regenerated per seed with a per-client holdout pooled
    into the test set; file-backed data is fixed and split across clients by
    the configured scheme with the run seed.
    """
    ds = cfg.dataset
    if ds.kind == "synthetic":
        spec = SyntheticSpec(lam=ds.lam, mu=ds.mu, num_clients=cfg.num_clients,
                             dim=ds.dim, num_classes=ds.num_classes, min_size=ds.min_size,
                             power_law_exponent=ds.power_law_exponent, seed=seed)
        per_client = generate_synthetic(spec)
        clients = {}
        holdouts = []
        for i, full in enumerate(per_client):
            n_test = int(math.floor(cfg.test_fraction * len(full)))
            n_train = len(full) - n_test
            clients[i] = ClientState(i, full.subset(np.arange(n_train)))
            if n_test:
                holdouts.append(full.subset(np.arange(n_train, len(full))))
        test = concat(holdouts, name=f"synthetic({ds.lam:g},{ds.mu:g})/test")
        arch_dim = ds.dim
        num_classes = ds.num_classes
    else:
        if ds.kind == "idx":
            train = load_idx(ds.train_images, ds.train_labels, num_classes=ds.num_classes)
            test = load_idx(ds.test_images, ds.test_labels, num_classes=ds.num_classes)
        else:
            train = load_csv(ds.train_csv, ds.num_classes)
            test = load_csv(ds.test_csv, ds.num_classes)
        if cfg.partition.scheme == "quantity":
            part = partition_quantity(train, cfg.num_clients, cfg.partition.alpha, seed)
        else:
            min_size = cfg.partition.min_size if cfg.partition.min_size > 0 else None
            part = partition_dirichlet(train, cfg.num_clients, cfg.partition.beta,
                                       min_size=min_size, seed=seed)
        clients = {i: ClientState(i, part.client_dataset(train, i))
                   for i in range(cfg.num_clients)}
        arch_dim = train.dim
        num_classes = ds.num_classes

    arch = Arch.logistic(arch_dim, num_classes) if cfg.arch == "logistic" \
        else Arch.mlp(arch_dim, num_classes, cfg.hidden)
    return clients, test, arch


def _deviation_summary(params: ModelParams, test: Dataset) -> dict:
    agg = class_aggregates(params, test)
    counts = agg.counts
    present = np.flatnonzero(agg.present)
    if len(present) < 2:
        return {"mean_bound": None, "max_bound": None, "undefined_pairs": 0, "flagged_pairs": 0}
    cutoff = 0.5 * counts.max()
    majority = [int(c) for c in present if counts[c] >= cutoff]
    minority = [int(c) for c in present if counts[c] < cutoff]
    if not majority or not minority:
        return {"mean_bound": None, "max_bound": None, "undefined_pairs": 0, "flagged_pairs": 0}
    rep = deviation_report(agg, majority, minority)
    finite = rep.d_matrix[np.isfinite(rep.d_matrix)]
    return {
        "mean_bound": float(finite.mean()) if finite.size else None,
        "max_bound": float(finite.max()) if finite.size else None,
        "undefined_pairs": int(np.isnan(rep.d_matrix).sum()),
        "flagged_pairs": len(rep.flags),
    }


def run_single(cfg: ExperimentConfig, seed: int) -> tuple[list[RoundReport], ModelParams]:
    """One full multi-round federated run for one seed."""
    clients, test, arch = prepare_clients(cfg, seed)
    server = ServerState(init_params(arch, seed), strategy=cfg.strategy,
                         server_lr=cfg.server_lr)
    tc = TrainConfig(local_epochs=cfg.local_epochs, batch_size=cfg.batch_size, lr=cfg.lr,
                     loss_kind=cfg.loss.kind, tau=cfg.loss.tau,
                     count_floor=cfg.loss.count_floor, variant=cfg.loss.variant,
                     expel_missing=cfg.loss.expel_missing, alpha_rs=cfg.loss.alpha_rs,
                     prox_mu=cfg.loss.prox_mu, seed=seed)
    all_ids = sorted(clients)
    reports = []
    for _ in range(cfg.rounds):
        rep = run_round(server, clients, all_ids, test, tc)
        if cfg.track_deviation:
            rep.deviation = _deviation_summary(server.global_params, test)
        reports.append(rep)
    return reports, server.global_params


def _dataset_label(cfg: ExperimentConfig) -> str:
    ds = cfg.dataset
    if ds.kind == "synthetic":
        return f"synthetic({ds.lam:g},{ds.mu:g})"
    if ds.kind == "idx":
        return Path(ds.train_images).stem
    return Path(ds.train_csv).stem


def _metrics_text(reports: list[RoundReport]) -> str:
    return "\n".join(json.dumps(r.to_json_obj(), separators=(",", ":")) for r in reports) + "\n"


def _per_class_csv(reports: list[RoundReport]) -> str:
    k = len(reports[0].per_class_acc)
    lines = ["round," + ",".join(f"class_{c}" for c in range(k))]
    for r in reports:
        cells = ["" if math.isnan(a) else f"{a:.6f}" for a in r.per_class_acc]
        lines.append(f"{r.round}," + ",".join(cells))
    return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig, config_text: str | None = None) -> RunArtifact:
    """Execute every seed, persist artifacts, and summarize final accuracy."""
    run_dir = resolve_output_dir(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    config_path = run_dir / "config.toml"
    _atomic_write_text(config_path, config_text if config_text is not None else serialize_config(cfg))

    metrics_paths, per_class_paths, checkpoint_paths = [], [], []
    finals: dict[int, float] = {}
    for seed in cfg.seeds:
        reports, params = run_single(cfg, seed)
        mp = run_dir / f"metrics_seed{seed}.jsonl"
        _atomic_write_text(mp, _metrics_text(reports))
        pp = run_dir / f"per_class_seed{seed}.csv"
        _atomic_write_text(pp, _per_class_csv(reports))
        ckpt = run_dir / f"model_seed{seed}.bin"
        save_params(params, ckpt)
        metrics_paths.append(mp)
        per_class_paths.append(pp)
        checkpoint_paths.append(ckpt)
        finals[seed] = reports[-1].test_acc

    accs = np.array([finals[s] for s in cfg.seeds])
    summary = {
        "name": cfg.name,
        "dataset": _dataset_label(cfg),
        "strategy": cfg.strategy,
        "loss_kind": cfg.loss.kind,
        "rounds": cfg.rounds,
        "seeds": list(cfg.seeds),
        "final_test_acc_per_seed": {str(s): finals[s] for s in cfg.seeds},
        "final_test_acc_mean": float(accs.mean()),
        "final_test_acc_std": float(accs.std()),
    }
    _atomic_write_text(run_dir / "summary.json", json.dumps(summary, indent=1, sort_keys=True))
    return RunArtifact(run_dir, config_path, metrics_paths, per_class_paths,
                       checkpoint_paths, summary)


def summarize_metrics(metrics_paths) -> dict:
    """Recompute the final-round summary directly from JSONL files."""
    finals = []
    for path in metrics_paths:
        last = None
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    last = json.loads(line)
        if last is None:
            raise ValueError(f"{path} holds no round records")
        finals.append(last["test_acc"])
    arr = np.array(finals)
    return {"final_test_acc_mean": float(arr.mean()), "final_test_acc_std": float(arr.std())}


# ---------------------------------------------------------------------------
# sweeps


def _set_by_path(cfg: ExperimentConfig, path: str, value) -> None:
    parts = path.split(".")
    obj = cfg
    for p in parts[:-1]:
        if not hasattr(obj, p):
            raise ConfigError(path, "unknown sweep axis")
        obj = getattr(obj, p)
    leaf = parts[-1]
    if leaf == "lambda":
        leaf = "lam"
    if not hasattr(obj, leaf):
        raise ConfigError(path, "unknown sweep axis")
    current = getattr(obj, leaf)
    setattr(obj, leaf, type(current)(value) if current is not None else value)


def run_sweep(base: ExperimentConfig, axis: str, values: list,
              strategies: list[str] | None = None) -> tuple[Path, dict]:
    """Run the axis x strategy grid under the base config's output dir.

    Cells whose summary already exists are skipped, so a completed sweep is
    idempotent.  Returns the table CSV path and {(value, strategy): mean acc}.
    """
    strategies = strategies or [base.strategy]
    sweep_dir = resolve_output_dir(base)
    sweep_dir.mkdir(parents=True, exist_ok=True)
    results: dict[tuple, float] = {}
    for value in values:
        for strat in strategies:
            cell = f"{axis.replace('.', '_')}={value}__{strat}"
            cell_dir = sweep_dir / cell
            summary_path = cell_dir / "summary.json"
            if summary_path.exists():
                summary = json.loads(summary_path.read_text(encoding="utf-8"))
            else:
                cfg = copy.deepcopy(base)
                cfg.name = f"{base.name}/{cell}"
                cfg.output_dir = str(cell_dir)
                # sweeps address any config leaf by dotted path
                _set_by_path(cfg, axis, value)
                cfg.strategy = strat
                if os.environ.get(OUTPUT_ROOT_ENV):
                    cfg.output_dir = str(Path(base.output_dir) / cell)
                summary = run_experiment(cfg).summary
            results[(value, strat)] = summary["final_test_acc_mean"]

    lines = [f"{axis}," + ",".join(strategies)]
    for value in values:
        row = [str(value)] + [f"{results[(value, s)]:.6f}" for s in strategies]
        lines.append(",".join(row))
    table_path = sweep_dir / "sweep_table.csv"
    _atomic_write_text(table_path, "\n".join(lines) + "\n")
    return table_path, results
