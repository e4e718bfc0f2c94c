#!/usr/bin/env python3
"""Per-class accuracy before and after one skewed local epoch.

Starting from one warm global model, every client fine-tunes for a single
epoch on its own Dirichlet-skewed shard; the script reports the mean
per-class (balanced) accuracy of the local models under plain cross-entropy
versus the count-calibrated loss, plus the accuracy after re-averaging the
local models.  Demonstrates how skewed local updates crater minority and
missing classes and how much of that the calibration prevents.

Usage:
    python scripts/recovery_experiment.py --beta 0.1 --clients 10 --lr 1.2
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from fedlc.datasets import Dataset
from fedlc.diagnostics import per_class_accuracy
from fedlc.fedcore import ClientState, LocalUpdateResult, TrainConfig, aggregate_fedavg, \
    build_loss_spec, local_update
from fedlc.losses import LossSpec, loss_and_grad_batch
from fedlc.models import Arch, backward_batch, forward_batch, init_params
from fedlc.partition import partition_dirichlet
from fedlc.rng import stream


def blob_images(n_per_class, num_classes, side, seed, noise=150, intensity=190):
    g = np.random.default_rng(seed)
    cells = (side - 2) ** 2
    templates = np.zeros((num_classes, side, side))
    for c in range(num_classes):
        r, q = divmod((c * 7) % cells, side - 2)
        templates[c, r:r + 3, q:q + 3] = intensity
    xs, ys = [], []
    for c in range(num_classes):
        imgs = templates[c] + g.integers(-noise, noise, size=(n_per_class, side, side))
        xs.append(np.clip(imgs, 0, 255).reshape(n_per_class, -1) / 255.0)
        ys.extend([c] * n_per_class)
    return Dataset(np.concatenate(xs), np.asarray(ys), num_classes)


def train_warm(ds, hidden, lr, steps, seed):
    p = init_params(Arch.mlp(ds.dim, ds.num_classes, hidden=hidden), seed)
    spec = LossSpec(kind="standard_ce")
    g = stream(seed, 90)
    for _ in range(steps):
        idx = g.choice(len(ds), size=min(64, len(ds)), replace=False)
        logits, _ = forward_batch(p, ds.features[idx])
        _, dl = loss_and_grad_batch(spec, logits, ds.labels[idx])
        grad = backward_batch(p, ds.features[idx], dl / len(idx))
        p.flat -= lr * grad.flat
    return p


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--beta", type=float, default=0.1)
    ap.add_argument("--clients", type=int, default=10)
    ap.add_argument("--classes", type=int, default=10)
    ap.add_argument("--lr", type=float, default=1.2)
    ap.add_argument("--batch-size", type=int, default=8)
    ap.add_argument("--tau", type=float, default=2.0)
    ap.add_argument("--seeds", default="0,1,2,3,4")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]

    train = blob_images(60, args.classes, side=8, seed=0)
    test = blob_images(20, args.classes, side=8, seed=100)
    warm = train_warm(train, hidden=32, lr=0.3, steps=400, seed=1)
    warm_pc = per_class_accuracy(warm, test)
    print(f"warm global model: per-class mean {100 * warm_pc.mean:.2f}\n")
    print(f"{'seed':<6}{'loss':<14}{'local mean per-class':<24}{'after re-averaging'}")
    print("-" * 68)

    for seed in seeds:
        part = partition_dirichlet(train, m=args.clients, beta=args.beta,
                                   min_size=5, seed=seed)
        for kind in ("standard_ce", "fedlc"):
            cfg = TrainConfig(local_epochs=1, batch_size=args.batch_size, lr=args.lr,
                              loss_kind=kind, tau=args.tau, seed=seed)
            locals_, sizes = [], []
            for cid in range(args.clients):
                client = ClientState(cid, part.client_dataset(train, cid))
                spec = build_loss_spec(cfg, client.counts, warm)
                res = local_update(client, warm, spec, 1, args.batch_size, args.lr,
                                   seed=seed, round_idx=0)
                locals_.append(res)
                sizes.append(len(client.data))
            local_means = [per_class_accuracy(r.new_params, test).mean for r in locals_]
            weights = np.asarray(sizes, float) / sum(sizes)
            merged = aggregate_fedavg(locals_, weights)
            merged_pc = per_class_accuracy(merged, test)
            print(f"{seed:<6}{kind:<14}{100 * np.mean(local_means):<24.2f}"
                  f"{100 * merged_pc.mean:.2f}")


if __name__ == "__main__":
    main()
