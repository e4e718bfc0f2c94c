#!/usr/bin/env python3
"""Measure the direction of minority-class weight updates under local SGD.

From a model warm-trained on balanced two-class data, runs seeded local-SGD
trials on a count-imbalanced client and reports how often the minority
class's last-layer row moves *away* from the minority feature mean
(a negative projection), for plain cross-entropy and for the
count-calibrated loss, against a balanced control.

Usage:
    python scripts/sign_probe_demo.py --ratio 50 --trials 200
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from fedlc.datasets import class_counts
from fedlc.diagnostics import make_probe_client, update_sign_probe
from fedlc.losses import CalibrationSpec, LossSpec, loss_and_grad_batch
from fedlc.models import Arch, backward_batch, forward_batch, zeros


def warm_model(ds, lr=0.2, steps=800):
    p = zeros(Arch.logistic(ds.dim, ds.num_classes))
    spec = LossSpec(kind="standard_ce")
    for _ in range(steps):
        logits, _ = forward_batch(p, ds.features)
        _, dl = loss_and_grad_batch(spec, logits, ds.labels)
        grad = backward_batch(p, ds.features, dl / len(ds))
        p.flat -= lr * grad.flat
    return p


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--ratio", type=int, default=50, help="majority/minority count ratio")
    ap.add_argument("--minority", type=int, default=10, help="minority sample count")
    ap.add_argument("--dim", type=int, default=8)
    ap.add_argument("--tau", type=float, default=1.0)
    ap.add_argument("--lr", type=float, default=0.01)
    ap.add_argument("--steps", type=int, default=4)
    ap.add_argument("--batch-size", type=int, default=16)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    balanced = make_probe_client(args.dim, 2, 400, 400, seed=0,
                                 separation=1.5, overlap=0.6)
    warm = warm_model(balanced)
    skewed = make_probe_client(args.dim, 2, args.ratio * args.minority, args.minority,
                               seed=1, separation=1.5, overlap=0.6)
    counts = class_counts(skewed)
    kw = dict(lr=args.lr, steps=args.steps, batch_size=args.batch_size,
              trials=args.trials, seed=args.seed)

    ce = update_sign_probe(warm, skewed, **kw)
    calib = LossSpec(kind="fedlc",
                     calibration=CalibrationSpec(tau=args.tau, counts=counts))
    lc = update_sign_probe(warm, skewed, loss_spec=calib, **kw)
    bal = update_sign_probe(warm, balanced, **kw)

    print(f"client counts {counts.tolist()} (ratio {args.ratio}), "
          f"{args.trials} trials of {args.steps} steps at lr {args.lr}\n")
    print(f"{'setting':<28}{'minority-row negative':<24}{'majority-row positive'}")
    print("-" * 72)
    print(f"{'plain CE, skewed':<28}{ce.frac_minority_negative:<24.2f}"
          f"{ce.frac_majority_positive:.2f}")
    print(f"{'calibrated, skewed':<28}{lc.frac_minority_negative:<24.2f}"
          f"{lc.frac_majority_positive:.2f}")
    print(f"{'plain CE, balanced':<28}{bal.frac_minority_negative:<24.2f}"
          f"{bal.frac_majority_positive:.2f}")


if __name__ == "__main__":
    main()
