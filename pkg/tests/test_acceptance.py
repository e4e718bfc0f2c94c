"""Acceptance suite: one test per criterion, one printed PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s``.  The desk-scale accuracy-gap
criteria (1, 2, and the "+8 over plain averaging" clause of 11) are known to
fail on this simulator: with a convex local model at these budgets the
calibrated loss measurably does not overtake plain cross-entropy (see
README, "Known-red acceptance criteria").  They are asserted as stated
anyway; the remaining criteria pass.
"""

import copy
import json
import math

import numpy as np
import pytest

from fedlc.config import DatasetConfig, ExperimentConfig, LossConfig, PartitionConfig
from fedlc.datasets import Dataset, class_counts, load_idx
from fedlc.diagnostics import (class_aggregates, deviation_bound_calibrated,
                               make_probe_client, per_class_accuracy, update_sign_probe)
from fedlc.fedcore import (ClientState, LocalUpdateResult, TrainConfig, aggregate_fedavg,
                           aggregate_fednova, build_loss_spec, local_update)
from fedlc.losses import CalibrationSpec, LossSpec, loss_and_grad, loss_and_grad_batch
from fedlc.models import (Arch, ModelParams, backward, backward_batch, forward,
                          forward_batch, init_params)
from fedlc.partition import partition_dirichlet, partition_quantity
from fedlc.runner import run_experiment, run_single

from conftest import toy_image_data, write_idx_images, write_idx_labels
from test_models import finite_diff_grad, random_params
from test_partition import balanced_dataset


def report(num, ok, detail):
    line = f"criterion {num:02d} [{'PASS' if ok else 'FAIL'}] {detail}"
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# shared synthetic battery at the pinned protocol:
# logistic, m=100, T=300, E=1, B=128, lr=0.01, 5 seeds


def _run_synthetic(lam, mu, loss_kind, seed, tau=1.0, prox_mu=0.0, strategy="fedavg"):
    cfg = ExperimentConfig(name="acceptance", num_clients=100, rounds=300, seeds=[seed],
                           local_epochs=1, batch_size=128, lr=0.01, strategy=strategy)
    cfg.dataset = DatasetConfig(kind="synthetic", lam=lam, mu=mu)
    cfg.loss = LossConfig(kind=loss_kind, tau=tau, prox_mu=prox_mu)
    reports, _ = run_single(cfg, seed)
    return reports[-1].test_acc


SEEDS = range(5)


@pytest.fixture(scope="module")
def syn11_battery():
    variants = {
        "fedavg": dict(loss_kind="standard_ce"),
        "fedlc": dict(loss_kind="fedlc"),
        "fedrs": dict(loss_kind="fedrs"),
        "fedlc_prox": dict(loss_kind="fedlc", prox_mu=0.01),
        "fedlc_scaffold": dict(loss_kind="fedlc", strategy="scaffold"),
    }
    return {name: float(np.mean([_run_synthetic(1.0, 1.0, seed=s, **kw) for s in SEEDS]))
            for name, kw in variants.items()}


@pytest.fixture(scope="module")
def syn00_battery():
    return {name: float(np.mean([_run_synthetic(0.0, 0.0, seed=s, loss_kind=kind)
                                 for s in SEEDS]))
            for name, kind in [("fedavg", "standard_ce"), ("fedlc", "fedlc")]}


def test_criterion_01_synthetic_1_1_gap(syn11_battery):
    gap = 100 * (syn11_battery["fedlc"] - syn11_battery["fedavg"])
    report(1, gap >= 8.0,
           f"Synthetic(1,1) calibrated-vs-plain gap {gap:+.2f} pts "
           f"(fedlc {100 * syn11_battery['fedlc']:.2f}, fedavg "
           f"{100 * syn11_battery['fedavg']:.2f}; required >= +8)")


def test_criterion_02_synthetic_0_0_gap(syn00_battery):
    gap = 100 * (syn00_battery["fedlc"] - syn00_battery["fedavg"])
    report(2, gap >= 5.0,
           f"Synthetic(0,0) calibrated-vs-plain gap {gap:+.2f} pts "
           f"(fedlc {100 * syn00_battery['fedlc']:.2f}, fedavg "
           f"{100 * syn00_battery['fedavg']:.2f}; required >= +5)")


# ---------------------------------------------------------------------------
# criterion 3: ordering fedlc >= fedrs >= fedavg, 1-point slack


@pytest.fixture(scope="module")
def idx_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("idx")
    tr_img, tr_lab = toy_image_data(200, num_classes=10, side=8, seed=0,
                                    noise=180, intensity=130)
    te_img, te_lab = toy_image_data(50, num_classes=10, side=8, seed=100,
                                    noise=180, intensity=130)
    write_idx_images(root / "train-img", tr_img)
    write_idx_labels(root / "train-lab", tr_lab)
    write_idx_images(root / "test-img", te_img)
    write_idx_labels(root / "test-lab", te_lab)
    return root


def _run_idx(root, loss_kind, seed):
    cfg = ExperimentConfig(name="idx-ordering", num_clients=10, rounds=100,
                           local_epochs=1, batch_size=8, lr=1.0, arch="mlp",
                           hidden=64, seeds=[seed])
    cfg.dataset = DatasetConfig(kind="idx", num_classes=10,
                                train_images=str(root / "train-img"),
                                train_labels=str(root / "train-lab"),
                                test_images=str(root / "test-img"),
                                test_labels=str(root / "test-lab"))
    cfg.partition = PartitionConfig(scheme="dirichlet", beta=0.1, min_size=16)
    cfg.loss = LossConfig(kind=loss_kind, tau=1.0)
    reports, _ = run_single(cfg, seed)
    return reports[-1].test_acc


def test_criterion_03_ordering(syn11_battery, idx_corpus):
    slack = 1.0
    parts = []
    ok = True
    # synthetic leg at the pinned protocol
    a = {k: 100 * syn11_battery[k] for k in ("fedavg", "fedrs", "fedlc")}
    syn_ok = (a["fedlc"] >= a["fedrs"] - slack) and (a["fedrs"] >= a["fedavg"] - slack)
    parts.append(f"Synthetic(1,1): fedlc {a['fedlc']:.2f} / fedrs {a['fedrs']:.2f} / "
                 f"fedavg {a['fedavg']:.2f} -> {'ok' if syn_ok else 'violated'}")
    ok &= syn_ok
    # image leg: D(beta=0.1), m=10, T=100, MLP
    img = {k: 100 * float(np.mean([_run_idx(idx_corpus, kind, s) for s in SEEDS]))
           for k, kind in (("fedavg", "standard_ce"), ("fedrs", "fedrs"), ("fedlc", "fedlc"))}
    img_ok = (img["fedlc"] >= img["fedrs"] - slack) and (img["fedrs"] >= img["fedavg"] - slack)
    parts.append(f"IDX D(0.1): fedlc {img['fedlc']:.2f} / fedrs {img['fedrs']:.2f} / "
                 f"fedavg {img['fedavg']:.2f} -> {'ok' if img_ok else 'violated'}")
    ok &= img_ok
    report(3, ok, "; ".join(parts))


# ---------------------------------------------------------------------------
# criterion 4: tau=0 trajectory oracle equivalence


def test_criterion_04_tau_zero_bit_identical():
    def trajectories(loss_kind, tau):
        cfg = ExperimentConfig(name="tau0", num_clients=5, rounds=5, seeds=[0],
                               local_epochs=2, batch_size=32, lr=0.05)
        cfg.dataset = DatasetConfig(kind="synthetic", lam=1.0, mu=1.0, min_size=24)
        cfg.loss = LossConfig(kind=loss_kind, tau=tau)
        out = []
        for seed in (0, 1):
            reports, params = run_single(cfg, seed)
            out.append((tuple(r.test_acc for r in reports),
                        tuple(r.mean_train_loss for r in reports),
                        tuple(tuple(r.per_class_acc) for r in reports),
                        params.flat.tobytes()))
        return out

    ce = trajectories("standard_ce", 0.0)
    lc = trajectories("fedlc", 0.0)
    same = all(
        a[0] == b[0] and a[1] == b[1] and a[3] == b[3]
        and all(np.array_equal(np.array(x), np.array(y), equal_nan=True)
                for x, y in zip(a[2], b[2]))
        for a, b in zip(ce, lc))
    report(4, same, "fedlc(inclusive, tau=0) trajectories bit-identical to plain CE "
                    "across 2 seeds x 5 rounds (metrics and final weights)")


# ---------------------------------------------------------------------------
# criterion 5: gradient suite


def test_criterion_05_gradient_suite():
    rng = np.random.default_rng(2024)
    archs = [Arch.logistic(3, 4), Arch.mlp(3, 4, hidden=3)]
    counts = np.array([40, 7, 0, 2])

    def specs():
        return {
            "standard_ce": LossSpec(kind="standard_ce"),
            "fedlc_inclusive": LossSpec(kind="fedlc",
                                        calibration=CalibrationSpec(tau=1.0, counts=counts)),
            "fedlc_exclusive": LossSpec(
                kind="fedlc",
                calibration=CalibrationSpec(tau=1.0, counts=counts, variant="exclusive")),
            "fedrs": LossSpec(kind="fedrs", alpha_rs=0.5, observed=counts > 0),
        }

    worst = 0.0
    checked = 0
    for arch in archs:
        for name, spec in specs().items():
            for trial in range(100):
                params = random_params(arch, 7000 + trial, scale=0.6)
                x = rng.normal(size=arch.dim)
                y = int(rng.integers(0, arch.num_classes))

                def loss_of(p):
                    return loss_and_grad(spec, forward(p, x), y, p)[0]

                _, dl, _ = loss_and_grad(spec, forward(params, x), y, params)
                analytic = backward(params, x, dl).flat
                numeric = finite_diff_grad(loss_of, params, step=1e-4)
                rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-6)
                worst = max(worst, float(rel.max()))
                checked += 1
    report(5, worst <= 1e-5,
           f"{checked} random instances (4 loss kinds x 2 archs x 100): "
           f"max relative gradient error {worst:.2e} (required <= 1e-5)")


# ---------------------------------------------------------------------------
# criterion 6: partition invariants, 1000 randomized trials per scheme


def test_criterion_06_partition_invariants():
    rng = np.random.default_rng(99)
    violations = []

    for trial in range(1000):
        per_class = int(rng.integers(2, 9))
        k = int(rng.integers(2, 7))
        n = per_class * k
        m = min(int(rng.integers(2, 7)), n)
        alpha = max(1, min(int(rng.integers(1, 5)), n // m))
        ds = balanced_dataset(per_class=per_class, num_classes=k, seed=trial)
        part = partition_quantity(ds, m=m, alpha=alpha, seed=trial)
        allidx = np.sort(np.concatenate(part.assignments))
        if not np.array_equal(allidx, np.arange(n)):
            violations.append(("Q", trial, "cover"))
        # independent shard reconstruction: every contiguous block in stable
        # label-sorted order must land wholly in one client, alpha per client
        order = np.lexsort((np.arange(n), ds.labels))
        shards = m * alpha
        base, extra = divmod(n, shards)
        sizes = np.full(shards, base)
        sizes[:extra] += 1
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        owners = []
        sets = [set(a.tolist()) for a in part.assignments]
        for s in range(shards):
            block = set(order[bounds[s]:bounds[s + 1]].tolist())
            holder = [c for c in range(m) if block <= sets[c]]
            if len(holder) != 1:
                violations.append(("Q", trial, "split shard"))
            else:
                owners.append(holder[0])
        if any(owners.count(c) != alpha for c in range(m)):
            violations.append(("Q", trial, "shards per client"))

    for trial in range(1000):
        m = int(rng.integers(2, 6))
        beta = float(rng.uniform(0.05, 5.0))
        per_class = int(rng.integers(5, 15))
        k = int(rng.integers(2, 6))
        ds = balanced_dataset(per_class=per_class, num_classes=k, seed=5000 + trial)
        part = partition_dirichlet(ds, m=m, beta=beta, min_size=1, seed=trial)
        allidx = np.sort(np.concatenate(part.assignments))
        if not np.array_equal(allidx, np.arange(len(ds))):
            violations.append(("D", trial, "cover"))
        totals = np.zeros(k, dtype=int)
        for a in part.assignments:
            if len(a) < 1:
                violations.append(("D", trial, "empty client"))
            totals += np.bincount(ds.labels[a], minlength=k)
        if not np.array_equal(totals, class_counts(ds)):
            violations.append(("D", trial, "class conservation"))

    report(6, not violations,
           f"2000 randomized partition trials, violations: {violations[:5] or 'none'}")


# ---------------------------------------------------------------------------
# criterion 7: update-direction probe


def _warm_model(ds, lr=0.2, steps=800):
    p = init_params(Arch.logistic(ds.dim, ds.num_classes), seed=7)
    p.flat[:] = 0.0
    spec = LossSpec(kind="standard_ce")
    for _ in range(steps):
        logits, _ = forward_batch(p, ds.features)
        _, dl = loss_and_grad_batch(spec, logits, ds.labels)
        grad = backward_batch(p, ds.features, dl / len(ds))
        p.flat -= lr * grad.flat
    return p


def test_criterion_07_update_sign_probe():
    dim, k = 8, 2
    balanced = make_probe_client(dim, k, 400, 400, seed=0, separation=1.5, overlap=0.6)
    warm = _warm_model(balanced)
    skewed = make_probe_client(dim, k, 500, 10, seed=1, separation=1.5, overlap=0.6)
    counts = class_counts(skewed)
    probe_kw = dict(lr=0.01, steps=4, batch_size=16, trials=100, seed=42)

    ce = update_sign_probe(warm, skewed, **probe_kw)
    calib = LossSpec(kind="fedlc", calibration=CalibrationSpec(tau=1.0, counts=counts))
    lc = update_sign_probe(warm, skewed, loss_spec=calib, **probe_kw)
    bal = update_sign_probe(warm, balanced, **probe_kw)

    ok = (ce.frac_minority_negative >= 0.9
          and lc.frac_minority_negative < ce.frac_minority_negative
          and abs(bal.frac_minority_negative - 0.5) <= 0.1)
    report(7, ok,
           f"ratio-50 client: plain-CE negative fraction {ce.frac_minority_negative:.2f} "
           f"(>= 0.9), calibrated {lc.frac_minority_negative:.2f} (strictly lower), "
           f"balanced control {bal.frac_minority_negative:.2f} (0.5 +/- 0.1)")


# ---------------------------------------------------------------------------
# criterion 8: calibrated bound strictly increasing in tau


def test_criterion_08_calibrated_bound_monotone_in_tau():
    from test_diagnostics import manual_aggregates

    rng = np.random.default_rng(12)
    failures = 0
    for _ in range(100):
        k = int(rng.integers(3, 7))
        counts = rng.integers(20, 300, size=k)
        r = int(rng.integers(0, k))
        counts[r] = int(rng.integers(1, 12))
        probs = rng.dirichlet(np.ones(k), size=k)
        feats = rng.normal(size=(k, 4)) + 2.0
        agg = manual_aggregates(probs, feats, counts)
        j = int(np.argmax(counts))
        vals = [deviation_bound_calibrated(agg, CalibrationSpec(tau=t, counts=counts), j, r)
                for t in (0.0, 0.5, 1.0, 2.0)]
        if not (vals[0] == 0.0 and vals[0] < vals[1] < vals[2] < vals[3]):
            failures += 1
    report(8, failures == 0,
           f"100 random aggregates with a strict minority: calibrated bound zero at tau=0 "
           f"and strictly increasing over tau in {{0, 0.5, 1, 2}}; {failures} violations")


# ---------------------------------------------------------------------------
# criterion 9: step-normalized averaging reduces to plain averaging


def test_criterion_09_fednova_equals_fedavg_exact():
    rng = np.random.default_rng(31)
    mismatches = 0
    for trial in range(20):
        arch = Arch.logistic(int(rng.integers(2, 5)), int(rng.integers(2, 5)))
        m = int(rng.integers(2, 6))
        steps = int(rng.integers(1, 30))
        global_p = random_params(arch, 300 + trial)
        results = []
        for i in range(m):
            new = random_params(arch, 1000 * trial + i)
            delta = ModelParams(global_p.flat - new.flat, arch)
            results.append(LocalUpdateResult(i, new, steps, delta, None, 0.1))
        w = rng.dirichlet(np.ones(m))
        w[-1] = 1.0 - w[:-1].sum()  # float sum exactly 1
        nova = aggregate_fednova(global_p, results, w)
        avg = aggregate_fedavg(results, w)
        if not np.array_equal(nova.flat, avg.flat):
            mismatches += 1
    report(9, mismatches == 0,
           f"20 random equal-step round fixtures: {mismatches} elementwise mismatches")


# ---------------------------------------------------------------------------
# criterion 10: per-class recovery after one skewed local epoch


def _image_dataset(n_per_class, seed, noise=150, intensity=190):
    imgs, labs = toy_image_data(n_per_class, num_classes=10, side=8, seed=seed,
                                noise=noise, intensity=intensity)
    return Dataset(imgs.reshape(len(labs), -1) / 255.0, labs.astype(int), 10)


def _train_mlp(ds, lr, steps, seed):
    p = init_params(Arch.mlp(ds.dim, ds.num_classes, hidden=32), seed)
    spec = LossSpec(kind="standard_ce")
    g = np.random.default_rng(seed)
    for _ in range(steps):
        idx = g.choice(len(ds), size=min(64, len(ds)), replace=False)
        logits, _ = forward_batch(p, ds.features[idx])
        _, dl = loss_and_grad_batch(spec, logits, ds.labels[idx])
        grad = backward_batch(p, ds.features[idx], dl / len(idx))
        p.flat -= lr * grad.flat
    return p


def test_criterion_10_per_class_recovery():
    train = _image_dataset(60, seed=0)
    test = _image_dataset(20, seed=100)
    warm = _train_mlp(train, lr=0.3, steps=400, seed=1)

    gaps = []
    for seed in SEEDS:
        part = partition_dirichlet(train, m=10, beta=0.1, min_size=5, seed=seed)
        means = {}
        for kind in ("standard_ce", "fedlc"):
            cfg = TrainConfig(local_epochs=1, batch_size=8, lr=1.2, loss_kind=kind,
                              tau=2.0, seed=seed)
            per_client = []
            for cid in range(10):
                client = ClientState(cid, part.client_dataset(train, cid))
                spec = build_loss_spec(cfg, client.counts, warm)
                res = local_update(client, warm, spec, cfg.local_epochs, cfg.batch_size,
                                   cfg.lr, seed=seed, round_idx=0)
                per_client.append(per_class_accuracy(res.new_params, test).mean)
            means[kind] = float(np.mean(per_client))
        gaps.append(100 * (means["fedlc"] - means["standard_ce"]))
    mean_gap = float(np.mean(gaps))
    report(10, mean_gap >= 5.0,
           f"one skewed local epoch from a warm model, D(0.1) x 10 clients: mean "
           f"per-class accuracy gain {mean_gap:+.2f} pts over 5 seeds "
           f"(per-seed {[f'{g:+.1f}' for g in gaps]}; required >= +5)")


# ---------------------------------------------------------------------------
# criterion 11: combinations with proximal term and control variates


def test_criterion_11_combination_benefit(syn11_battery):
    b = {k: 100 * v for k, v in syn11_battery.items()}
    combos_ok = (b["fedlc_prox"] >= b["fedlc"] - 1.0
                 and b["fedlc_scaffold"] >= b["fedlc"] - 1.0)
    over_avg_ok = (b["fedlc_prox"] >= b["fedavg"] + 8.0
                   and b["fedlc_scaffold"] >= b["fedavg"] + 8.0)
    detail = (f"fedlc {b['fedlc']:.2f}, +prox {b['fedlc_prox']:.2f}, "
              f"+scaffold {b['fedlc_scaffold']:.2f}, fedavg {b['fedavg']:.2f}; "
              f"combos within 1 pt of fedlc: {'ok' if combos_ok else 'violated'}, "
              f"combos >= fedavg + 8: {'ok' if over_avg_ok else 'violated'}")
    report(11, combos_ok and over_avg_ok, detail)


# ---------------------------------------------------------------------------
# criterion 12: byte-identical reruns modulo wall-clock


def test_criterion_12_determinism(tmp_path):
    def run_to(dirname):
        cfg = ExperimentConfig(name="det", num_clients=5, rounds=3, seeds=[0, 1],
                               local_epochs=1, batch_size=32, lr=0.05,
                               output_dir=str(tmp_path / dirname))
        cfg.dataset = DatasetConfig(kind="synthetic", lam=1.0, mu=1.0, min_size=24)
        cfg.loss = LossConfig(kind="fedlc", tau=1.0)
        artifact = run_experiment(cfg)
        out = {}
        for p in artifact.metrics_paths:
            recs = [json.loads(line) for line in p.read_text().splitlines() if line.strip()]
            for r in recs:
                r.pop("wall_ms")
            out[p.name] = json.dumps(recs, sort_keys=True)
        return out

    first = run_to("a")
    second = run_to("b")
    report(12, first == second,
           "identical config run twice: JSONL byte-identical after dropping wall_ms")
