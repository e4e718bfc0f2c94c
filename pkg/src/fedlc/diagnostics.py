"""Quantitative probes of why skewed local training hurts aggregation.

The deviation bound compares class-mean features and predicted probabilities
to predict when a minority class's last-layer update points away from that
class's own features; its calibrated counterpart weighs each term by the
enforced pairwise margin.  The sign probe measures the effect directly by
running local SGD and reporting the sign of the minority-row update projected
onto the minority feature mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .datasets import Dataset, class_counts
from .losses import CalibrationSpec, LossSpec, calibrate_logits, loss_and_grad_batch, pairwise_margin
from .models import ModelParams, backward_batch, forward_batch, softmax

DENOM_EPS = 1e-12
IDENTITY_TOL = 1e-9


@dataclass
class ClassAggregates:
    """Class-conditional means of features and predicted probabilities.

    Rows of classes with no samples are NaN and flagged absent rather than
    silently zeroed.
    """

    mean_feature: np.ndarray  # (K, feature_dim)
    mean_probs: np.ndarray    # (K, K)
    counts: np.ndarray        # (K,)
    present: np.ndarray       # (K,) bool


def class_aggregates(params: ModelParams, dataset: Dataset,
                     calibration: CalibrationSpec | None = None) -> ClassAggregates:
    """Mean feature h and mean probability vector per true class.

    With a calibration spec, probabilities are softmax of the calibrated
    logits (the margin-shifted scores used during calibrated training).
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    logits, h = forward_batch(params, dataset.features)
    if calibration is not None:
        logits = calibrate_logits(calibration, logits)
    probs = softmax(logits)
    k = dataset.num_classes
    counts = class_counts(dataset)
    mean_h = np.full((k, h.shape[1]), np.nan)
    mean_p = np.full((k, k), np.nan)
    for c in range(k):
        mask = dataset.labels == c
        if counts[c] > 0:
            mean_h[c] = h[mask].mean(axis=0)
            mean_p[c] = probs[mask].mean(axis=0)
    return ClassAggregates(mean_h, mean_p, counts, counts > 0)


def deviation_bound(agg: ClassAggregates, j: int, r: int) -> float:
    """Deviation bound for majority class j and minority class r.

    (1 - p_bar_r^(r)) * ||h_bar^(r)||^2 / (p_bar_r^(j) * h_bar^(r).h_bar^(j)).
    Returns NaN when the denominator is ill-conditioned (near-orthogonal mean
    features or vanishing p_bar_r^(j)); raises if the requested classes have
    no samples.
    """
    if not (agg.present[j] and agg.present[r]):
        raise ValueError(f"classes {j} and {r} must both be present")
    p_r_r = agg.mean_probs[r, r]
    rest = agg.mean_probs[r].sum() - p_r_r
    if abs((1.0 - p_r_r) - rest) > IDENTITY_TOL:
        raise ValueError(
            f"aggregate rows are not a probability mean: 1 - p_rr = {1.0 - p_r_r!r} "
            f"but off-target mass = {rest!r}")
    hr, hj = agg.mean_feature[r], agg.mean_feature[j]
    denom = agg.mean_probs[j, r] * float(hr @ hj)
    if abs(denom) < DENOM_EPS:
        return math.nan
    return float((1.0 - p_r_r) * float(hr @ hr) / denom)


def deviation_bound_calibrated(agg_tilde: ClassAggregates, spec: CalibrationSpec,
                               j: int, r: int) -> float:
    """Margin-weighted deviation bound: each off-target term is scaled by the
    enforced margin between r and that class, so it vanishes at tau=0 and for
    uniform counts."""
    if not (agg_tilde.present[j] and agg_tilde.present[r]):
        raise ValueError(f"classes {j} and {r} must both be present")
    hr, hj = agg_tilde.mean_feature[r], agg_tilde.mean_feature[j]
    denom = agg_tilde.mean_probs[j, r] * float(hr @ hj)
    if abs(denom) < DENOM_EPS:
        return math.nan
    k = len(agg_tilde.counts)
    hr_sq = float(hr @ hr)
    total = 0.0
    for y in range(k):
        if y == r:
            continue
        total += pairwise_margin(spec, r, y) * agg_tilde.mean_probs[r, y] * hr_sq / denom
    return float(total)


@dataclass
class DeviationReport:
    """Bound matrix over (majority, minority) pairs plus the count ratios."""

    majority: list[int]
    minority: list[int]
    d_matrix: np.ndarray      # (len(majority), len(minority)); NaN where undefined
    ratio_matrix: np.ndarray  # n_j / n_r
    calibrated: bool
    flags: list[tuple[int, int]]  # pairs whose ratio exceeds factor * bound
    factor: float

    def save_csv(self, path) -> None:
        from pathlib import Path

        lines = ["majority,minority,count_majority,count_minority,ratio,bound,undefined,exceeds_factor"]
        # counts recoverable from ratio rows; emit explicit columns for tools
        for a, j in enumerate(self.majority):
            for b, r in enumerate(self.minority):
                d = self.d_matrix[a, b]
                und = math.isnan(d)
                lines.append(
                    f"{j},{r},{self._counts[j]},{self._counts[r]},"
                    f"{self.ratio_matrix[a, b]:.6f},{'' if und else f'{d:.6f}'},"
                    f"{int(und)},{int((j, r) in set(self.flags))}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    _counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def deviation_report(agg: ClassAggregates, majority, minority,
                     calibration: CalibrationSpec | None = None,
                     factor: float = 10.0) -> DeviationReport:
    """Evaluate the (calibrated) bound for every majority x minority pair.

    Undefined pairs stay NaN; a pair is flagged when n_j/n_r > factor * D_jr,
    the regime where the minority-row update is expected to deviate.
    """
    maj = sorted(majority)
    mino = sorted(minority)
    d = np.full((len(maj), len(mino)), np.nan)
    ratios = np.full((len(maj), len(mino)), np.nan)
    flags = []
    for a, j in enumerate(maj):
        for b, r in enumerate(mino):
            if calibration is None:
                d[a, b] = deviation_bound(agg, j, r)
            else:
                d[a, b] = deviation_bound_calibrated(agg, calibration, j, r)
            if agg.counts[r] > 0:
                ratios[a, b] = agg.counts[j] / agg.counts[r]
            if not math.isnan(d[a, b]) and not math.isnan(ratios[a, b]):
                if ratios[a, b] > factor * d[a, b]:
                    flags.append((j, r))
    report = DeviationReport(maj, mino, d, ratios, calibration is not None, flags, factor)
    report._counts = agg.counts
    return report


# ---------------------------------------------------------------------------
# accuracy and margins


@dataclass
class PerClassAccuracy:
    per_class: np.ndarray  # (K,), NaN for classes absent from the test set
    mean: float            # mean over present classes
    counts: np.ndarray


def per_class_accuracy(params: ModelParams, dataset: Dataset) -> PerClassAccuracy:
    logits, _ = forward_batch(params, dataset.features)
    pred = np.argmax(logits, axis=1)
    k = dataset.num_classes
    counts = class_counts(dataset)
    acc = np.full(k, np.nan)
    for c in range(k):
        if counts[c] > 0:
            mask = dataset.labels == c
            acc[c] = float((pred[mask] == c).mean())
    present = counts > 0
    return PerClassAccuracy(acc, float(acc[present].mean()) if present.any() else math.nan, counts)


@dataclass
class MarginReport:
    """Score margins d_y = f_y - max_{i!=y} f_i and the per-pair error bounds."""

    margins: np.ndarray             # (n,) per-example margin at the true label
    class_mean_margins: np.ndarray  # (K,), NaN for absent classes
    bounds: np.ndarray              # (K, K): 1/(d_y sqrt(n_y)) + 1/(d_i sqrt(n_i))
    flagged_pairs: list[tuple[int, int]]  # pairs with a non-positive mean margin

    def save_csv(self, class_path, pair_path) -> None:
        from pathlib import Path

        k = len(self.class_mean_margins)
        lines = ["class,count,mean_margin"]
        for c in range(k):
            m = self.class_mean_margins[c]
            lines.append(f"{c},{self._counts[c]},{'' if math.isnan(m) else f'{m:.6f}'}")
        Path(class_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
        lines = ["class_y,class_i,error_bound,flagged"]
        flagged = set(self.flagged_pairs)
        for y in range(k):
            for i in range(y + 1, k):
                b = self.bounds[y, i]
                lines.append(f"{y},{i},{'' if math.isnan(b) else f'{b:.6f}'},"
                             f"{int((y, i) in flagged)}")
        Path(pair_path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    _counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def margin_report(params: ModelParams, dataset: Dataset) -> MarginReport:
    logits, _ = forward_batch(params, dataset.features)
    n, k = logits.shape
    rows = np.arange(n)
    own = logits[rows, dataset.labels]
    masked = np.array(logits, copy=True)
    masked[rows, dataset.labels] = -np.inf
    margins = own - masked.max(axis=1)

    counts = class_counts(dataset)
    means = np.full(k, np.nan)
    for c in range(k):
        if counts[c] > 0:
            means[c] = float(margins[dataset.labels == c].mean())

    bounds = np.full((k, k), np.nan)
    flagged = []
    for y in range(k):
        for i in range(k):
            if y == i or counts[y] == 0 or counts[i] == 0:
                continue
            if means[y] <= 0 or means[i] <= 0:
                if y < i:
                    flagged.append((y, i))
                continue
            bounds[y, i] = 1.0 / (means[y] * math.sqrt(counts[y])) + \
                1.0 / (means[i] * math.sqrt(counts[i]))
    report = MarginReport(margins, means, bounds, flagged)
    report._counts = counts
    return report


# ---------------------------------------------------------------------------
# sign probe


@dataclass
class SignProbeResult:
    majority: int
    minority: int
    minority_dots: np.ndarray  # (trials,) delta_w_r . h_bar_r
    majority_dots: np.ndarray  # (trials,) delta_w_j . h_bar_r

    @property
    def frac_minority_negative(self) -> float:
        return float((self.minority_dots < 0).mean())

    @property
    def frac_majority_positive(self) -> float:
        return float((self.majority_dots > 0).mean())


def make_probe_client(dim: int, num_classes: int, n_majority: int, n_minority: int,
                      seed: int, separation: float = 2.0, overlap: float = 0.7,
                      majority: int = 0, minority: int = 1) -> Dataset:
    """Two Gaussian clouds with the requested count imbalance.

    The remaining classes are left empty.  ``overlap`` is the cosine between
    the cloud centers: the deviation mechanism needs positively overlapping
    class-mean features (h_bar_j . h_bar_r > 0), as extracted features have
    in practice, so the default keeps the centers at an acute angle.  Noise
    is unit isotropic; ``separation`` scales both centers.
    """
    g = rng.stream(seed, rng.PROBE, 0)
    u = g.standard_normal(dim)
    u /= np.linalg.norm(u)
    v = g.standard_normal(dim)
    v -= (v @ u) * u
    v /= np.linalg.norm(v)
    center_j = separation * u
    center_r = separation * (overlap * u + math.sqrt(max(1.0 - overlap ** 2, 0.0)) * v)
    xj = center_j + g.standard_normal((n_majority, dim))
    xr = center_r + g.standard_normal((n_minority, dim))
    x = np.concatenate([xj, xr])
    y = np.concatenate([np.full(n_majority, majority), np.full(n_minority, minority)])
    return Dataset(x, y, num_classes, name=f"probe(ratio={n_majority}/{n_minority})")


def update_sign_probe(params: ModelParams, dataset: Dataset, *, lr: float, steps: int,
                        batch_size: int, trials: int, seed: int,
                        loss_spec: LossSpec | None = None,
                        majority: int | None = None,
                        minority: int | None = None) -> SignProbeResult:
    """Run seeded local-SGD trials from ``params`` and report update signs.

    Each trial takes ``steps`` mini-batch SGD steps (batches drawn without
    replacement from a trial-keyed stream) and measures the last-layer row
    updates projected onto the minority class's mean feature.  Trials with
    the same (seed, trial index) see identical batches regardless of the
    loss, so paired probes across losses are variance-free.
    """
    counts = class_counts(dataset)
    if majority is None:
        majority = int(np.argmax(counts))
    if minority is None:
        present = np.flatnonzero(counts > 0)
        minority = int(present[np.argmin(counts[present])])
    h_bar = class_aggregates(params, dataset).mean_feature
    h_r = h_bar[minority]

    spec = loss_spec if loss_spec is not None else LossSpec(kind="standard_ce")
    x, y = dataset.features, dataset.labels
    n = len(dataset)
    b = min(batch_size, n)

    minority_dots = np.zeros(trials)
    majority_dots = np.zeros(trials)
    for t in range(trials):
        g = rng.stream(seed, rng.PROBE, 1, t)
        p = params.copy()
        for _ in range(steps):
            idx = g.choice(n, size=b, replace=False)
            logits, _ = forward_batch(p, x[idx])
            _, dl = loss_and_grad_batch(spec, logits, y[idx])
            grad = backward_batch(p, x[idx], dl / b)
            if spec.prox_mu > 0:
                grad.flat += spec.prox_mu * (p.flat - spec.anchor.flat)
            p.flat -= lr * grad.flat
        dw = p.w_out - params.w_out
        minority_dots[t] = float(dw[minority] @ h_r)
        majority_dots[t] = float(dw[majority] @ h_r)
    return SignProbeResult(majority, minority, minority_dots, majority_dots)
