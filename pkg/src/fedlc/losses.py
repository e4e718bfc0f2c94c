"""Local-training objectives.

Four interchangeable objectives drive the client update: plain softmax
cross-entropy, margin-calibrated cross-entropy (per-class logit offsets
derived from local label counts), restricted softmax for locally missing
classes, and an optional proximal pull toward the global weights that
composes with any of the above.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import ForwardTrace, ModelParams

EXPEL_SENTINEL = -30.0


@dataclass
class CalibrationSpec:
    """Per-class logit calibration derived from local label counts.

    The offset subtracted from logit i is tau * max(n_i, count_floor)^(-1/4),
    so frequent classes are demoted least.  ``use_log_prior`` swaps the
    offsets for log class priors, realizing the posterior-correction decision
    rule argmax(f_y - log gamma_y) instead of the margin parameterization.
    ``expel_missing`` pins the calibrated logit of zero-count classes to a
    large negative sentinel.
    """

    tau: float
    counts: np.ndarray
    count_floor: float = 1.0
    variant: str = "inclusive"  # "inclusive" | "exclusive" denominator convention
    expel_missing: bool = False
    use_log_prior: bool = False

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if self.count_floor <= 0:
            raise ValueError("count_floor must be positive")
        if self.variant not in ("inclusive", "exclusive"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.counts.ndim != 1:
            raise ValueError("counts must be a vector")

    def offsets(self) -> np.ndarray:
        clamped = np.maximum(self.counts, self.count_floor)
        if self.use_log_prior:
            return np.log(clamped / clamped.sum())
        return self.tau * clamped ** -0.25


def pairwise_margin(spec: CalibrationSpec, y: int, i: int) -> float:
    """Desired score gap between classes y and i: tau*(n_y^-1/4 - n_i^-1/4).

    Counts are clamped at count_floor; antisymmetric in (y, i).  In log-prior
    mode this is log(gamma_i / gamma_y) instead.
    """
    clamped = np.maximum(spec.counts, spec.count_floor)
    if spec.use_log_prior:
        return float(np.log(clamped[i] / clamped[y]))
    return float(spec.tau * (clamped[y] ** -0.25 - clamped[i] ** -0.25))


def calibrate_logits(spec: CalibrationSpec, logits: np.ndarray) -> np.ndarray:
    """Shift logits by the per-class offsets; rows of a 2-d input are examples.

    When every offset is identical the input is returned unchanged: constant
    shifts provably cancel in both softmax variants, and skipping the
    subtraction keeps tau=0 (and uniform-count) training bit-identical to the
    uncalibrated loss.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[-1] != len(spec.counts):
        raise ValueError(f"logits last dim {logits.shape[-1]} != {len(spec.counts)} classes")
    off = spec.offsets()
    missing = spec.counts == 0
    if not (spec.expel_missing and missing.any()) and np.all(off == off[0]):
        return logits
    g = logits - off
    if spec.expel_missing and missing.any():
        g = np.array(g, copy=True)
        g[..., missing] = EXPEL_SENTINEL
    return g


@dataclass
class LossSpec:
    """Which local objective to use, with its hyperparameters.

    prox_mu > 0 adds (prox_mu/2)*||params - anchor||^2 to any base loss and
    requires the anchor (global weights) to be present.
    """

    kind: str = "standard_ce"  # standard_ce | fedlc | fedrs
    calibration: CalibrationSpec | None = None
    alpha_rs: float = 0.5
    observed: np.ndarray | None = None  # bool mask of locally observed classes (fedrs)
    prox_mu: float = 0.0
    anchor: ModelParams | None = None

    def __post_init__(self):
        if self.kind not in ("standard_ce", "fedlc", "fedrs"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "fedlc" and self.calibration is None:
            raise ValueError("fedlc requires a CalibrationSpec")
        if self.kind == "fedrs":
            if self.observed is None:
                raise ValueError("fedrs requires the observed-class mask")
            if not 0 < self.alpha_rs <= 1:
                raise ValueError("alpha_rs must lie in (0, 1]")
            self.observed = np.asarray(self.observed, dtype=bool)
        if self.prox_mu < 0:
            raise ValueError("prox_mu must be non-negative")
        if self.prox_mu > 0 and self.anchor is None:
            raise ValueError("prox_mu > 0 requires an anchor")


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def loss_and_grad_batch(spec: LossSpec, logits: np.ndarray,
                        labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-example losses and dL/dlogits for a batch; no proximal term.

    The proximal contribution lives in parameter space, so callers that take
    SGD steps add it once per step (see ``prox_value_and_grad``).
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    rows = np.arange(n)

    if spec.kind == "fedrs":
        a = np.where(spec.observed, 1.0, spec.alpha_rs)
        z = logits - logits.max(axis=1, keepdims=True)
        w = a * np.exp(z)
        p = w / w.sum(axis=1, keepdims=True)
        loss = -np.log(p[rows, labels])
        dl = p.copy()
        dl[rows, labels] -= 1.0
        return loss, dl

    g = logits if spec.kind == "standard_ce" else calibrate_logits(spec.calibration, logits)

    if spec.kind == "fedlc" and spec.calibration.variant == "exclusive":
        # literal pairwise-margin form: L = log sum_{i != y} exp(g_i - g_y)
        masked = np.array(g, copy=True)
        masked[rows, labels] = -np.inf
        m = masked.max(axis=1, keepdims=True)
        s = np.exp(masked - m)
        denom = s.sum(axis=1, keepdims=True)
        loss = (m.ravel() + np.log(denom.ravel())) - g[rows, labels]
        dl = s / denom
        dl[rows, labels] = -1.0
        return loss, dl

    logp = _log_softmax(g)
    loss = -logp[rows, labels]
    dl = np.exp(logp)
    dl[rows, labels] -= 1.0
    return loss, dl


def prox_value_and_grad(spec: LossSpec, params: ModelParams) -> tuple[float, np.ndarray]:
    """(mu/2)*||params - anchor||^2 and its parameter-space gradient."""
    diff = params.flat - spec.anchor.flat
    return 0.5 * spec.prox_mu * float(diff @ diff), spec.prox_mu * diff


def loss_and_grad(spec: LossSpec, trace: ForwardTrace, y: int,
                  params: ModelParams | None = None):
    """Single-example loss, dL/dlogits, and the proximal gradient contribution.

    The third element is None when prox_mu == 0; otherwise it is a ModelParams
    holding prox_mu * (params - anchor), and the loss includes the proximal
    value.
    """
    loss, dl = loss_and_grad_batch(spec, trace.logits.reshape(1, -1), np.asarray([y]))
    loss_val, dl = float(loss[0]), dl[0]
    prox_grad = None
    if spec.prox_mu > 0:
        if params is None:
            raise ValueError("prox_mu > 0 requires params")
        val, pgrad = prox_value_and_grad(spec, params)
        loss_val += val
        prox_grad = ModelParams(pgrad, params.arch)
    return loss_val, dl, prox_grad
