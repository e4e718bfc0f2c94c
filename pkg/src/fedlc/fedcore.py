"""The federated round state machine.

One round: every sampled client clones the global weights, runs E epochs of
mini-batch SGD under its own loss spec, and the server folds the results back
with one of the aggregation rules (weighted averaging, step-normalized
averaging, control variates, or a server-side Adam step on the pseudo
gradient).  All randomness flows from named seed streams, so any parallel
schedule of clients yields identical results.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import rng
from .datasets import Dataset, class_counts
from .diagnostics import per_class_accuracy
from .losses import CalibrationSpec, LossSpec, loss_and_grad_batch, prox_value_and_grad
from .models import ModelParams, backward_batch, forward_batch, zeros

WEIGHT_SUM_TOL = 1e-9


class SkipClient(Exception):
    """Signals a client that cannot contribute this round (no local data)."""


@dataclass
class ClientState:
    id: int
    data: Dataset
    counts: np.ndarray = None
    control_variate: ModelParams | None = None

    def __post_init__(self):
        if self.counts is None:
            self.counts = class_counts(self.data)


@dataclass
class ServerState:
    global_params: ModelParams
    strategy: str = "fedavg"  # fedavg | fednova | scaffold | fedopt
    round: int = 0
    server_lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-3
    opt_m: np.ndarray | None = None
    opt_v: np.ndarray | None = None
    global_control: ModelParams | None = None

    def __post_init__(self):
        if self.strategy not in ("fedavg", "fednova", "scaffold", "fedopt"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        n = self.global_params.arch.param_count()
        if self.strategy == "fedopt":
            if self.opt_m is None:
                self.opt_m = np.zeros(n)
            if self.opt_v is None:
                self.opt_v = np.zeros(n)
        if self.strategy == "scaffold" and self.global_control is None:
            self.global_control = zeros(self.global_params.arch)


@dataclass
class LocalUpdateResult:
    client_id: int
    new_params: ModelParams
    num_steps: int                      # E * ceil(n_i / B)
    delta: ModelParams                  # global - new
    control_delta: ModelParams | None   # c_i+ - c_i (scaffold only)
    train_loss: float


@dataclass
class TrainConfig:
    """Per-round local-training knobs shared by every client."""

    local_epochs: int = 1
    batch_size: int = 128
    lr: float = 0.01
    loss_kind: str = "standard_ce"
    tau: float = 1.0
    count_floor: float = 1.0
    variant: str = "inclusive"
    expel_missing: bool = False
    alpha_rs: float = 0.5
    prox_mu: float = 0.0
    seed: int = 0


def build_loss_spec(cfg: TrainConfig, counts: np.ndarray, anchor: ModelParams) -> LossSpec:
    """Instantiate the per-client loss: calibration uses that client's local
    counts, the proximal anchor is the current global model."""
    if cfg.loss_kind == "fedlc":
        calib = CalibrationSpec(tau=cfg.tau, counts=counts, count_floor=cfg.count_floor,
                                variant=cfg.variant, expel_missing=cfg.expel_missing)
        return LossSpec(kind="fedlc", calibration=calib, prox_mu=cfg.prox_mu,
                        anchor=anchor if cfg.prox_mu > 0 else None)
    if cfg.loss_kind == "fedrs":
        return LossSpec(kind="fedrs", alpha_rs=cfg.alpha_rs, observed=counts > 0,
                        prox_mu=cfg.prox_mu, anchor=anchor if cfg.prox_mu > 0 else None)
    if cfg.loss_kind == "standard_ce":
        return LossSpec(kind="standard_ce", prox_mu=cfg.prox_mu,
                        anchor=anchor if cfg.prox_mu > 0 else None)
    raise ValueError(f"unknown loss kind {cfg.loss_kind!r}")


def local_update(client: ClientState, global_params: ModelParams, loss_spec: LossSpec,
                 epochs: int, batch_size: int, lr: float, seed: int, round_idx: int = 0,
                 scaffold_ctx: tuple[ModelParams, ModelParams] | None = None) -> LocalUpdateResult:
    """E epochs of mini-batch SGD from a clone of the global weights.

    Batches come from a per-(client, round, epoch) seeded shuffle with the
    last partial batch kept.  With a scaffold context (c, c_i), each step is
    corrected by -lr*(c - c_i) and the client control is refreshed to
    c_i+ = c_i - c + (global - new)/(steps * lr).
    """
    n = len(client.data)
    if n == 0:
        raise SkipClient(client.id)
    if epochs < 1 or batch_size < 1:
        raise ValueError("need epochs >= 1 and batch_size >= 1")

    p = global_params.copy()
    x, y = client.data.features, client.data.labels
    correction = None
    if scaffold_ctx is not None:
        c, c_i = scaffold_ctx
        correction = c.flat - c_i.flat

    loss_sum = 0.0
    steps = 0
    for epoch in range(epochs):
        order = rng.stream(seed, rng.SHUFFLE, client.id, round_idx, epoch).permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            logits, _ = forward_batch(p, x[idx])
            per_example, dl = loss_and_grad_batch(loss_spec, logits, y[idx])
            grad = backward_batch(p, x[idx], dl / len(idx))
            step_loss = float(per_example.mean())
            if loss_spec.prox_mu > 0:
                val, pgrad = prox_value_and_grad(loss_spec, p)
                grad.flat += pgrad
                step_loss += val
            step = grad.flat if correction is None else grad.flat + correction
            p.flat -= lr * step
            loss_sum += step_loss
            steps += 1

    delta = ModelParams(global_params.flat - p.flat, p.arch)
    control_delta = None
    if scaffold_ctx is not None:
        c, c_i = scaffold_ctx
        if lr > 0:
            new_control = c_i.flat - c.flat + delta.flat / (steps * lr)
        else:
            new_control = c_i.flat.copy()  # zero-step limit: leave the control alone
        control_delta = ModelParams(new_control - c_i.flat, p.arch)
    return LocalUpdateResult(client.id, p, steps, delta, control_delta, loss_sum / steps)


# ---------------------------------------------------------------------------
# aggregation rules


def _normalized_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise ValueError(f"client weights sum to {total!r}, expected 1")
    return w / total


def _weighted_average(flats: list[np.ndarray], w: np.ndarray) -> np.ndarray:
    out = np.zeros_like(flats[0])
    for wi, fi in zip(w, flats):
        out += wi * fi
    return out


def aggregate_fedavg(results: list[LocalUpdateResult], weights) -> ModelParams:
    """Weighted average of the client models; weights must sum to 1."""
    w = _normalized_weights(weights)
    arch = results[0].new_params.arch
    for r in results:
        if r.new_params.arch != arch:
            raise ValueError("all results must share one arch")
    return ModelParams(_weighted_average([r.new_params.flat for r in results], w), arch)


def aggregate_fednova(global_params: ModelParams, results: list[LocalUpdateResult],
                      weights) -> ModelParams:
    """Step-normalized averaging: new = global - tau_eff * sum_i p_i d_i/tau_i.

    With equal step counts the rule reduces algebraically to plain weighted
    averaging; that case goes through the fedavg code path so the two rules
    agree exactly, elementwise.
    """
    taus = np.array([r.num_steps for r in results], dtype=np.float64)
    if (taus < 1).any():
        raise ValueError("every result needs num_steps >= 1")
    if np.all(taus == taus[0]):
        return aggregate_fedavg(results, weights)
    w = _normalized_weights(weights)
    tau_eff = float(w @ taus)
    normalized = _weighted_average([r.delta.flat / r.num_steps for r in results], w)
    return ModelParams(global_params.flat - tau_eff * normalized, global_params.arch)


def aggregate_scaffold(global_params: ModelParams, results: list[LocalUpdateResult],
                       weights, m_total: int,
                       global_control: ModelParams) -> tuple[ModelParams, ModelParams]:
    """Weighted model average plus the server control update
    c <- c + (participating/m_total) * mean(c_i+ - c_i)."""
    new_global = aggregate_fedavg(results, weights)
    deltas = [r.control_delta for r in results]
    if any(d is None for d in deltas):
        raise ValueError("scaffold aggregation needs control deltas from every result")
    mean_delta = np.mean([d.flat for d in deltas], axis=0)
    frac = len(results) / m_total
    new_control = ModelParams(global_control.flat + frac * mean_delta, global_params.arch)
    return new_global, new_control


def aggregate_fedopt(global_params: ModelParams, results: list[LocalUpdateResult], weights,
                     opt_m: np.ndarray, opt_v: np.ndarray, server_lr: float,
                     beta1: float = 0.9, beta2: float = 0.99,
                     eps: float = 1e-3) -> tuple[ModelParams, np.ndarray, np.ndarray]:
    """Server Adam on the pseudo-gradient sum_i p_i (global - new_i)."""
    w = _normalized_weights(weights)
    pseudo = _weighted_average([r.delta.flat for r in results], w)
    m = beta1 * opt_m + (1.0 - beta1) * pseudo
    v = beta2 * opt_v + (1.0 - beta2) * pseudo * pseudo
    new = global_params.flat - server_lr * m / (np.sqrt(v) + eps)
    return ModelParams(new, global_params.arch), m, v


# ---------------------------------------------------------------------------
# the round


@dataclass
class RoundReport:
    round: int
    strategy: str
    loss_kind: str
    test_acc: float
    per_class_acc: np.ndarray
    mean_train_loss: float
    wall_ms: float
    deviation: dict | None = None

    def to_json_obj(self) -> dict:
        obj = {
            "round": self.round,
            "strategy": self.strategy,
            "loss_kind": self.loss_kind,
            "test_acc": self.test_acc,
            "per_class_acc": [None if math.isnan(a) else a for a in self.per_class_acc],
            "mean_train_loss": self.mean_train_loss,
            "wall_ms": self.wall_ms,
        }
        if self.deviation is not None:
            obj["deviation"] = self.deviation
        return obj


def run_round(server: ServerState, clients: dict[int, ClientState], sampled_ids,
              test_set: Dataset, cfg: TrainConfig) -> RoundReport:
    """Advance the server by one communication round; mutates ``server`` (and
    client controls under scaffold) and returns the round report."""
    t0 = time.perf_counter()
    sampled = sorted(sampled_ids)
    if not sampled:
        raise ValueError("sampled_ids must be nonempty")

    results = []
    sizes = []
    for cid in sampled:
        client = clients[cid]
        spec = build_loss_spec(cfg, client.counts, server.global_params)
        ctx = None
        if server.strategy == "scaffold":
            if client.control_variate is None:
                client.control_variate = zeros(server.global_params.arch)
            ctx = (server.global_control, client.control_variate)
        try:
            res = local_update(client, server.global_params, spec,
                               cfg.local_epochs, cfg.batch_size, cfg.lr,
                               seed=cfg.seed, round_idx=server.round, scaffold_ctx=ctx)
        except SkipClient:
            continue
        results.append(res)
        sizes.append(len(client.data))
    if not results:
        raise RuntimeError("every sampled client was skipped; no data to aggregate")

    weights = np.asarray(sizes, dtype=np.float64)
    weights /= weights.sum()

    if server.strategy == "fedavg":
        server.global_params = aggregate_fedavg(results, weights)
    elif server.strategy == "fednova":
        server.global_params = aggregate_fednova(server.global_params, results, weights)
    elif server.strategy == "scaffold":
        server.global_params, server.global_control = aggregate_scaffold(
            server.global_params, results, weights, m_total=len(clients),
            global_control=server.global_control)
        for res in results:
            ci = clients[res.client_id].control_variate
            ci.flat += res.control_delta.flat
    else:
        server.global_params, server.opt_m, server.opt_v = aggregate_fedopt(
            server.global_params, results, weights, server.opt_m, server.opt_v,
            server.server_lr, server.beta1, server.beta2, server.eps)

    server.round += 1
    pca = per_class_accuracy(server.global_params, test_set)
    logits, _ = forward_batch(server.global_params, test_set.features)
    test_acc = float((np.argmax(logits, axis=1) == test_set.labels).mean())
    mean_loss = float(np.mean([r.train_loss for r in results]))
    wall_ms = (time.perf_counter() - t0) * 1000.0
    return RoundReport(server.round, server.strategy, cfg.loss_kind, test_acc,
                       pca.per_class, mean_loss, wall_ms)
