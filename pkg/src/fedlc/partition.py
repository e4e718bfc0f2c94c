"""Label-skew partitioners: sorted-shard quantity skew and per-class Dirichlet skew."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .datasets import Dataset

DIRICHLET_RETRIES = 1000


class InfeasiblePartitionError(ValueError):
    pass


@dataclass
class Partition:
    """A disjoint assignment of example indices to clients."""

    assignments: list[np.ndarray]
    num_clients: int
    scheme: str
    seed: int

    def __post_init__(self):
        self.assignments = [np.asarray(a, dtype=np.int64) for a in self.assignments]
        if len(self.assignments) != self.num_clients:
            raise ValueError(f"{len(self.assignments)} index lists for {self.num_clients} clients")

    def client_dataset(self, dataset: Dataset, client: int) -> Dataset:
        return dataset.subset(self.assignments[client], name=f"{dataset.name}/client{client}")

    def to_manifest(self) -> dict:
        return {
            "scheme": self.scheme,
            "seed": self.seed,
            "num_clients": self.num_clients,
            "assignments": [a.tolist() for a in self.assignments],
        }

    def save_manifest(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_manifest(), indent=1), encoding="utf-8")

    @staticmethod
    def from_manifest(path) -> "Partition":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return Partition(
            assignments=[np.asarray(a, dtype=np.int64) for a in obj["assignments"]],
            num_clients=int(obj["num_clients"]),
            scheme=str(obj["scheme"]),
            seed=int(obj["seed"]),
        )


@dataclass
class ClassStats:
    """One client's per-class counts split into majority / minority / missing sets."""

    counts: np.ndarray
    majority: set[int]
    minority: set[int]
    missing: set[int]
    threshold_ratio: float


def partition_quantity(dataset: Dataset, m: int, alpha: int, seed: int) -> Partition:
    """Sort by label, cut into m*alpha contiguous shards, deal alpha shards per client.

    Shard sizes are floor(n / (m*alpha)) with the remainder spread over the
    leading shards.  Shards are assigned by a seeded permutation; none is
    reused, so assignments are disjoint and exhaustive.
    """
    n = len(dataset)
    if m < 1 or alpha < 1:
        raise InfeasiblePartitionError("need m >= 1 and alpha >= 1")
    shards = m * alpha
    if shards > n:
        raise InfeasiblePartitionError(f"cannot cut {n} samples into {shards} non-empty shards")

    # stable sort by (label, original index) keeps partitions reproducible
    order = np.lexsort((np.arange(n), dataset.labels))
    base, extra = divmod(n, shards)
    sizes = np.full(shards, base, dtype=np.int64)
    sizes[:extra] += 1
    bounds = np.concatenate([[0], np.cumsum(sizes)])

    perm = rng.stream(seed, rng.SHARD).permutation(shards)
    assignments = []
    for c in range(m):
        own = perm[c * alpha : (c + 1) * alpha]
        assignments.append(np.sort(np.concatenate([order[bounds[s] : bounds[s + 1]] for s in own])))
    return Partition(assignments, m, f"Q({alpha})", seed)


def partition_dirichlet(dataset: Dataset, m: int, beta: float,
                        min_size: int | None = None, seed: int = 0) -> Partition:
    """Allocate each class's samples across clients by a Dirichlet(beta) draw.

    Every class k gets its own proportion vector p_k ~ Dir(beta * 1_m); the
    class's shuffled examples are split at the cumulative proportions, which
    conserves per-class counts exactly.  Draws leaving any client below
    ``min_size`` are redrawn entirely, up to a bounded retry budget.
    """
    n = len(dataset)
    if beta <= 0:
        raise InfeasiblePartitionError("beta must be positive")
    if min_size is None:
        min_size = min(128, n // m) if n // m >= 1 else 1
    if min_size < 1:
        raise InfeasiblePartitionError("min_size must be >= 1")
    if min_size * m > n:
        raise InfeasiblePartitionError(
            f"min_size {min_size} infeasible: {m} clients need {min_size * m} > {n} samples")

    k = dataset.num_classes
    by_class = [np.flatnonzero(dataset.labels == c) for c in range(k)]

    for attempt in range(DIRICHLET_RETRIES):
        buckets: list[list[np.ndarray]] = [[] for _ in range(m)]
        for c in range(k):
            idx = by_class[c]
            if len(idx) == 0:
                continue
            g = rng.stream(seed, rng.DIRICHLET, attempt, c)
            props = g.dirichlet(np.full(m, beta))
            shuffled = g.permutation(idx)
            cuts = np.floor(np.cumsum(props) * len(idx)).astype(np.int64)
            cuts[-1] = len(idx)  # guard against cumulative rounding short of n_c
            start = 0
            for j in range(m):
                buckets[j].append(shuffled[start : cuts[j]])
                start = cuts[j]
        assignments = [np.sort(np.concatenate(b)) if b else np.empty(0, dtype=np.int64)
                       for b in buckets]
        if min(len(a) for a in assignments) >= min_size:
            return Partition(assignments, m, f"D({beta:g})", seed)
    raise InfeasiblePartitionError(
        f"no Dirichlet draw satisfied min_size={min_size} after {DIRICHLET_RETRIES} retries; "
        "try a smaller min_size")


def class_stats(partition: Partition, dataset: Dataset, client: int,
                threshold_ratio: float = 0.5) -> ClassStats:
    """Split one client's label set into majority/minority/missing classes.

    Missing means zero local samples; among present classes, a class is
    majority iff its count reaches threshold_ratio times the largest count.
    The threshold feeds diagnostics only, never the training loss.
    """
    if not 0 <= client < partition.num_clients:
        raise ValueError(f"client {client} out of range")
    local = dataset.labels[partition.assignments[client]]
    counts = np.bincount(local, minlength=dataset.num_classes).astype(np.int64)
    missing = {c for c in range(dataset.num_classes) if counts[c] == 0}
    cutoff = threshold_ratio * counts.max() if counts.max() > 0 else 0
    majority = {c for c in range(dataset.num_classes) if counts[c] > 0 and counts[c] >= cutoff}
    minority = set(range(dataset.num_classes)) - majority - missing
    return ClassStats(counts, majority, minority, missing, threshold_ratio)


@dataclass
class SkewReport:
    """Per-client label histograms plus pairwise total-variation distances."""

    histograms: np.ndarray  # (m, K) counts
    tv_distances: np.ndarray  # (m, m) in [0, 1]
    scheme: str

    def save_csv(self, path) -> None:
        # long format: record,i,j,value — count rows then tv rows
        lines = ["record,i,j,value"]
        m, k = self.histograms.shape
        for c in range(m):
            for y in range(k):
                lines.append(f"count,{c},{y},{int(self.histograms[c, y])}")
        for a in range(m):
            for b in range(a + 1, m):
                lines.append(f"tv,{a},{b},{self.tv_distances[a, b]:.6f}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def skew_report(partition: Partition, dataset: Dataset) -> SkewReport:
    m, k = partition.num_clients, dataset.num_classes
    hist = np.zeros((m, k), dtype=np.int64)
    for c in range(m):
        hist[c] = np.bincount(dataset.labels[partition.assignments[c]], minlength=k)
    marg = hist / np.maximum(hist.sum(axis=1, keepdims=True), 1)
    tv = np.zeros((m, m))
    for a in range(m):
        for b in range(m):
            tv[a, b] = 0.5 * np.abs(marg[a] - marg[b]).sum()
    return SkewReport(hist, tv, partition.scheme)
