"""Dataset containers, the synthetic heterogeneous-client generator, and file ingestion."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng


class ConfigurationError(ValueError):
    """Raised when a generator or loader is configured inconsistently."""


class IngestionError(ValueError):
    """Raised when an input file cannot be decoded; the message names the offending field."""


@dataclass(frozen=True)
class Example:
    features: np.ndarray
    label: int


@dataclass
class Dataset:
    """A labelled classification dataset held as dense arrays.

    ``features`` is (n, dim) float64, ``labels`` is (n,) int64 with every
    label in [0, num_classes).  Classes may have zero examples.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ConfigurationError(f"features must be 2-d, got shape {self.features.shape}")
        if self.labels.ndim != 1 or len(self.labels) != len(self.features):
            raise ConfigurationError(
                f"labels shape {self.labels.shape} does not match {len(self.features)} examples"
            )
        if self.num_classes < 1:
            raise ConfigurationError("num_classes must be >= 1")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConfigurationError(
                f"labels must lie in [0, {self.num_classes}), got range "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return len(self.labels)

    def example(self, i: int) -> Example:
        return Example(self.features[i], int(self.labels[i]))

    def subset(self, indices, name: str = "") -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes,
                       name or self.name)


def concat(datasets: list[Dataset], name: str = "") -> Dataset:
    """Pool several datasets with identical dim and num_classes into one."""
    if not datasets:
        raise ConfigurationError("cannot concatenate an empty list of datasets")
    k = datasets[0].num_classes
    d = datasets[0].dim
    for ds in datasets:
        if ds.num_classes != k or ds.dim != d:
            raise ConfigurationError("datasets disagree on num_classes or dim")
    return Dataset(np.concatenate([ds.features for ds in datasets]),
                   np.concatenate([ds.labels for ds in datasets]), k, name)


def class_counts(dataset: Dataset) -> np.ndarray:
    """Per-class sample counts n_y, length num_classes; sums to len(dataset)."""
    return np.bincount(dataset.labels, minlength=dataset.num_classes).astype(np.int64)


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass
class SyntheticSpec:
    """Configuration for the two-knob heterogeneous client generator.

    ``lam`` spreads the per-client labelling models apart (0 means all clients
    share one model); ``mu`` spreads the per-client feature means apart.  Both
    are standard deviations of the client-level mean draws.  Local sample
    sizes follow a power law floored at ``min_size``.
    """

    lam: float
    mu: float
    num_clients: int
    dim: int = 60
    num_classes: int = 10
    min_size: int = 32
    power_law_exponent: float = 1.25
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0:
            raise ConfigurationError("lam and mu must be non-negative")
        if self.num_clients < 1:
            raise ConfigurationError("num_clients must be >= 1")
        if self.dim < 1 or self.num_classes < 2:
            raise ConfigurationError("need dim >= 1 and num_classes >= 2")
        if self.min_size < 1:
            raise ConfigurationError("min_size must be >= 1")
        if self.power_law_exponent <= 0:
            raise ConfigurationError("power_law_exponent must be positive")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")


def _client_model(spec: SyntheticSpec, client: int) -> tuple[np.ndarray, np.ndarray]:
    k, d = spec.num_classes, spec.dim
    if spec.lam == 0:
        # the model-mean distribution collapses to a point, so every client
        # shares one labelling model drawn from a client-independent stream
        g = rng.stream(spec.seed, rng.MODEL)
        u = 0.0
    else:
        g = rng.stream(spec.seed, rng.MODEL, client)
        u = g.normal(0.0, spec.lam)
    w = g.normal(u, 1.0, size=(k, d))
    b = g.normal(u, 1.0, size=k)
    return w, b


def _client_feature_mean(spec: SyntheticSpec, client: int) -> np.ndarray:
    g = rng.stream(spec.seed, rng.FEATURES, client)
    center = g.normal(0.0, spec.mu)
    return g.normal(center, 1.0, size=spec.dim)


def synthetic_client_sizes(spec: SyntheticSpec) -> np.ndarray:
    """Power-law local sample sizes, floored at min_size."""
    g = rng.stream(spec.seed, rng.SIZES)
    mult = g.pareto(spec.power_law_exponent, size=spec.num_clients)
    return (spec.min_size * (1.0 + mult)).astype(np.int64)


def synthetic_models(spec: SyntheticSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """The (W, b) labelling model of each client, recomputable independently
    of generation so tests can verify label assignments."""
    return [_client_model(spec, i) for i in range(spec.num_clients)]


def generate_synthetic(spec: SyntheticSpec) -> list[Dataset]:
    """Generate one dataset per client.

    Client i draws x ~ N(v_i, diag(j^-1.2)) and labels it with its own model:
    y = argmax(W_i x + b_i).  The output is a pure function of the
    SyntheticSpec fields, including the seed; clients use independent streams
    keyed by client index, so generating clients in parallel cannot change
    the output.
    """
    sizes = synthetic_client_sizes(spec)
    # coordinate noise scale: sqrt of the diagonal covariance j^-1.2, j 1-based
    scale = np.arange(1, spec.dim + 1, dtype=np.float64) ** -1.2
    scale = np.sqrt(scale)
    out = []
    for i in range(spec.num_clients):
        w, b = _client_model(spec, i)
        v = _client_feature_mean(spec, i)
        g = rng.stream(spec.seed, rng.SAMPLES, i)
        x = v + g.standard_normal(size=(sizes[i], spec.dim)) * scale
        y = np.argmax(x @ w.T + b, axis=1)
        out.append(Dataset(x, y, spec.num_classes,
                           name=f"synthetic({spec.lam:g},{spec.mu:g})/client{i}"))
    return out


# ---------------------------------------------------------------------------
# file ingestion

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


def _read_idx_header(raw: bytes, n_words: int, what: str) -> tuple[int, ...]:
    need = 4 * n_words
    if len(raw) < need:
        raise IngestionError(f"truncated {what} file: header needs {need} bytes, file has {len(raw)}")
    return struct.unpack(f">{n_words}I", raw[:need])


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    """Load a big-endian IDX image/label pair; pixels are scaled to [0, 1]."""
    img_raw = Path(images_path).read_bytes()
    lab_raw = Path(labels_path).read_bytes()

    magic, n_img, rows, cols = _read_idx_header(img_raw, 4, "images")
    if magic != IDX_IMAGE_MAGIC:
        raise IngestionError(f"images magic mismatch: expected {IDX_IMAGE_MAGIC:#010x}, got {magic:#010x}")
    payload = img_raw[16:]
    if len(payload) < n_img * rows * cols:
        raise IngestionError(
            f"truncated images payload: need {n_img * rows * cols} bytes, got {len(payload)}")

    lmagic, n_lab = _read_idx_header(lab_raw, 2, "labels")
    if lmagic != IDX_LABEL_MAGIC:
        raise IngestionError(f"labels magic mismatch: expected {IDX_LABEL_MAGIC:#010x}, got {lmagic:#010x}")
    lab_payload = lab_raw[8:]
    if len(lab_payload) < n_lab:
        raise IngestionError(f"truncated labels payload: need {n_lab} bytes, got {len(lab_payload)}")

    if n_img != n_lab:
        raise IngestionError(f"count mismatch: {n_img} images vs {n_lab} labels")

    pixels = np.frombuffer(payload[: n_img * rows * cols], dtype=np.uint8)
    x = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    y = np.frombuffer(lab_payload[:n_lab], dtype=np.uint8).astype(np.int64)
    k = int(y.max()) + 1 if num_classes is None and n_lab else (num_classes or 1)
    if num_classes is not None and n_lab and y.max() >= num_classes:
        raise IngestionError(f"label {y.max()} out of range for {num_classes} classes")
    return Dataset(x, y, k, name=Path(images_path).stem)


def load_csv(path, num_classes: int) -> Dataset:
    """Load ``label,f1,...,fd`` rows with constant d; errors carry the row number."""
    if num_classes < 1:
        raise ConfigurationError("num_classes must be >= 1")
    feats: list[list[float]] = []
    labels: list[int] = []
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if dim is None:
                dim = len(cells) - 1
                if dim < 1:
                    raise IngestionError(f"row {lineno}: need at least one feature column")
            elif len(cells) - 1 != dim:
                raise IngestionError(f"row {lineno}: expected {dim} features, got {len(cells) - 1}")
            try:
                label = int(cells[0])
            except ValueError:
                raise IngestionError(f"row {lineno}: non-numeric label {cells[0]!r}") from None
            if not 0 <= label < num_classes:
                raise IngestionError(f"row {lineno}: label {label} out of range for {num_classes} classes")
            try:
                row = [float(c) for c in cells[1:]]
            except ValueError:
                raise IngestionError(f"row {lineno}: non-numeric feature cell") from None
            labels.append(label)
            feats.append(row)
    x = np.asarray(feats, dtype=np.float64).reshape(len(labels), dim or 0)
    return Dataset(x, np.asarray(labels, dtype=np.int64), num_classes, name=Path(path).stem)
