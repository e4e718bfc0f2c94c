"""Multinomial logistic and one-hidden-layer MLP classifiers.

Parameters live in one flat float64 vector so aggregation rules reduce to
vector arithmetic; per-layer matrices are numpy views into that vector.
Gradients are hand-derived; there is no autodiff graph.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng


@dataclass(frozen=True)
class Arch:
    kind: str  # "logistic" | "mlp"
    dim: int
    num_classes: int
    hidden: int = 0

    def __post_init__(self):
        if self.kind not in ("logistic", "mlp"):
            raise ValueError(f"unknown arch kind {self.kind!r}")
        if self.kind == "mlp" and self.hidden < 1:
            raise ValueError("mlp needs hidden >= 1")

    def param_count(self) -> int:
        d, k, h = self.dim, self.num_classes, self.hidden
        if self.kind == "logistic":
            return d * k + k
        return d * h + h + h * k + k

    @staticmethod
    def logistic(dim: int, num_classes: int) -> "Arch":
        return Arch("logistic", dim, num_classes, 0)

    @staticmethod
    def mlp(dim: int, num_classes: int, hidden: int = 64) -> "Arch":
        return Arch("mlp", dim, num_classes, hidden)


@dataclass
class ModelParams:
    flat: np.ndarray
    arch: Arch

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.arch.param_count(),):
            raise ValueError(
                f"flat length {self.flat.shape} does not match arch count {self.arch.param_count()}")

    # views share memory with flat: mutating one mutates the other
    @property
    def w_hidden(self) -> np.ndarray:
        d, h = self.arch.dim, self.arch.hidden
        return self.flat[: d * h].reshape(h, d)

    @property
    def b_hidden(self) -> np.ndarray:
        d, h = self.arch.dim, self.arch.hidden
        return self.flat[d * h : d * h + h]

    @property
    def w_out(self) -> np.ndarray:
        d, k, h = self.arch.dim, self.arch.num_classes, self.arch.hidden
        if self.arch.kind == "logistic":
            return self.flat[: d * k].reshape(k, d)
        off = d * h + h
        return self.flat[off : off + h * k].reshape(k, h)

    @property
    def b_out(self) -> np.ndarray:
        d, k, h = self.arch.dim, self.arch.num_classes, self.arch.hidden
        if self.arch.kind == "logistic":
            return self.flat[d * k :]
        return self.flat[d * h + h + h * k :]

    def copy(self) -> "ModelParams":
        return ModelParams(self.flat.copy(), self.arch)


@dataclass
class ForwardTrace:
    logits: np.ndarray    # (K,)
    features: np.ndarray  # penultimate activation h; the raw input for logistic
    probs: np.ndarray     # softmax(logits)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax (max subtraction)."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_batch(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits and features for a batch of rows; returns (logits (n,K), h (n,·))."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.arch.dim:
        raise ValueError(f"input dim {x.shape[1]} does not match arch dim {params.arch.dim}")
    if params.arch.kind == "logistic":
        h = x
    else:
        h = np.maximum(x @ params.w_hidden.T + params.b_hidden, 0.0)
    return h @ params.w_out.T + params.b_out, h


def forward(params: ModelParams, x: np.ndarray) -> ForwardTrace:
    logits, h = forward_batch(params, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return ForwardTrace(logits[0], h[0], softmax(logits[0]))


def backward_batch(params: ModelParams, x: np.ndarray, dlogits: np.ndarray) -> ModelParams:
    """Parameter gradient summed over batch rows, given dL/dlogits per row.

    Callers wanting a batch mean scale dlogits by 1/n first (the chain rule
    is linear in dL/dlogits).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    dlogits = np.atleast_2d(np.asarray(dlogits, dtype=np.float64))
    if dlogits.shape != (x.shape[0], params.arch.num_classes):
        raise ValueError(f"dlogits shape {dlogits.shape} does not match "
                         f"({x.shape[0]}, {params.arch.num_classes})")
    grad = zeros(params.arch)
    if params.arch.kind == "logistic":
        grad.w_out[:] = dlogits.T @ x
        grad.b_out[:] = dlogits.sum(axis=0)
        return grad
    h = np.maximum(x @ params.w_hidden.T + params.b_hidden, 0.0)
    grad.w_out[:] = dlogits.T @ h
    grad.b_out[:] = dlogits.sum(axis=0)
    dh = dlogits @ params.w_out
    dz = dh * (h > 0.0)  # relu passes gradient only where it activated
    grad.w_hidden[:] = dz.T @ x
    grad.b_hidden[:] = dz.sum(axis=0)
    return grad


def backward(params: ModelParams, x: np.ndarray, dlogits: np.ndarray) -> ModelParams:
    return backward_batch(params, np.asarray(x, dtype=np.float64).reshape(1, -1),
                          np.asarray(dlogits, dtype=np.float64).reshape(1, -1))


def axpy_params(a: float, x: ModelParams, y: ModelParams) -> ModelParams:
    """a*x + y as a new ModelParams; arches must match."""
    if x.arch != y.arch:
        raise ValueError(f"arch mismatch: {x.arch} vs {y.arch}")
    return ModelParams(a * x.flat + y.flat, x.arch)


def zeros(arch: Arch) -> ModelParams:
    return ModelParams(np.zeros(arch.param_count()), arch)


def init_params(arch: Arch, seed: int) -> ModelParams:
    """Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    g = rng.stream(seed, rng.INIT)
    p = zeros(arch)
    if arch.kind == "mlp":
        s = np.sqrt(6.0 / (arch.dim + arch.hidden))
        p.w_hidden[:] = g.uniform(-s, s, size=p.w_hidden.shape)
        s = np.sqrt(6.0 / (arch.hidden + arch.num_classes))
        p.w_out[:] = g.uniform(-s, s, size=p.w_out.shape)
    else:
        s = np.sqrt(6.0 / (arch.dim + arch.num_classes))
        p.w_out[:] = g.uniform(-s, s, size=p.w_out.shape)
    return p


def predict(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Argmax labels for a batch; ties resolve to the lowest class index."""
    logits, _ = forward_batch(params, x)
    return np.argmax(logits, axis=1)


# ---------------------------------------------------------------------------
# checkpoint file: little-endian header + raw float64 parameter vector

_CKPT_MAGIC = b"FLPK"
_CKPT_HEADER = struct.Struct("<4sHBIIIQ")
_KIND_CODE = {"logistic": 0, "mlp": 1}
_KIND_NAME = {v: k for k, v in _KIND_CODE.items()}


def save_params(params: ModelParams, path) -> None:
    a = params.arch
    header = _CKPT_HEADER.pack(_CKPT_MAGIC, 1, _KIND_CODE[a.kind],
                               a.dim, a.hidden, a.num_classes, len(params.flat))
    Path(path).write_bytes(header + params.flat.astype("<f8").tobytes())


def load_params(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise ValueError(f"checkpoint too short: {len(raw)} bytes")
    magic, version, kind, dim, hidden, k, count = _CKPT_HEADER.unpack(raw[: _CKPT_HEADER.size])
    if magic != _CKPT_MAGIC or version != 1:
        raise ValueError("not a parameter checkpoint (bad magic or version)")
    arch = Arch(_KIND_NAME[kind], dim, k, hidden)
    if count != arch.param_count():
        raise ValueError(f"checkpoint count {count} does not match arch {arch}")
    flat = np.frombuffer(raw[_CKPT_HEADER.size :], dtype="<f8", count=count).astype(np.float64)
    return ModelParams(flat, arch)
