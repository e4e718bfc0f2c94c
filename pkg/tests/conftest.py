"""Shared fixtures: tiny IDX writers and toy dataset builders."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pytest

from fedlc.datasets import Dataset


def write_idx_images(path, images: np.ndarray) -> None:
    """images: (n, rows, cols) uint8."""
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        fh.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, len(labels)))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


def toy_image_data(n_per_class: int, num_classes: int = 4, side: int = 8,
                   seed: int = 0, noise: int = 45,
                   intensity: int = 190) -> tuple[np.ndarray, np.ndarray]:
    """Blob-pattern uint8 images: class c is a 3x3 bright block at a
    class-specific position plus uniform pixel noise."""
    g = np.random.default_rng(seed)
    cells = (side - 2) ** 2
    assert num_classes <= cells
    templates = np.zeros((num_classes, side, side))
    for c in range(num_classes):
        r, q = divmod((c * 7) % cells, side - 2)  # stride 7 spreads the blocks
        templates[c, r : r + 3, q : q + 3] = intensity
    images, labels = [], []
    for c in range(num_classes):
        base = templates[c][None, :, :]
        imgs = base + g.integers(-noise, noise, size=(n_per_class, side, side))
        images.append(np.clip(imgs, 0, 255))
        labels.extend([c] * n_per_class)
    return np.concatenate(images).astype(np.uint8), np.asarray(labels, dtype=np.uint8)


def make_blob_dataset(n_per_class: int, num_classes: int, dim: int, seed: int,
                      spread: float = 3.0, noise: float = 1.0) -> Dataset:
    """Well-separated Gaussian blobs, one per class."""
    g = np.random.default_rng(seed)
    centers = g.normal(0.0, spread, size=(num_classes, dim))
    xs, ys = [], []
    for c in range(num_classes):
        xs.append(centers[c] + g.normal(0.0, noise, size=(n_per_class, dim)))
        ys.extend([c] * n_per_class)
    return Dataset(np.concatenate(xs), np.asarray(ys), num_classes, name="blobs")


@pytest.fixture
def idx_pair(tmp_path):
    """A 4-class 6x6 toy image dataset written as an IDX pair."""
    images, labels = toy_image_data(n_per_class=12, num_classes=4, side=6, seed=3)
    img_path = tmp_path / "train-images-idx3"
    lab_path = tmp_path / "train-labels-idx1"
    write_idx_images(img_path, images)
    write_idx_labels(lab_path, labels)
    return img_path, lab_path
