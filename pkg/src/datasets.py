"""Synthetic toy datasets.

This module contains the Dataset class that handles:
- Generating gauss2, rings and bars images in the unit cube
- Train/test splits
- Compressed .npz persistence, optionally with robustified images
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from .constants import (
    BARS_NOISE,
    BARS_SIDE,
    GAUSS2_HIGH_MEAN,
    GAUSS2_LOW_MEAN,
    GAUSS2_STD,
    RINGS_INNER,
    RINGS_OUTER,
    TEST_FRACTION,
)

logger = logging.getLogger(__name__)

DATASET_KINDS = ("gauss2", "rings", "bars")


@dataclass
class Dataset:
    """Labeled images with disjoint train/test index sets."""

    images: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    kind: str = "custom"
    seed: int = 0
    num_classes: int = 2
    robustified: Optional[np.ndarray] = None
    metadata: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64)
        if self.images.ndim != 2 or self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"images {self.images.shape} and labels {self.labels.shape} do not line up"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("images must lie in the unit cube")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels out of range [0, {self.num_classes})")
        if np.intersect1d(self.train_idx, self.test_idx).size:
            raise ValueError("train and test splits overlap")

    @property
    def dim(self) -> int:
        """Image length."""
        return int(self.images.shape[1])

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def train_x(self) -> np.ndarray:
        """Training images."""
        return self.images[self.train_idx]

    @property
    def train_y(self) -> np.ndarray:
        """Training labels."""
        return self.labels[self.train_idx]

    @property
    def test_x(self) -> np.ndarray:
        """Test images."""
        return self.images[self.test_idx]

    @property
    def test_y(self) -> np.ndarray:
        """Test labels."""
        return self.labels[self.test_idx]

    def save(self, path: Union[str, Path]) -> None:
        """Write the dataset as a compressed .npz archive.

        Args:
            path: Destination file
        """
        meta = {"kind": self.kind, "seed": str(self.seed), **self.metadata}
        arrays = {
            "images": self.images,
            "labels": self.labels,
            "train_idx": self.train_idx,
            "test_idx": self.test_idx,
            "num_classes": np.array(self.num_classes),
            "metadata": np.array(json.dumps(meta, sort_keys=True)),
        }
        if self.robustified is not None:
            arrays["robustified"] = self.robustified
        np.savez_compressed(path, **arrays)
        logger.info("Saved %d examples to %s", len(self), path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Dataset":
        """Read a dataset written by save()."""
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["metadata"]))
            robustified = data["robustified"] if "robustified" in data.files else None
            return cls(
                images=data["images"],
                labels=data["labels"],
                train_idx=data["train_idx"],
                test_idx=data["test_idx"],
                kind=meta.pop("kind"),
                seed=int(meta.pop("seed")),
                num_classes=int(data["num_classes"]),
                robustified=robustified,
                metadata=meta,
            )


def _gauss2(n: int, dim: int, std: float, rng: np.random.Generator) -> np.ndarray:
    low = rng.normal(GAUSS2_LOW_MEAN, std, size=(n, dim))
    high = rng.normal(GAUSS2_HIGH_MEAN, std, size=(n, dim))
    return np.vstack([low, high])


def _rings(n: int, rng: np.random.Generator) -> np.ndarray:
    parts = []
    for low, high in (RINGS_INNER, RINGS_OUTER):
        radius = rng.uniform(low, high, size=n)
        angle = rng.uniform(0.0, 2.0 * math.pi, size=n)
        parts.append(0.5 + np.column_stack([radius * np.cos(angle), radius * np.sin(angle)]))
    return np.vstack(parts)


def _bars(n: int, rng: np.random.Generator) -> np.ndarray:
    parts = []
    for axis in (0, 1):
        grids = np.zeros((n, BARS_SIDE, BARS_SIDE))
        lines = rng.integers(0, BARS_SIDE, size=n)
        for i, line in enumerate(lines):
            if axis == 0:
                grids[i, line, :] = 1.0
            else:
                grids[i, :, line] = 1.0
        noise = rng.uniform(-BARS_NOISE, BARS_NOISE, size=grids.shape)
        parts.append((grids + noise).reshape(n, BARS_SIDE * BARS_SIDE))
    return np.vstack(parts)


def gen_dataset(
    kind: str,
    n_per_class: int,
    dim: int,
    seed: int,
    std: float = GAUSS2_STD,
) -> Dataset:
    """Generate a two-class toy dataset.

    gauss2: blobs at 0.35 and 0.65 per coordinate. rings: two annuli around
    the center of the unit square (dim 2). bars: 4x4 horizontal vs vertical
    bars with uniform noise (dim 16). All images are clipped to the unit cube.

    Args:
        kind: "gauss2", "rings" or "bars"
        n_per_class: Examples per class, >= 0
        dim: Image length
        seed: Generator seed
        std: gauss2 blob standard deviation

    Returns:
        Dataset whose test split is the first quarter of a seeded permutation
    """
    if kind not in DATASET_KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    if n_per_class < 0:
        raise ValueError(f"n_per_class must be >= 0, got {n_per_class}")
    if kind == "rings" and dim != 2:
        raise ValueError(f"rings needs dim 2, got {dim}")
    if kind == "bars" and dim != BARS_SIDE * BARS_SIDE:
        raise ValueError(f"bars needs dim {BARS_SIDE * BARS_SIDE}, got {dim}")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")

    rng = np.random.default_rng(seed)
    if kind == "gauss2":
        raw = _gauss2(n_per_class, dim, std, rng)
    elif kind == "rings":
        raw = _rings(n_per_class, rng)
    else:
        raw = _bars(n_per_class, rng)
    images = np.clip(raw, 0.0, 1.0)
    labels = np.repeat(np.arange(2), n_per_class)

    order = rng.permutation(labels.shape[0])
    n_test = int(math.ceil(TEST_FRACTION * labels.shape[0]))
    logger.info("Generated %s dataset: %d examples, dim %d", kind, labels.shape[0], dim)
    return Dataset(
        images=images,
        labels=labels,
        train_idx=np.sort(order[n_test:]),
        test_idx=np.sort(order[:n_test]),
        kind=kind,
        seed=seed,
        metadata={"dim": str(dim), "n_per_class": str(n_per_class)},
    )
