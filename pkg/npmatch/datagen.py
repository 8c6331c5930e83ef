# npmatch/datagen.py
"""Synthetic 2-D datasets, labeled/unlabeled/test splits and the weak/strong augmentation pair."""

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np

from npmatch.errors import DimensionMismatchError, InvalidParameterError

logger = logging.getLogger(__name__)

WEAK_SIGMA = 0.02
STRONG_SIGMA = 0.15
STRONG_DROPOUT = 0.1

Strength = Literal["weak", "strong"]


@dataclass(frozen=True)
class LabeledSet:
    points: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if points.ndim != 2 or labels.shape != (points.shape[0],):
            raise DimensionMismatchError(
                f"Points {points.shape} and labels {labels.shape} do not describe one set"
            )
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.size

    def take(self, indices) -> "LabeledSet":
        return LabeledSet(self.points[indices], self.labels[indices])


@dataclass(frozen=True, eq=False)
class Dataset:
    """Points with class ids and three disjoint masks (labeled, unlabeled, test)."""

    points: np.ndarray
    labels: np.ndarray
    num_classes: int
    labeled_mask: Optional[np.ndarray] = None
    unlabeled_mask: Optional[np.ndarray] = None
    test_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.points.shape[0]
        if self.labels.shape != (n,):
            raise DimensionMismatchError("Labels must have one entry per point")
        if self.labeled_mask is None:
            # unsplit: every point counts as unlabeled
            object.__setattr__(self, "labeled_mask", np.zeros(n, dtype=bool))
            object.__setattr__(self, "unlabeled_mask", np.ones(n, dtype=bool))
            object.__setattr__(self, "test_mask", np.zeros(n, dtype=bool))
        masks = np.vstack([self.labeled_mask, self.unlabeled_mask, self.test_mask]).astype(int)
        if masks.shape != (3, n) or np.any(masks.sum(axis=0) != 1):
            raise InvalidParameterError("Split masks must partition the dataset indices")

    def __len__(self) -> int:
        return self.labels.size

    @property
    def is_split(self) -> bool:
        return bool(self.labeled_mask.any())

    def labeled(self) -> LabeledSet:
        return LabeledSet(self.points[self.labeled_mask], self.labels[self.labeled_mask])

    def unlabeled_points(self) -> np.ndarray:
        return self.points[self.unlabeled_mask]

    def test(self) -> LabeledSet:
        return LabeledSet(self.points[self.test_mask], self.labels[self.test_mask])

    def split_names(self) -> np.ndarray:
        names = np.full(len(self), "unlabeled", dtype=object)
        names[self.labeled_mask] = "labeled"
        names[self.test_mask] = "test"
        return names


def _shuffled(points: np.ndarray, labels: np.ndarray, rng: np.random.Generator, num_classes: int) -> Dataset:
    order = rng.permutation(labels.size)
    return Dataset(points=points[order], labels=labels[order], num_classes=num_classes)


def two_moons(n: int, noise: float, seed) -> Dataset:
    """Two interleaving half circles: outer (cos t, sin t), inner (1 - cos t, 0.5 - sin t)."""
    if n < 4:
        raise InvalidParameterError(f"two_moons needs n >= 4 points, got {n}")
    if noise < 0:
        raise InvalidParameterError(f"Noise must be >= 0, got {noise}")
    n_outer = n // 2
    n_inner = n - n_outer
    theta_outer = np.linspace(0.0, np.pi, n_outer)
    theta_inner = np.linspace(0.0, np.pi, n_inner)
    points = np.vstack(
        [
            np.column_stack([np.cos(theta_outer), np.sin(theta_outer)]),
            np.column_stack([1.0 - np.cos(theta_inner), 1.0 - np.sin(theta_inner) - 0.5]),
        ]
    )
    labels = np.concatenate([np.zeros(n_outer, dtype=np.int64), np.ones(n_inner, dtype=np.int64)])
    rng = np.random.default_rng(seed)
    if noise > 0:
        points = points + noise * rng.standard_normal(points.shape)
    return _shuffled(points, labels, rng, num_classes=2)


def gaussian_blobs(n: int, k: int, spread: float, seed, radius: float = 5.0) -> Dataset:
    """k isotropic blobs with centers evenly spaced on a circle of the given radius."""
    if k < 2:
        raise InvalidParameterError(f"gaussian_blobs needs k >= 2 classes, got {k}")
    if n < 2 * k:
        raise InvalidParameterError(f"gaussian_blobs needs n >= 2k = {2 * k}, got {n}")
    if spread < 0:
        raise InvalidParameterError(f"Spread must be >= 0, got {spread}")
    centers = blob_centers(k, radius)
    counts = np.full(k, n // k)
    counts[: n % k] += 1
    labels = np.repeat(np.arange(k, dtype=np.int64), counts)
    rng = np.random.default_rng(seed)
    points = centers[labels] + spread * rng.standard_normal((n, 2))
    return _shuffled(points, labels, rng, num_classes=k)


def blob_centers(k: int, radius: float = 5.0) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(k) / k
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


def split(dataset: Dataset, labels_per_class: int, test_fraction: float, seed) -> Dataset:
    """Per class: round(test_fraction * n_c) test points, exactly k labeled, the rest unlabeled."""
    if labels_per_class < 1:
        raise InvalidParameterError(f"labels_per_class must be >= 1, got {labels_per_class}")
    if not 0.0 <= test_fraction < 1.0:
        raise InvalidParameterError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    n = len(dataset)
    labeled = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    for c in range(dataset.num_classes):
        members = rng.permutation(np.flatnonzero(dataset.labels == c))
        n_test = int(round(test_fraction * members.size))
        if n_test + labels_per_class > members.size:
            raise InvalidParameterError(
                f"Class {c} has {members.size} points, too few for {n_test} test "
                f"and {labels_per_class} labeled",
                {"class": c},
            )
        test[members[:n_test]] = True
        labeled[members[n_test:n_test + labels_per_class]] = True
    logger.info(
        f"[datagen] split {n} points: {int(labeled.sum())} labeled, "
        f"{int(n - labeled.sum() - test.sum())} unlabeled, {int(test.sum())} test"
    )
    return replace(dataset, labeled_mask=labeled, unlabeled_mask=~(labeled | test), test_mask=test)


def augment(
    points: np.ndarray,
    strength: Strength,
    seed: int,
    weak_sigma: float = WEAK_SIGMA,
    strong_sigma: float = STRONG_SIGMA,
    dropout: float = STRONG_DROPOUT,
) -> np.ndarray:
    """Weak view: Gaussian jitter. Strong view: larger jitter plus per-coordinate dropout to zero.

    Noise for row i depends only on (seed, i): jitter and dropout use separate streams.
    """
    points = np.asarray(points, dtype=np.float64)
    if strength not in ("weak", "strong"):
        raise InvalidParameterError(f"Unknown augmentation strength '{strength}'")
    jitter = np.random.default_rng([seed, 0]).standard_normal(points.shape)
    if strength == "weak":
        return points + weak_sigma * jitter
    out = points + strong_sigma * jitter
    dropped = np.random.default_rng([seed, 1]).random(points.shape) < dropout
    out[dropped] = 0.0
    return out


def export_csv(dataset: Dataset, path: Union[str, Path]) -> Path:
    """Write x1, x2, label, split rows; returns the path written."""
    if dataset.points.shape[1] != 2:
        raise DimensionMismatchError("CSV export supports 2-D points only")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = dataset.split_names()
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["x1", "x2", "label", "split"])
        writer.writeheader()
        for (x1, x2), label, name in zip(dataset.points, dataset.labels, names):
            writer.writerow({"x1": repr(float(x1)), "x2": repr(float(x2)), "label": int(label), "split": name})
    logger.info(f"[datagen] exported {len(dataset)} points to {path}")
    return path
