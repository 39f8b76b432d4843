"""Class-compactness scoring of learned representations.

Two silhouette implementations live here on purpose: a vectorized one built
on a full pairwise-distance matrix, and a naive per-point reference loop.
They share nothing but the convention that singleton clusters score 0, and
must agree to near machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .models import Classifier
from .synthetic import Dataset

__all__ = [
    "SilhouetteReport",
    "silhouette",
    "silhouette_oracle",
    "representation_snapshot",
    "save_snapshot_csv",
]


@dataclass(frozen=True)
class SilhouetteReport:
    scores: np.ndarray  # per point, in input order
    class_means: dict[int, float]
    overall: float


def _validate(points, labels):
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if points.ndim != 2 or len(points) != len(labels):
        raise ValueError("points must be n x d with one label per row")
    if len(points) < 3:
        raise ValueError("silhouette needs at least 3 points")
    if len(np.unique(labels)) < 2:
        raise ValueError("silhouette needs at least 2 distinct labels")
    return points, labels


def silhouette(points, labels) -> SilhouetteReport:
    """Per-point (b - a) / max(a, b) with Euclidean distances.

    a is the mean distance to the point's own cluster (self excluded); b is
    the smallest mean distance to any other cluster; singletons score 0.
    """
    points, labels = _validate(points, labels)
    n = len(points)
    classes = np.unique(labels)
    distances = cdist(points, points)

    # mean distance from every point to every cluster, in one matmul-like
    # pass: column-sum the distance matrix per cluster block
    sums = np.stack(
        [distances[:, labels == cls].sum(axis=1) for cls in classes], axis=1)
    counts = np.array([(labels == cls).sum() for cls in classes])

    scores = np.zeros(n)
    for j, cls in enumerate(classes):
        member = labels == cls
        if counts[j] == 1:
            continue  # singleton convention: score 0
        a = sums[member, j] / (counts[j] - 1)  # self distance is 0
        other = np.ones(len(classes), dtype=bool)
        other[j] = False
        b = (sums[member][:, other] / counts[other][None, :]).min(axis=1)
        scores[member] = (b - a) / np.maximum(a, b)

    class_means = {
        int(cls): float(scores[labels == cls].mean()) for cls in classes
    }
    return SilhouetteReport(scores, class_means, float(scores.mean()))


def silhouette_oracle(points, labels) -> float:
    """Reference silhouette: plain per-point loop, no shared machinery."""
    points, labels = _validate(points, labels)
    classes = sorted(set(int(v) for v in labels))
    total = 0.0
    for i in range(len(points)):
        deltas = points - points[i]
        dist_i = np.sqrt((deltas * deltas).sum(axis=1))
        own = int(labels[i])
        own_mask = labels == own
        own_count = int(own_mask.sum())
        if own_count == 1:
            continue  # contributes 0
        a = dist_i[own_mask].sum() / (own_count - 1)
        b = min(
            dist_i[labels == cls].mean() for cls in classes if cls != own)
        total += (b - a) / max(a, b)
    return total / len(points)


def representation_snapshot(classifier: Classifier, data: Dataset):
    """Raw and projected penultimate activations for every point, with
    labels; feeds both the compactness metrics and the scatter exports."""
    _, penultimate, normalized = classifier.forward(data.points)
    return penultimate.values, normalized.values, data.labels


def save_snapshot_csv(raw, normalized, labels, path) -> None:
    """Write `x0..xd,label,kind` rows, raw block first, then projected."""
    raw = np.asarray(raw)
    normalized = np.asarray(normalized)
    dim = raw.shape[1]
    header = ",".join(f"x{i}" for i in range(dim)) + ",label,kind"
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(header + "\n")
        for block, kind in ((raw, "raw"), (normalized, "norm")):
            for row, label in zip(block, labels):
                coords = ",".join(repr(float(v)) for v in row)
                fh.write(f"{coords},{int(label)},{kind}\n")
