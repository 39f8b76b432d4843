"""Two-class Gaussian-mixture test bed with a known Bayes-optimal reference.

The generating distribution is fully specified, so the Bayes classifier is
available in closed form and any trained model can be scored by how often it
disagrees with it under the data distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "GmmComponent",
    "GmmSpec",
    "Dataset",
    "poc_spec",
    "sample",
    "log_density",
    "bayes_predict",
    "bayes_deviation",
    "save_dataset_csv",
    "load_dataset_csv",
]

# fixed block size for deviation sampling: each block derives its own RNG
# stream from (seed, block index), so the estimate is independent of how
# blocks are distributed over workers
_DEVIATION_BLOCK = 8192


@dataclass(frozen=True)
class GmmComponent:
    mean: tuple[float, ...]
    variance: tuple[float, ...]  # diagonal covariance entries
    weight: float


@dataclass(frozen=True)
class GmmSpec:
    """Per-class mixture components plus class priors."""

    classes: tuple[tuple[GmmComponent, ...], ...]
    priors: tuple[float, ...]

    def __post_init__(self):
        if len(self.classes) != len(self.priors):
            raise ValueError("one prior per class required")
        if abs(sum(self.priors) - 1.0) > 1e-12:
            raise ValueError("class priors must sum to 1")
        for components in self.classes:
            if abs(sum(c.weight for c in components) - 1.0) > 1e-12:
                raise ValueError("component weights must sum to 1 per class")
            for c in components:
                if any(v <= 0.0 for v in c.variance):
                    raise ValueError("component variances must be positive")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def dim(self) -> int:
        return len(self.classes[0][0].mean)


@dataclass(frozen=True)
class Dataset:
    """Sampled labeled points; regeneration from (spec, seed, n) is bitwise
    reproducible."""

    points: np.ndarray
    labels: np.ndarray
    seed: int

    def __post_init__(self):
        if self.points.ndim != 2 or len(self.points) != len(self.labels):
            raise ValueError("points must be n x d with one label per row")
        if len(self.points) == 0:
            raise ValueError("dataset must be non-empty")

    def __len__(self) -> int:
        return len(self.points)


def poc_spec() -> GmmSpec:
    """The two-class, four-component planar mixture used throughout.

    Class 0 concentrates in the second and fourth quadrants, class 1 in the
    first and third; per-axis variance 1.2 everywhere, equal priors.
    """
    var = (1.2, 1.2)
    return GmmSpec(
        classes=(
            (
                GmmComponent(mean=(-1.5, 1.5), variance=var, weight=0.5),
                GmmComponent(mean=(1.5, -1.5), variance=var, weight=0.5),
            ),
            (
                GmmComponent(mean=(-1.5, -1.5), variance=var, weight=0.5),
                GmmComponent(mean=(1.5, 1.5), variance=var, weight=0.5),
            ),
        ),
        priors=(0.5, 0.5),
    )


def _sample_class(spec: GmmSpec, cls: int, n: int,
                  rng: np.random.Generator) -> np.ndarray:
    components = spec.classes[cls]
    weights = np.array([c.weight for c in components])
    choice = rng.choice(len(components), size=n, p=weights)
    means = np.array([c.mean for c in components])
    stds = np.sqrt(np.array([c.variance for c in components]))
    return means[choice] + stds[choice] * rng.standard_normal((n, spec.dim))


def sample(spec: GmmSpec, n_per_class: int, seed: int) -> Dataset:
    """Draw exactly n_per_class points from each class, deterministically."""
    if n_per_class <= 0:
        raise ValueError("n_per_class must be positive")
    rng = np.random.default_rng(seed)
    blocks, labels = [], []
    for cls in range(spec.num_classes):
        blocks.append(_sample_class(spec, cls, n_per_class, rng))
        labels.append(np.full(n_per_class, cls, dtype=np.int64))
    return Dataset(np.concatenate(blocks), np.concatenate(labels), seed)


def log_density(spec: GmmSpec, points, cls: int) -> np.ndarray:
    """Log mixture density of one class at the given points (log-sum-exp)."""
    if not 0 <= cls < spec.num_classes:
        raise ValueError(f"class {cls} out of range")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    components = spec.classes[cls]
    terms = np.empty((len(points), len(components)))
    for j, c in enumerate(components):
        mean = np.asarray(c.mean)
        var = np.asarray(c.variance)
        quad = ((points - mean) ** 2 / var).sum(axis=1)
        log_norm = 0.5 * (len(mean) * math.log(2.0 * math.pi)
                          + np.log(var).sum())
        terms[:, j] = math.log(c.weight) - 0.5 * quad - log_norm
    return logsumexp(terms, axis=1)


def _log_posteriors(spec: GmmSpec, points) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    scores = np.empty((len(points), spec.num_classes))
    for cls in range(spec.num_classes):
        scores[:, cls] = math.log(spec.priors[cls]) + log_density(
            spec, points, cls)
    return scores


def bayes_predict(spec: GmmSpec, points) -> np.ndarray:
    """Most probable class under the generating distribution; ties resolve
    to the lowest class index."""
    single = np.asarray(points).ndim == 1
    pred = np.argmax(_log_posteriors(spec, points), axis=1)
    return int(pred[0]) if single else pred


def _sample_mixture_block(spec: GmmSpec, n: int,
                          rng: np.random.Generator) -> np.ndarray:
    cls = rng.choice(spec.num_classes, size=n, p=np.asarray(spec.priors))
    points = np.empty((n, spec.dim))
    for c in range(spec.num_classes):
        mask = cls == c
        if mask.any():
            points[mask] = _sample_class(spec, c, int(mask.sum()), rng)
    return points


def bayes_deviation(spec: GmmSpec, classifier, n_samples: int = 100_000,
                    seed: int = 0, jobs: int = 1) -> tuple[float, float]:
    """Monte Carlo probability that `classifier` disagrees with the Bayes
    rule on a fresh draw from the distribution.

    Returns (estimate, binomial standard error). Points are drawn in fixed
    blocks whose RNG streams derive from (seed, block index), so the result
    is bitwise identical no matter how many workers evaluate the blocks.
    """
    if n_samples < 1000:
        raise ValueError("need at least 1000 samples for a usable estimate")
    n_blocks = (n_samples + _DEVIATION_BLOCK - 1) // _DEVIATION_BLOCK

    def eval_block(index: int) -> int:
        size = min(_DEVIATION_BLOCK, n_samples - index * _DEVIATION_BLOCK)
        rng = np.random.default_rng([seed, index])
        points = _sample_mixture_block(spec, size, rng)
        return int(np.sum(
            np.asarray(classifier(points)) != bayes_predict(spec, points)))

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            disagreements = sum(pool.map(eval_block, range(n_blocks)))
    else:
        disagreements = sum(eval_block(i) for i in range(n_blocks))

    estimate = disagreements / n_samples
    std_error = math.sqrt(max(estimate * (1.0 - estimate), 0.0) / n_samples)
    return estimate, std_error


# --- CSV round trip -------------------------------------------------------


def save_dataset_csv(dataset: Dataset, path) -> None:
    """Write `x0,..,xd,label` rows; floats as shortest round-trip decimals."""
    dim = dataset.points.shape[1]
    header = ",".join(f"x{i}" for i in range(dim)) + ",label"
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(header + "\n")
        for row, label in zip(dataset.points, dataset.labels):
            coords = ",".join(repr(float(v)) for v in row)
            fh.write(f"{coords},{int(label)}\n")


def load_dataset_csv(path) -> Dataset:
    """Read a dataset written by save_dataset_csv (or any d-column + label
    table in the same schema)."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        if header[-1] != "label" or any(
            name != f"x{i}" for i, name in enumerate(header[:-1])
        ):
            raise ValueError(f"unrecognized dataset header: {header}")
        points, labels = [], []
        for line in fh:
            parts = line.strip().split(",")
            points.append([float(v) for v in parts[:-1]])
            labels.append(int(parts[-1]))
    return Dataset(
        np.asarray(points, dtype=np.float64),
        np.asarray(labels, dtype=np.int64),
        seed=-1,
    )
