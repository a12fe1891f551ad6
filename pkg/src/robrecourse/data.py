"""Datasets: CSV ingestion, standardization and SCM-based synthesis."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .actions import FeasibilitySpec
from .scm import Scm

_MISSING = {"", "na", "nan", "null", "none", "?"}


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    """Standardized feature matrix with binary labels.

    ``mean``/``std`` map raw units to the stored standardized units;
    ``scm`` (when present) is expressed in standardized units.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: list
    mean: np.ndarray
    std: np.ndarray
    scm: Scm | None = None
    seed: int | None = None
    source: str = ""
    train_index: np.ndarray | None = None
    test_index: np.ndarray | None = None
    categories: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.size:
            raise DataError("features must be (rows, n) with one label per row")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise DataError("labels must be 0/1")

    def __len__(self):
        return self.labels.size

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.labels[idx], list(self.feature_names), self.mean, self.std,
                       self.scm, self.seed, self.source, categories=self.categories)

    def split(self, seed: int, train_frac: float = 0.8) -> tuple["Dataset", "Dataset"]:
        tr, te = split_indices(len(self), seed, train_frac)
        return self.subset(tr), self.subset(te)

    def destandardize(self, z):
        return destandardize(z, self.mean, self.std)

    def standardize(self, x):
        return standardize(x, self.mean, self.std)

    def manifest(self) -> dict:
        return {
            "source": self.source,
            "rows": len(self),
            "feature_names": list(self.feature_names),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "seed": self.seed,
            "categories": self.categories,
        }

    def save_manifest(self, path):
        with open(path, "w") as fh:
            json.dump(self.manifest(), fh, indent=2)


def standardize(x, mean, std):
    return (np.asarray(x, dtype=np.float64) - mean) / std


def destandardize(z, mean, std):
    return np.asarray(z, dtype=np.float64) * std + mean


def split_indices(n: int, seed: int, train_frac: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic train/test partition of ``range(n)``."""
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    k = int(round(train_frac * n))
    return np.sort(perm[:k]), np.sort(perm[k:])


def _column_stats(X, names):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    for j, s in enumerate(std):
        if not s > 0:
            raise DataError(f"column {names[j]!r} is constant; cannot standardize")
    return mean, std


# ---------------------------------------------------------------------------
# CSV


def load_csv(path, label_column: str, actionability_path=None, seed: int = 0, train_frac: float = 0.8,
             standardization: tuple | None = None):
    """Read a CSV with a header row into a standardized :class:`Dataset`.

    Non-numeric columns are mapped to integer codes (sorted category order)
    and then treated as real-valued.  Standardization statistics come from
    the training split unless ``standardization=(mean, std)`` is given.
    Returns ``(dataset, feasibility)``; feasibility bounds are converted to
    standardized units.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if label_column not in header:
        raise DataError(f"{path}: label column {label_column!r} not found")
    missing = [i + 1 for i, r in enumerate(body)
               if len(r) != len(header) or any(v.strip().lower() in _MISSING for v in r)]
    if missing:
        raise DataError(f"{path}: missing values in data rows {missing}")
    li = header.index(label_column)
    try:
        y = np.array([float(r[li]) for r in body])
    except ValueError:
        raise DataError(f"{path}: label column {label_column!r} is not numeric") from None
    if not np.all((y == 0) | (y == 1)):
        raise DataError(f"{path}: label column {label_column!r} is not binary 0/1")
    names = [h for j, h in enumerate(header) if j != li]
    cols, categories = [], {}
    for j, h in enumerate(header):
        if j == li:
            continue
        raw = [r[j].strip() for r in body]
        try:
            cols.append([float(v) for v in raw])
        except ValueError:
            levels = sorted(set(raw))
            categories[h] = levels
            code = {v: k for k, v in enumerate(levels)}
            cols.append([float(code[v]) for v in raw])
    X = np.array(cols, dtype=np.float64).T.reshape(len(body), len(names))
    tr, te = split_indices(len(body), seed, train_frac)
    if standardization is None:
        mean, std = _column_stats(X[tr], names)
    else:
        mean, std = (np.asarray(a, dtype=np.float64) for a in standardization)
    ds = Dataset(standardize(X, mean, std), y.astype(np.int64), names, mean, std, None, seed,
                 str(path), tr, te, categories)
    if actionability_path is not None:
        feas = FeasibilitySpec.load(actionability_path)
        if feas.names != names:
            raise DataError(f"actionability names {feas.names} do not match CSV columns {names}")
        feas = feas.standardized(mean, std)
    else:
        feas = FeasibilitySpec.all_free(len(names), names)
    return ds, feas


# ---------------------------------------------------------------------------
# synthesis


@dataclass(frozen=True)
class Labeler:
    """Ground-truth rule ``y = 1{score(z) >= 0}`` on standardized features.

    ``score`` defaults to the affine map ``<weights, z> + bias``; labels are
    flipped independently with probability ``noise_rate``.
    """

    weights: tuple = ()
    bias: float = 0.0
    noise_rate: float = 0.0
    score: Callable | None = None

    def __post_init__(self):
        if not 0 <= self.noise_rate <= 0.5:
            raise ValueError("noise_rate must lie in [0, 0.5]")

    def evaluate(self, z):
        if self.score is not None:
            return np.asarray(self.score(z), dtype=np.float64)
        return z @ np.asarray(self.weights, dtype=np.float64) + self.bias


def synthesize(scm: Scm, n_samples: int = 1000, labeler: Labeler | None = None, seed: int = 0,
               name: str = "synthetic") -> Dataset:
    """Sample a labeled population from ``scm`` and standardize it.

    The returned dataset carries the SCM re-expressed in standardized units,
    so counterfactuals computed on stored features are exact.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    labeler = labeler or Labeler(tuple([1.0] * scm.n))
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((n_samples, scm.n))
    x = np.asarray(scm.generate(u))
    if not np.all(np.isfinite(x)):
        raise DataError("SCM produced non-finite samples")
    mean, std = _column_stats(x, scm.feature_names)
    z = standardize(x, mean, std)
    y = (labeler.evaluate(z) >= 0).astype(np.int64)
    if labeler.noise_rate > 0:
        flip = rng.random(n_samples) < labeler.noise_rate
        y = np.where(flip, 1 - y, y)
    return Dataset(z, y, list(scm.feature_names), mean, std, scm.standardized(mean, std), seed, name)
