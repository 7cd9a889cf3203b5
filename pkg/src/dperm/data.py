"""Dataset ingestion, unit-ball scaling, and reproducible train/test splits.

Feature rows live in the closed Euclidean unit ball once `normalize` has
been applied; labels are strictly +/-1. Datasets are immutable values
(arrays are locked after construction), so they can be shared freely
across threads.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources

import numpy as np

__all__ = [
    "Dataset",
    "SplitSpec",
    "load_csv",
    "normalize",
    "split",
    "builtin_dataset",
    "gaussian_blobs",
    "noisy_margin",
    "BUILTIN_DATASETS",
]


def _locked(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def row_norms(features: np.ndarray) -> np.ndarray:
    """Euclidean norm of every row."""
    return np.sqrt(np.einsum("ij,ij->i", features, features))


@dataclass(frozen=True)
class Dataset:
    """n labelled feature vectors.

    Labels must be exactly +1 or -1 and n must be at least 2 (downstream
    noise calibration divides by n(n-1)). Rows are only guaranteed to lie
    in the unit ball after `normalize`; perturbed datasets may leave it.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"features must be a 2-D matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError(
                f"labels shape {y.shape} does not match {X.shape[0]} feature rows"
            )
        if X.shape[0] < 2:
            raise ValueError("a dataset needs at least 2 rows")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite values")
        bad = ~np.isin(y, (-1.0, 1.0))
        if bad.any():
            raise ValueError(f"labels must be +1 or -1, got {y[bad][0]!r}")
        names = self.feature_names
        if names is not None:
            names = tuple(str(c) for c in names)
            if len(names) != X.shape[1]:
                raise ValueError(
                    f"{len(names)} feature names for {X.shape[1]} columns"
                )
        object.__setattr__(self, "features", _locked(X))
        object.__setattr__(self, "labels", _locked(y))
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def take(self, indices) -> "Dataset":
        """New dataset from a row subset (in the given order)."""
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.features[idx], self.labels[idx], self.feature_names)


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic split recipe: (dataset, test_fraction, seed) -> partition."""

    test_fraction: float
    seed: int

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must be in (0,1), got {self.test_fraction}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def load_csv(path, label_column, positive_label: str) -> Dataset:
    """Read a UTF-8, comma-separated, header-first CSV into a Dataset.

    `label_column` selects by header name or zero-based index. Labels map
    to +1 exactly where the raw cell equals `positive_label`, else -1.
    Every other column must parse as a finite real; missing or malformed
    cells raise with the offending line and column named. Features are
    returned unscaled -- call `normalize` before training.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        return _parse_csv(fh, str(path), label_column, positive_label)


def _parse_csv(fh, source: str, label_column, positive_label: str) -> Dataset:
    reader = csv.reader(fh)
    header = next(reader, None)
    if not header:
        raise ValueError(f"{source}: empty file (expected a header row)")

    if isinstance(label_column, int):
        if not 0 <= label_column < len(header):
            raise ValueError(
                f"{source}: label column index {label_column} out of range "
                f"for {len(header)} columns"
            )
        label_idx = label_column
    else:
        try:
            label_idx = header.index(str(label_column))
        except ValueError:
            raise ValueError(
                f"{source}: no column named {label_column!r} in header {header}"
            ) from None

    feature_names = tuple(c for j, c in enumerate(header) if j != label_idx)
    rows: list[list[float]] = []
    labels: list[float] = []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue  # tolerate trailing blank lines
        if len(row) != len(header):
            raise ValueError(
                f"{source}: line {line_no} has {len(row)} cells, expected {len(header)}"
            )
        feats = []
        for j, cell in enumerate(row):
            if j == label_idx:
                labels.append(1.0 if cell == positive_label else -1.0)
                continue
            try:
                value = float(cell)
            except ValueError:
                raise ValueError(
                    f"{source}: line {line_no}, column {header[j]!r}: "
                    f"could not parse {cell!r} as a number"
                ) from None
            if not np.isfinite(value):
                raise ValueError(
                    f"{source}: line {line_no}, column {header[j]!r}: "
                    f"non-finite value {cell!r}"
                )
            feats.append(value)
        rows.append(feats)

    if len(rows) < 2:
        raise ValueError(f"{source}: got {len(rows)} data rows, need at least 2")
    return Dataset(np.array(rows), np.array(labels), feature_names)


def normalize(dataset: Dataset) -> Dataset:
    """Scale all rows by one global factor so every row norm is <= 1.

    The factor is 1/max(1, max_i ||x_i||), identical for every row, so
    relative geometry (pairwise cosines, norm ratios) is preserved.
    Already-conforming datasets are returned unchanged, which makes the
    operation bit-exactly idempotent.
    """
    X = dataset.features
    # Rescale until the recomputed max norm is <= 1; a single division can
    # overshoot by an ulp, so re-check instead of trusting one pass.
    for _ in range(4):
        largest = float(row_norms(X).max())
        if largest <= 1.0:
            break
        X = X / largest
    if X is dataset.features:
        return dataset
    return Dataset(X, dataset.labels, dataset.feature_names)


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive train/test partition, deterministic in the seed.

    Row order within each side follows the original dataset, so the split
    is a pure function of (dataset, test_fraction, seed).
    """
    n = dataset.n
    n_test = int(round(n * spec.test_fraction))
    n_train = n - n_test
    if n_train < 2:
        raise ValueError(
            f"test_fraction={spec.test_fraction} leaves {n_train} training rows; need >= 2"
        )
    if n_test < 2:
        raise ValueError(
            f"test_fraction={spec.test_fraction} leaves {n_test} test rows; need >= 2"
        )
    perm = np.random.default_rng(spec.seed).permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return dataset.take(train_idx), dataset.take(test_idx)


# ---------------------------------------------------------------------------
# Desk-scale dataset roster: two bundled CSVs plus two synthetic generators.
# ---------------------------------------------------------------------------

# name -> (file, label column, positive label)
_BUILTIN_FILES = {
    "iris": ("iris.csv", "species", "setosa"),
    "breast_cancer": ("wdbc.csv", "diagnosis", "M"),
}
BUILTIN_DATASETS = tuple(_BUILTIN_FILES)


def builtin_dataset(name: str) -> Dataset:
    """Load a bundled CSV (`iris` binarized setosa-vs-rest, `breast_cancer`
    malignant-vs-benign). Returned unnormalized, like `load_csv`."""
    try:
        fname, label, positive = _BUILTIN_FILES[name]
    except KeyError:
        raise ValueError(
            f"unknown builtin dataset {name!r}; available: {BUILTIN_DATASETS}"
        ) from None
    text = resources.files("dperm").joinpath("datasets", fname).read_text(encoding="utf-8")
    return _parse_csv(io.StringIO(text), f"builtin:{name}", label, positive)


def gaussian_blobs(
    n: int, dim: int, seed: int, separation: float = 3.0, spread: float = 0.5
) -> Dataset:
    """Two linearly separable Gaussian clusters with balanced +/-1 labels.

    Class means sit at +/-(separation/2) along a random unit direction;
    points scatter isotropically with the given spread. Unnormalized.
    """
    if n < 2 or dim < 1:
        raise ValueError("need n >= 2 and dim >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x0B10B5]))
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    labels = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    X = labels[:, None] * (separation / 2.0) * direction[None, :]
    X = X + spread * rng.normal(size=(n, dim))
    return Dataset(X, labels)


def noisy_margin(
    n: int, dim: int, seed: int, flip_fraction: float = 0.1
) -> Dataset:
    """Linear-margin labels y = sign(w.x) with a fraction of labels flipped."""
    if n < 2 or dim < 1:
        raise ValueError("need n >= 2 and dim >= 1")
    if not 0.0 <= flip_fraction < 0.5:
        raise ValueError("flip_fraction must be in [0, 0.5)")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x3A261]))
    w = rng.normal(size=dim)
    w /= np.linalg.norm(w)
    X = rng.normal(size=(n, dim))
    y = np.where(X @ w >= 0.0, 1.0, -1.0)
    flips = rng.random(n) < flip_fraction
    y = np.where(flips, -y, y)
    return Dataset(X, y)
