"""Dataset container, CSV ingestion, baseline injection, standardization and splitting."""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _rng

REGRESSION = "regression"
CLASSIFICATION = "classification"
TASKS = (REGRESSION, CLASSIFICATION)

BASELINE_NAME = "BASELINE"


class DataError(ValueError):
    """Raised for malformed or degenerate input data."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus target.

    For classification tasks ``target`` holds integer class codes indexing
    into ``classes``; for regression it holds floats and ``classes`` is empty.
    Arrays are copied and made read-only on construction.
    """

    features: np.ndarray
    target: np.ndarray
    feature_names: tuple
    task: str = REGRESSION
    classes: tuple = field(default=())

    def __post_init__(self):
        if self.task not in TASKS:
            raise DataError(f"unknown task {self.task!r}; expected one of {TASKS}")
        X = _frozen(self.features, np.float64)
        if X.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n, p = X.shape
        if n < 2:
            raise DataError(f"need at least 2 rows, got {n}")
        if p < 1:
            raise DataError("need at least 1 feature")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain missing or non-finite entries")
        names = tuple(str(s) for s in self.feature_names)
        if len(names) != p:
            raise DataError(f"{len(names)} feature names for {p} columns")
        if len(set(names)) != p:
            raise DataError("feature names must be unique")

        if self.task == CLASSIFICATION:
            y = _frozen(self.target, np.int64)
            classes = tuple(self.classes)
            if not classes:
                classes = tuple(range(int(y.max()) + 1)) if y.size else ()
            if y.size and (y.min() < 0 or y.max() >= len(classes)):
                raise DataError("class codes out of range")
            if len(np.unique(y)) < 2:
                raise DataError("classification target needs at least 2 distinct classes")
        else:
            y = _frozen(self.target, np.float64)
            classes = ()
            if not np.all(np.isfinite(y)):
                raise DataError("target contains missing or non-finite entries")
        if y.shape != (n,):
            raise DataError(f"target has shape {y.shape}, expected ({n},)")

        object.__setattr__(self, "features", X)
        object.__setattr__(self, "target", y)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "classes", classes)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def p(self):
        return self.features.shape[1]

    def index_of(self, feature):
        """Column index for a feature given by name or index."""
        if isinstance(feature, (int, np.integer)):
            j = int(feature)
            if not 0 <= j < self.p:
                raise KeyError(f"feature index {j} out of range for p={self.p}")
            return j
        try:
            return self.feature_names.index(feature)
        except ValueError:
            raise KeyError(f"unknown feature {feature!r}") from None

    def take(self, rows):
        """Dataset restricted to the given row indices (kept in the given order)."""
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.target[rows], self.feature_names,
                       self.task, self.classes)

    def with_features(self, features, feature_names=None):
        names = self.feature_names if feature_names is None else feature_names
        return Dataset(features, self.target, names, self.task, self.classes)

    def drop(self, feature):
        j = self.index_of(feature)
        keep = [k for k in range(self.p) if k != j]
        return self.with_features(self.features[:, keep],
                                  [self.feature_names[k] for k in keep])

    def to_csv(self, path, target_name="y"):
        """Write in the format read by :func:`load_csv` (target column first)."""
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([target_name, *self.feature_names])
            if self.task == CLASSIFICATION:
                labels = [str(self.classes[c]) for c in self.target]
            else:
                labels = [repr(float(v)) for v in self.target]
            for label, row in zip(labels, self.features):
                w.writerow([label, *(repr(float(v)) for v in row)])


def load_csv(path, target_column, task=REGRESSION):
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    Every column other than ``target_column`` must be numeric. Classification
    labels may be arbitrary strings; class codes follow the sorted labels.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DataError(f"{path} is empty")
    header, body = [h.strip() for h in rows[0]], rows[1:]
    if target_column not in header:
        raise DataError(f"target column {target_column!r} not in header of {path}")
    t = header.index(target_column)
    names = [h for k, h in enumerate(header) if k != t]
    X = np.empty((len(body), len(names)))
    labels = []
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DataError(f"{path}:{i + 2}: expected {len(header)} cells, got {len(r)}")
        labels.append(r[t].strip())
        cells = [c for k, c in enumerate(r) if k != t]
        for k, c in enumerate(cells):
            try:
                X[i, k] = float(c)
            except ValueError:
                raise DataError(
                    f"{path}:{i + 2}: non-numeric value {c!r} in column {names[k]!r}"
                ) from None
    if len(body) < 2:
        raise DataError(f"{path}: need at least 2 data rows, got {len(body)}")

    if task == CLASSIFICATION:
        classes = tuple(sorted(set(labels)))
        code = {c: k for k, c in enumerate(classes)}
        y = np.array([code[s] for s in labels])
        return Dataset(X, y, names, CLASSIFICATION, classes)
    try:
        y = np.array([float(s) for s in labels])
    except ValueError:
        raise DataError(f"{path}: non-numeric regression target") from None
    return Dataset(X, y, names, task)


def add_baseline(ds, seed):
    """Append an i.i.d. Uniform(0, 1) column named ``BASELINE``."""
    if BASELINE_NAME in ds.feature_names:
        raise DataError(f"dataset already has a {BASELINE_NAME!r} column")
    u = _rng.stream(seed, _rng.BASELINE).random(ds.n)
    return ds.with_features(np.column_stack([ds.features, u]),
                            [*ds.feature_names, BASELINE_NAME])


@dataclass(frozen=True)
class Scaling:
    """Per-feature location and scale; ``apply`` maps raw to standardized values."""

    mean: np.ndarray
    scale: np.ndarray
    feature_names: tuple

    def apply(self, ds):
        if ds.feature_names != self.feature_names:
            raise DataError("scaling was fitted on different features")
        return ds.with_features((ds.features - self.mean) / self.scale)

    def invert(self, ds):
        return ds.with_features(ds.features * self.scale + self.mean)


def standardize(ds):
    """Center each column to sample mean 0 and scale to sample sd 1.

    Returns the standardized dataset and the :class:`Scaling` used, so the
    same transform can be applied to a held-out split.
    """
    mean = ds.features.mean(axis=0)
    sd = ds.features.std(axis=0, ddof=1)
    # relative test: a column of identical floats can still show sd ~ 1e-16
    flat = sd <= 1e-12 * np.maximum(1.0, np.abs(mean))
    if flat.any():
        bad = [ds.feature_names[k] for k in np.flatnonzero(flat)]
        raise DataError(f"constant column(s) cannot be standardized: {', '.join(bad)}")
    scaling = Scaling(_frozen(mean, np.float64), _frozen(sd, np.float64), ds.feature_names)
    return scaling.apply(ds), scaling


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")


def split_indices(n, spec):
    """Disjoint sorted (train, test) row indices; train has floor(fraction * n) rows."""
    n_train = math.floor(spec.train_fraction * n)
    if n_train < 2 or n - n_train < 1:
        raise DataError(
            f"split of {n} rows at fraction {spec.train_fraction} leaves "
            f"{n_train} train / {n - n_train} test rows"
        )
    order = _rng.stream(spec.seed, _rng.SPLIT).permutation(n)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def split(ds, spec):
    """Random train/test split; deterministic given ``spec.seed``."""
    train, test = split_indices(ds.n, spec)
    return ds.take(train), ds.take(test)
