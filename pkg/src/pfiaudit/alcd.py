"""Minkowski distances and average leaf-community distances (ALCD)."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from . import _rng
from .data import BASELINE_NAME


class AlcdError(ValueError):
    pass


@dataclass(frozen=True)
class Metric:
    """Minkowski metric of order ``exponent``; orders below 1 are allowed."""

    exponent: float = 2.0

    def __post_init__(self):
        if not self.exponent > 0:
            raise AlcdError(f"Minkowski exponent must be positive, got {self.exponent}")


EUCLIDEAN = Metric(2.0)


def minkowski(x, y, metric=EUCLIDEAN):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise AlcdError(f"length mismatch: {x.shape} vs {y.shape}")
    e = metric.exponent
    return float(np.sum(np.abs(x - y) ** e) ** (1.0 / e))


def pairwise(A, B, metric=EUCLIDEAN, chunk=4096):
    """Distance matrix between the rows of ``A`` (m x p) and ``B`` (n x p)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        raise AlcdError("row dimensions differ")
    e = metric.exponent
    out = np.empty((A.shape[0], B.shape[0]))
    step = max(1, chunk * 64 // max(B.size, 1))
    for s in range(0, A.shape[0], step):
        diff = np.abs(A[s:s + step, None, :] - B[None, :, :])
        if e == 2.0:
            out[s:s + step] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        elif e == 1.0:
            out[s:s + step] = diff.sum(axis=2)
        else:
            out[s:s + step] = (diff ** e).sum(axis=2) ** (1.0 / e)
    return out


@njit(cache=True)
def _pooled(leaves, comm_ptr, comm_idx, D):
    m, t = leaves.shape
    out = np.empty(m)
    for i in range(m):
        total = 0.0
        size = 0
        for k in range(t):
            node = leaves[i, k]
            a = comm_ptr[node]
            b = comm_ptr[node + 1]
            for q in range(a, b):
                total += D[i, comm_idx[q]]
            size += b - a
        out[i] = total / size
    return out


def alcd_rows(forest, X, train_features, metric=EUCLIDEAN):
    """ALCD of every row of ``X``.

    Total distance to the leaf communities over all trees, divided by the total
    community size over all trees (a pooled mean, not a mean of tree means).
    """
    X = forest._check(X)
    train_features = np.asarray(train_features, dtype=np.float64)
    if train_features.shape != (forest.n_train, forest.n_features):
        raise AlcdError("train_features do not match the rows the forest was fitted on")
    pk = forest._packed
    D = pairwise(X, train_features, metric)
    return _pooled(forest.apply(X), pk["comm_ptr"], pk["comm_idx"], D)


def point_alcd(forest, x, train_features, metric=EUCLIDEAN):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (forest.n_features,):
        raise AlcdError(f"expected a vector of {forest.n_features} features, got {x.shape}")
    return float(alcd_rows(forest, x[None, :], train_features, metric)[0])


def permuted_alcd(forest, eval_set, train_features, feature, repetitions, metric=EUCLIDEAN,
                  seed=0, permutations=None):
    """ALCDs of the evaluation rows after permuting one column, per repetition.

    Repetition ``r`` permutes column ``feature`` with the stream keyed
    ``(seed, feature, r)``. ``permutations`` (R x m) overrides the draws.

    Returns
    -------
    ndarray of shape (repetitions, m)
    """
    j = eval_set.index_of(feature)
    m = eval_set.n
    if m == 0:
        raise AlcdError("empty evaluation set")
    if repetitions < 1:
        raise AlcdError("need at least one repetition")
    X = np.array(eval_set.features)
    out = np.empty((repetitions, m))
    for r in range(repetitions):
        perm = (_rng.feature_permutation(seed, j, r, m) if permutations is None
                else np.asarray(permutations[r]))
        Xp = X.copy()
        Xp[:, j] = X[perm, j]
        out[r] = alcd_rows(forest, Xp, train_features, metric)
    return out


@dataclass(frozen=True, eq=False)
class AlcdTable:
    """ALCD values indexed ``(feature, repetition, evaluation point)``."""

    entries: np.ndarray
    feature_names: tuple
    metric: Metric = EUCLIDEAN
    seed: int = 0
    eval_id: str = "test"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if BASELINE_NAME not in self.feature_names:
            raise AlcdError("ALCD table has no baseline column")
        if self.entries.shape[0] != len(self.feature_names):
            raise AlcdError("entries and feature names disagree")

    @property
    def shape(self):
        return self.entries.shape

    @property
    def baseline_index(self):
        return self.feature_names.index(BASELINE_NAME)

    def header(self):
        return {"metric_exponent": self.metric.exponent, "seed": self.seed,
                "eval_id": self.eval_id, "features": list(self.feature_names),
                "shape": list(self.entries.shape), **self.meta}

    def to_csv(self, path, header_path=None):
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "repetition", "point_index", "alcd"])
            for j, name in enumerate(self.feature_names):
                for r in range(self.entries.shape[1]):
                    for i, v in enumerate(self.entries[j, r]):
                        w.writerow([name, r, i, repr(float(v))])
        header_path = Path(header_path) if header_path else path.with_suffix(".json")
        header_path.write_text(json.dumps(self.header(), indent=2))

    @classmethod
    def from_csv(cls, path, header_path=None):
        path = Path(path)
        header_path = Path(header_path) if header_path else path.with_suffix(".json")
        head = json.loads(header_path.read_text())
        names = tuple(head["features"])
        entries = np.empty(head["shape"])
        with path.open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                entries[names.index(row["feature"]), int(row["repetition"]),
                        int(row["point_index"])] = float(row["alcd"])
        extra = {k: v for k, v in head.items()
                 if k not in ("metric_exponent", "seed", "eval_id", "features", "shape")}
        return cls(entries, names, Metric(head["metric_exponent"]), head["seed"],
                   head["eval_id"], extra)


def build_alcd_table(forest, eval_set, train_features, repetitions, metric=EUCLIDEAN, seed=0,
                     eval_id="test"):
    """Permuted ALCDs for every feature, baseline included, on one evaluation set."""
    if BASELINE_NAME not in eval_set.feature_names:
        raise AlcdError("evaluation set has no baseline column")
    entries = np.stack([
        permuted_alcd(forest, eval_set, train_features, j, repetitions, metric, seed)
        for j in range(eval_set.p)
    ])
    return AlcdTable(entries, eval_set.feature_names, metric, seed, eval_id)
