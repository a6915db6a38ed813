"""Permutation feature importance and a permute-and-relearn reference."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _rng
from . import forest as forest_mod
from .data import CLASSIFICATION


def error_kind(task):
    return "misclassification" if task == CLASSIFICATION else "mse"


def base_error(forest, eval_set):
    return forest_mod.error(eval_set.task, eval_set.target, forest.predict(eval_set.features))


def pfi(forest, eval_set, feature, repetitions, seed=0, permutations=None, base=None):
    """Increase in held-out error after permuting one column, per repetition.

    Repetition ``r`` uses the same permutation stream ``(seed, j, r)`` as the
    ALCD computation. The forest is never refit.
    """
    j = eval_set.index_of(feature)
    m = eval_set.n
    if m == 0:
        raise ValueError("empty evaluation set")
    X = np.array(eval_set.features)
    if base is None:
        base = base_error(forest, eval_set)
    out = np.empty(repetitions)
    for r in range(repetitions):
        perm = (_rng.feature_permutation(seed, j, r, m) if permutations is None
                else np.asarray(permutations[r]))
        Xp = X.copy()
        Xp[:, j] = X[perm, j]
        out[r] = forest_mod.error(eval_set.task, eval_set.target, forest.predict(Xp)) - base
    return out


def relearn_importance(train, test, feature, hyperparams=None, seed=0, reference=None):
    """Test-error increase of a forest refit with column ``feature`` permuted in training.

    The refit uses the same forest seed as the reference fit, so the only
    difference between the two models is the permuted column. Pass an
    already-fitted ``reference`` forest to avoid fitting it again.
    """
    j = train.index_of(feature)
    if reference is None:
        reference = forest_mod.fit(train, hyperparams, seed)
    X = np.array(train.features)
    X[:, j] = X[_rng.stream(seed, _rng.RELEARN, j).permutation(train.n), j]
    refit = forest_mod.fit(train.with_features(X), hyperparams, seed)
    err = lambda f: forest_mod.error(test.task, test.target, f.predict(test.features))  # noqa: E731
    return err(refit) - err(reference)


@dataclass(frozen=True, eq=False)
class ImportanceReport:
    feature_names: tuple
    pfi: np.ndarray  # (p, R)
    base_error: float
    error_kind: str
    relearn: dict = field(default_factory=dict)

    def summary(self):
        out = {}
        for j, name in enumerate(self.feature_names):
            row = self.pfi[j]
            out[name] = {"mean": float(row.mean()),
                         "sd": float(row.std(ddof=1)) if row.size > 1 else 0.0}
            if name in self.relearn:
                out[name]["relearn"] = float(self.relearn[name])
        return {"base_error": self.base_error, "error_kind": self.error_kind, "features": out}

    def to_csv(self, path, summary_path=None):
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "repetition", "pfi"])
            for j, name in enumerate(self.feature_names):
                for r, v in enumerate(self.pfi[j]):
                    w.writerow([name, r, repr(float(v))])
        summary_path = Path(summary_path) if summary_path else path.with_suffix(".json")
        summary_path.write_text(json.dumps(self.summary(), indent=2))


def importance_report(forest, eval_set, repetitions, seed=0, relearn=None):
    """PFI for every column of ``eval_set``; ``relearn`` maps names to oracle scores."""
    base = base_error(forest, eval_set)
    scores = np.stack([pfi(forest, eval_set, j, repetitions, seed, base=base)
                       for j in range(eval_set.p)])
    return ImportanceReport(eval_set.feature_names, scores, base, error_kind(eval_set.task),
                            dict(relearn or {}))
