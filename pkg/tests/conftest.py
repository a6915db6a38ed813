from pathlib import Path

import numpy as np
import pytest

from pfiaudit.forest import Forest, Hyperparams, Tree

DATA = Path(__file__).parent / "data"
WINE = DATA / "wine.csv"


def make_tree(feature, threshold, left, right, value, communities, n_train, n_features):
    """Tree from explicit node arrays; ``communities`` lists each node's rows (leaves only)."""
    sizes = [len(c) for c in communities]
    ptr = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    idx = np.array([i for c in communities for i in c], dtype=np.int64)
    value = np.asarray(value, dtype=np.float64).reshape(len(feature), -1)
    return Tree(np.asarray(feature, np.int64), np.asarray(threshold, np.float64),
                np.asarray(left, np.int64), np.asarray(right, np.int64), value, ptr, idx,
                np.ones(n_train, np.int64), n_features)


def leaf_tree(community, value, n_train, n_features):
    return make_tree([-1], [0.0], [-1], [-1], [value], [community], n_train, n_features)


def stump(feature, threshold, left_comm, right_comm, left_value, right_value, n_train,
          n_features):
    return make_tree([feature, -1, -1], [threshold, 0.0, 0.0], [1, -1, -1], [2, -1, -1],
                     [[0.0] * len(np.atleast_1d(left_value)), np.atleast_1d(left_value),
                      np.atleast_1d(right_value)],
                     [[], left_comm, right_comm], n_train, n_features)


def make_forest(trees, task="regression", n_classes=0):
    t0 = trees[0]
    return Forest(trees, Hyperparams(len(trees), 1, 1), task, t0.n_features, n_classes, 0,
                  t0.in_bag.size)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance results, printed once at the end of the session
ACCEPTANCE = {}


def record(key, passed, detail):
    ACCEPTANCE[key] = (bool(passed), detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (len(k), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key}: {'PASS' if ok else 'FAIL'}  {detail}")
