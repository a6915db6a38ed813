"""Bagged CART forests that remember which training rows sit in each leaf.

Trees are stored as flat node arrays (``feature[k] == -1`` marks a leaf). Each
leaf keeps its *community*: the distinct in-bag training rows that reached it,
stored CSR-style in ``comm_ptr`` / ``comm_idx``.
"""

import json
import math
from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np
from numba import njit

from . import _rng
from .data import CLASSIFICATION, REGRESSION

FORMAT_VERSION = 1


class ForestError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    """Forest settings. ``None`` means the task-dependent default."""

    n_trees: int = 500
    mtry: int = None
    min_leaf: int = None
    max_depth: int = None

    def resolve(self, p, task):
        if self.n_trees < 1:
            raise ForestError("n_trees must be at least 1")
        mtry = self.mtry
        if mtry is None:
            mtry = math.isqrt(p) if task == CLASSIFICATION else p // 3
            mtry = max(mtry, 1)
        if not 1 <= mtry <= p:
            raise ForestError(f"mtry={mtry} must lie in [1, p={p}]")
        min_leaf = self.min_leaf
        if min_leaf is None:
            min_leaf = 1 if task == CLASSIFICATION else 5
        if min_leaf < 1:
            raise ForestError("min_leaf must be at least 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ForestError("max_depth must be non-negative")
        return Hyperparams(self.n_trees, mtry, min_leaf, self.max_depth)


@njit(cache=True, nogil=True)
def _grow(X, y, w, n_classes, mtry, min_leaf, max_depth, uniforms):
    """Grow one tree on rows with positive bootstrap weight ``w``.

    ``n_classes == 0`` selects regression (variance reduction), otherwise Gini.
    ``max_depth < 0`` means unlimited. ``uniforms`` feeds feature sampling.
    """
    p = X.shape[1]
    rows = np.flatnonzero(w > 0)
    nd = rows.size
    cap = 2 * nd
    n_out = max(n_classes, 1)

    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    start = np.zeros(cap, np.int64)
    end = np.zeros(cap, np.int64)
    depth = np.zeros(cap, np.int64)
    value = np.zeros((cap, n_out))

    stack = np.empty(cap, np.int64)
    sp = 0
    n_nodes = 1
    start[0] = 0
    end[0] = nd
    stack[0] = 0
    sp = 1
    cursor = 0
    feats = np.arange(p)
    counts = np.zeros(n_out)
    cl = np.zeros(n_out)
    ss = 0.0

    while sp > 0:
        sp -= 1
        node = stack[sp]
        s = start[node]
        e = end[node]

        # node statistics
        W = 0.0
        s1 = 0.0
        counts[:] = 0.0
        ymin = np.inf
        ymax = -np.inf
        for q in range(s, e):
            r = rows[q]
            wr = w[r]
            W += wr
            if n_classes > 0:
                counts[int(y[r])] += wr
            else:
                s1 += wr * y[r]
            if y[r] < ymin:
                ymin = y[r]
            if y[r] > ymax:
                ymax = y[r]
        if n_classes > 0:
            for c in range(n_classes):
                value[node, c] = counts[c] / W
        else:
            value[node, 0] = s1 / W

        if ymin == ymax or W < 2 * min_leaf or (max_depth >= 0 and depth[node] >= max_depth):
            continue

        if n_classes > 0:
            ss = 0.0
            for c in range(n_classes):
                ss += counts[c] * counts[c]
            parent = ss / W
        else:
            parent = s1 * s1 / W

        # sample mtry features without replacement (partial Fisher-Yates)
        for k in range(p):
            feats[k] = k
        for k in range(mtry):
            u = uniforms[cursor]
            cursor += 1
            jj = k + int(u * (p - k))
            if jj >= p:
                jj = p - 1
            tmp = feats[k]
            feats[k] = feats[jj]
            feats[jj] = tmp
        chosen = np.sort(feats[:mtry])

        best_gain = 0.0
        best_f = -1
        best_t = 0.0
        sub = rows[s:e]
        for f in chosen:
            xs = X[sub, f]
            order = np.argsort(xs, kind="mergesort")
            wl = 0.0
            s1l = 0.0
            ssl = 0.0
            ssr = 0.0
            if n_classes > 0:
                cl[:] = 0.0
                ssr = ss
            for k in range(order.size - 1):
                r = sub[order[k]]
                wr = w[r]
                wl += wr
                if n_classes > 0:
                    c = int(y[r])
                    cr = counts[c] - cl[c]
                    ssl += 2.0 * cl[c] * wr + wr * wr
                    ssr += -2.0 * cr * wr + wr * wr
                    cl[c] += wr
                else:
                    s1l += wr * y[r]
                a = xs[order[k]]
                b = xs[order[k + 1]]
                if a == b:
                    continue
                wrt = W - wl
                if wl < min_leaf or wrt < min_leaf:
                    continue
                if n_classes > 0:
                    gain = ssl / wl + ssr / wrt - parent
                else:
                    s1r = s1 - s1l
                    gain = s1l * s1l / wl + s1r * s1r / wrt - parent
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    t = 0.5 * (a + b)
                    if t >= b:
                        t = a
                    best_t = t

        # guard against splits whose gain is pure rounding noise
        if best_f < 0 or best_gain <= 1e-12 * max(abs(parent), 1e-300):
            continue

        # partition rows[s:e] in place, left block first, stable
        lo = s
        buf = np.empty(e - s, np.int64)
        nb = 0
        for q in range(s, e):
            r = rows[q]
            if X[r, best_f] <= best_t:
                rows[lo] = r
                lo += 1
            else:
                buf[nb] = r
                nb += 1
        for q in range(nb):
            rows[lo + q] = buf[q]

        feature[node] = best_f
        threshold[node] = best_t
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        start[lc] = s
        end[lc] = lo
        start[rc] = lo
        end[rc] = e
        depth[lc] = depth[node] + 1
        depth[rc] = depth[node] + 1
        # push right first so the left subtree is expanded first
        stack[sp] = rc
        stack[sp + 1] = lc
        sp += 2

    comm_ptr = np.zeros(n_nodes + 1, np.int64)
    comm_idx = np.empty(nd, np.int64)
    pos = 0
    for node in range(n_nodes):
        if feature[node] < 0:
            seg = np.sort(rows[start[node]:end[node]])
            comm_idx[pos:pos + seg.size] = seg
            pos += seg.size
        comm_ptr[node + 1] = pos

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), comm_ptr, comm_idx)


@njit(cache=True, nogil=True)
def _apply(X, feature, threshold, left, right, roots):
    m = X.shape[0]
    t = roots.size
    out = np.empty((m, t), np.int64)
    for i in range(m):
        for k in range(t):
            node = roots[k]
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i, k] = node
    return out


@dataclass(frozen=True, eq=False)
class Tree:
    """One fitted tree. Node ``k`` is a leaf iff ``feature[k] == -1``.

    ``in_bag`` holds the bootstrap multiplicity of every training row.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    comm_ptr: np.ndarray
    comm_idx: np.ndarray
    in_bag: np.ndarray
    n_features: int

    @property
    def n_nodes(self):
        return self.feature.size

    @property
    def leaves(self):
        return np.flatnonzero(self.feature < 0)

    def community(self, node):
        return self.comm_idx[self.comm_ptr[node]:self.comm_ptr[node + 1]]

    def route(self, x):
        """Index of the leaf reached by the single point ``x``."""
        node = 0
        while self.feature[node] >= 0:
            node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
        return node


class Forest:
    """An immutable fitted forest; build it with :func:`fit`."""

    def __init__(self, trees, hyperparams, task, n_features, n_classes, seed, n_train):
        self.trees = tuple(trees)
        self.hyperparams = hyperparams
        self.task = task
        self.n_features = n_features
        self.n_classes = n_classes
        self.seed = seed
        self.n_train = n_train

    def __len__(self):
        return len(self.trees)

    @cached_property
    def _packed(self):
        sizes = np.array([t.n_nodes for t in self.trees])
        roots = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        feature = np.concatenate([t.feature for t in self.trees])
        threshold = np.concatenate([t.threshold for t in self.trees])
        left = np.concatenate([np.where(t.left >= 0, t.left + r, -1) for t, r in zip(self.trees, roots)])
        right = np.concatenate([np.where(t.right >= 0, t.right + r, -1) for t, r in zip(self.trees, roots)])
        value = np.concatenate([t.value for t in self.trees])
        comm_sizes = np.concatenate([np.diff(t.comm_ptr) for t in self.trees])
        comm_ptr = np.concatenate([[0], np.cumsum(comm_sizes)]).astype(np.int64)
        comm_idx = np.concatenate([t.comm_idx for t in self.trees]).astype(np.int64)
        return dict(roots=roots, feature=feature, threshold=threshold, left=left, right=right,
                    value=value, comm_ptr=comm_ptr, comm_idx=comm_idx)

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ForestError(f"expected {self.n_features} features, got shape {X.shape}")
        return np.ascontiguousarray(X)

    def apply(self, X):
        """Global leaf index reached in every tree: array of shape ``(m, n_trees)``."""
        pk = self._packed
        return _apply(self._check(X), pk["feature"], pk["threshold"], pk["left"], pk["right"],
                      pk["roots"])

    def predict(self, X):
        """Predictions for the rows of ``X``.

        Regression averages leaf means. Classification sums the leaf class
        distributions and returns the argmax class code (lowest code on ties).
        """
        leaves = self.apply(X)
        vals = self._packed["value"][leaves]  # (m, t, n_out)
        if self.task == CLASSIFICATION:
            return np.argmax(vals.sum(axis=1), axis=1)
        return vals[..., 0].mean(axis=1)

    def splits_on(self, feature):
        """Whether any tree in the forest splits on column ``feature``."""
        return bool(np.any(self._packed["feature"] == feature))

    # serialization -----------------------------------------------------

    def to_dict(self):
        def node_dict(tree, k):
            if tree.feature[k] < 0:
                return {"community": tree.community(k).tolist(),
                        "prediction": tree.value[k].tolist()}
            return {"feature": int(tree.feature[k]), "threshold": float(tree.threshold[k]),
                    "left": node_dict(tree, tree.left[k]),
                    "right": node_dict(tree, tree.right[k])}

        return {
            "format": "pfiaudit-forest",
            "version": FORMAT_VERSION,
            "task": self.task,
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "n_train": self.n_train,
            "seed": self.seed,
            "hyperparams": asdict(self.hyperparams),
            "trees": [{"in_bag": t.in_bag.tolist(), "root": node_dict(t, 0)} for t in self.trees],
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != "pfiaudit-forest" or doc.get("version") != FORMAT_VERSION:
            raise ForestError("unsupported forest document")
        n_out = max(doc["n_classes"], 1)
        trees = []
        for td in doc["trees"]:
            feature, threshold, left, right, value, comms = [], [], [], [], [], []

            def visit(nd):
                k = len(feature)
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(np.zeros(n_out))
                comms.append([])
                if "community" in nd:
                    comms[k] = nd["community"]
                    value[k] = np.asarray(nd["prediction"], dtype=np.float64)
                else:
                    feature[k] = nd["feature"]
                    threshold[k] = nd["threshold"]
                    left[k] = visit(nd["left"])
                    right[k] = visit(nd["right"])
                return k

            visit(td["root"])
            comm_ptr = np.concatenate([[0], np.cumsum([len(c) for c in comms])]).astype(np.int64)
            comm_idx = np.array([i for c in comms for i in c], dtype=np.int64)
            trees.append(Tree(np.array(feature, np.int64), np.array(threshold),
                              np.array(left, np.int64), np.array(right, np.int64),
                              np.array(value).reshape(-1, n_out), comm_ptr, comm_idx,
                              np.array(td["in_bag"], np.int64), doc["n_features"]))
        return cls(trees, Hyperparams(**doc["hyperparams"]), doc["task"], doc["n_features"],
                   doc["n_classes"], doc["seed"], doc["n_train"])

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def fit_tree(X, y, in_bag, n_classes, hp, uniforms):
    """Grow a single tree with resolved hyperparameters ``hp``."""
    max_depth = -1 if hp.max_depth is None else hp.max_depth
    out = _grow(X, y, in_bag, n_classes, hp.mtry, hp.min_leaf, max_depth, uniforms)
    return Tree(*out, in_bag=in_bag, n_features=X.shape[1])


def fit(train, hyperparams=None, seed=0):
    """Fit a bagged forest to a :class:`~pfiaudit.data.Dataset`.

    Tree ``k`` draws its bootstrap sample and split features from a stream
    keyed ``(seed, k)``, so the fitted forest depends only on the seed.
    """
    hp = (hyperparams or Hyperparams()).resolve(train.p, train.task)
    n = train.n
    if hp.min_leaf > n:
        raise ForestError(f"min_leaf={hp.min_leaf} exceeds the {n} training rows")
    X = np.ascontiguousarray(train.features)
    y = train.target.astype(np.float64)
    n_classes = len(train.classes) if train.task == CLASSIFICATION else 0
    trees = []
    for k in range(hp.n_trees):
        rng = _rng.stream(seed, _rng.TREE, k)
        in_bag = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.int64)
        uniforms = rng.random(2 * n * hp.mtry)
        trees.append(fit_tree(X, y, in_bag, n_classes, hp, uniforms))
    return Forest(trees, hp, train.task, train.p, n_classes, seed, n)


def predict(forest, x):
    """Prediction for one feature vector or a matrix of rows."""
    x = np.asarray(x, dtype=np.float64)
    out = forest.predict(x)
    return out[0] if x.ndim == 1 else out


def leaf_community(tree, x):
    """Distinct in-bag training rows sharing ``x``'s leaf in ``tree``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (tree.n_features,):
        raise ForestError("feature vector has the wrong dimension")
    return tree.community(tree.route(x))


def error(task, y_true, y_pred):
    """Misclassification rate for classification, mean squared error otherwise."""
    if task == CLASSIFICATION:
        return float(np.mean(y_true != y_pred))
    return float(np.mean((np.asarray(y_true) - y_pred) ** 2))


__all__ = ["Hyperparams", "Tree", "Forest", "ForestError", "fit", "fit_tree", "predict",
           "leaf_community", "error", "REGRESSION", "CLASSIFICATION"]
