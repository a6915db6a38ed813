"""Sparse PCA with elastic-net penalties on the weight matrix.

Minimizes::

    ||X - X W P^T||_F^2 + lam1 * sum_r ||w_r||_1 + lam2 * sum_r ||w_r||_2^2

over ``W`` (p x R) and ``P`` (p x R) subject to ``P^T P = I``, by alternating a
reduced-rank Procrustes update of ``P`` with an elastic-net coordinate-descent
update of each column of ``W``.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit

TOL = 1e-6
MAX_ITER = 500
SINGLE = "single"
TOTAL = "total"


class SpcaError(ValueError):
    pass


class SparsityPathError(SpcaError):
    """No grid value met the sparsity target; ``best`` holds the closest model."""

    def __init__(self, message, best, best_lambda):
        super().__init__(message)
        self.best = best
        self.best_lambda = best_lambda


@njit(cache=True)
def _enet_cd(G, b, w, lam1, lam2, tol, max_sweeps):
    """Coordinate descent for ``min_w w'Gw - 2b'w + lam1|w|_1 + lam2 w'w`` (in place)."""
    p = b.size
    Gw = G @ w
    half = 0.5 * lam1
    for sweep in range(max_sweeps):
        biggest = 0.0
        scale = 0.0
        for k in range(p):
            denom = G[k, k] + lam2
            old = w[k]
            if denom <= 0.0:
                new = 0.0
            else:
                z = b[k] - Gw[k] + G[k, k] * old
                if z > half:
                    new = (z - half) / denom
                elif z < -half:
                    new = (z + half) / denom
                else:
                    new = 0.0
            delta = new - old
            if delta != 0.0:
                for i in range(p):
                    Gw[i] += G[i, k] * delta
                w[k] = new
            if abs(delta) > biggest:
                biggest = abs(delta)
            if abs(new) > scale:
                scale = abs(new)
        if biggest <= tol * max(scale, 1e-300):
            return sweep + 1
    return max_sweeps


def objective(X, W, P, lam1, lam2):
    resid = X - X @ W @ P.T
    return float(np.sum(resid * resid) + lam1 * np.abs(W).sum() + lam2 * np.sum(W * W))


def reconstruction_error(X, W, P):
    resid = X - X @ W @ P.T
    return float(np.sum(resid * resid))


@dataclass(frozen=True, eq=False)
class SpcaModel:
    W: np.ndarray
    P: np.ndarray
    lam1: float
    lam2: float
    mean: np.ndarray
    objective_trace: tuple
    converged: bool
    n_iter: int
    meta: dict = field(default_factory=dict)

    @property
    def n_components(self):
        return self.W.shape[1]

    def nonzeros(self):
        return int(np.count_nonzero(self.W))

    def memberships(self):
        """Number of components each feature contributes to."""
        return np.count_nonzero(self.W, axis=1)

    def supports(self):
        return [np.flatnonzero(self.W[:, r]) for r in range(self.n_components)]

    def center(self, X):
        return np.asarray(X, dtype=np.float64) - self.mean

    def scores(self, X_raw):
        """Component scores of uncentered data, using the training means."""
        return transform(self, self.center(X_raw))

    def to_dict(self):
        return {"W": self.W.tolist(), "P": self.P.tolist(), "lam1": self.lam1,
                "lam2": self.lam2, "mean": self.mean.tolist(),
                "objective_trace": list(self.objective_trace), "converged": self.converged,
                "n_iter": self.n_iter, **self.meta}

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, d):
        known = {"W", "P", "lam1", "lam2", "mean", "objective_trace", "converged", "n_iter"}
        return cls(np.array(d["W"]), np.array(d["P"]), d["lam1"], d["lam2"],
                   np.array(d["mean"]), tuple(d["objective_trace"]), d["converged"],
                   d["n_iter"], {k: v for k, v in d.items() if k not in known})


def _orthonormal_factor(M):
    U, _, Vt = np.linalg.svd(M, full_matrices=False)
    return U @ Vt


def fit(X, R, lam1=0.0, lam2=0.0, tol=TOL, max_iter=MAX_ITER, center=False, cd_tol=1e-10,
        max_sweeps=200):
    """Fit sparse PCA by alternating minimization.

    Parameters
    ----------
    X : array (n, p)
        Data. Must already be column-centered unless ``center=True``, in which
        case the column means are removed here and stored on the model.
    R : int
        Number of components, ``1 <= R <= min(n, p)``.
    lam1, lam2 : float
        Lasso and ridge penalties on the columns of ``W``.
    tol : float
        Stop once the relative objective change falls below this.
    cd_tol, max_sweeps : float, int
        Inner coordinate-descent stopping rule for each W update. The inner
        solve is warm-started, so a capped number of sweeps per outer
        iteration still decreases the objective monotonically.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise SpcaError("X must be a matrix")
    n, p = X.shape
    if not 1 <= R <= min(n, p):
        raise SpcaError(f"R={R} must lie in [1, min(n, p)={min(n, p)}]")
    if lam1 < 0 or lam2 < 0:
        raise SpcaError("penalties must be non-negative")
    mean = X.mean(axis=0)
    if center:
        X = X - mean
    else:
        scale = max(1.0, float(np.abs(X).max()))
        if np.abs(mean).max() > 1e-8 * scale:
            raise SpcaError("X is not column-centered")
        mean = np.zeros(p)

    G = X.T @ X
    # absolute floor so near-exact fits (R close to rank) still terminate
    floor = 1e-12 * float(np.trace(G))
    _, _, Vt = np.linalg.svd(X, full_matrices=False)
    W = np.ascontiguousarray(Vt[:R].T)
    P = W.copy()
    trace = [objective(X, W, P, lam1, lam2)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # with W = 0 every orthonormal P is optimal; keep the current one
        if W.any():
            P = _orthonormal_factor(G @ W)
        for r in range(R):
            b = G @ P[:, r]
            w = np.ascontiguousarray(W[:, r])
            _enet_cd(G, b, w, lam1, lam2, cd_tol, max_sweeps)
            W[:, r] = w
        trace.append(objective(X, W, P, lam1, lam2))
        if abs(trace[-2] - trace[-1]) <= tol * max(abs(trace[-2]), floor):
            converged = True
            break

    # sign convention: largest-magnitude weight of each component is positive
    for r in range(R):
        if np.any(W[:, r]):
            k = np.argmax(np.abs(W[:, r]))
            if W[k, r] < 0:
                W[:, r] *= -1
                P[:, r] *= -1
    return SpcaModel(W, P, float(lam1), float(lam2), mean, tuple(trace), converged, it)


def transform(model, X_new):
    """Scores ``X_new @ W`` of data already centered with the training means."""
    X_new = np.asarray(X_new, dtype=np.float64)
    if X_new.ndim != 2 or X_new.shape[1] != model.W.shape[0]:
        raise SpcaError(f"expected {model.W.shape[0]} columns, got shape {X_new.shape}")
    return X_new @ model.W


def lambda_max(X, R):
    """Smallest lam1 that zeroes every weight at the PCA starting point."""
    X = np.asarray(X, dtype=np.float64)
    X = X - X.mean(axis=0)
    _, _, Vt = np.linalg.svd(X, full_matrices=False)
    return float(2.0 * np.abs(X.T @ (X @ Vt[:R].T)).max())


def default_grid(X, R, n_values=30, low=1e-3):
    top = lambda_max(X, R)
    return np.geomspace(low * top, top, n_values)


def _multi(model):
    return int(np.sum(model.memberships() > 1))


def sparsity_path(X, R, lam2=0.0, lam1_grid=None, target=SINGLE, bisect_steps=25, **fit_kw):
    """Choose lam1 along an increasing grid to meet a sparsity target.

    ``target="single"``: the smallest grid value at which every feature has a
    nonzero weight in at most one component.

    ``target="total"``: a lam1 giving exactly p nonzero weights in total
    (or as close to p from below as bisection gets). The grid is scanned
    downward from its largest value, where fits are sparse and cheap, and
    the first bracket that crosses p is bisected.

    Returns
    -------
    (lam1, SpcaModel)
    """
    X = np.asarray(X, dtype=np.float64)
    X = X - X.mean(axis=0)
    grid = default_grid(X, R) if lam1_grid is None else np.asarray(lam1_grid, dtype=np.float64)
    if np.any(np.diff(grid) <= 0):
        raise SpcaError("lam1 grid must be strictly increasing")
    if target == SINGLE:
        return _single_path(X, R, lam2, grid, fit_kw)
    if target == TOTAL:
        return _total_path(X, R, lam2, grid, bisect_steps, fit_kw)
    raise SpcaError(f"unknown sparsity target {target!r}")


def _single_path(X, R, lam2, grid, fit_kw):
    best, best_lam = None, None
    for lam1 in grid:
        model = fit(X, R, lam1, lam2, **fit_kw)
        if _multi(model) == 0:
            return float(lam1), model
        if best is None or _multi(model) < _multi(best):
            best, best_lam = model, float(lam1)
    raise SparsityPathError("no lam1 in the grid gives single-membership weights",
                            best, best_lam)


def _total_path(X, R, lam2, grid, steps, fit_kw):
    p = X.shape[1]
    hi, hi_model = None, None
    for lam1 in grid[::-1]:
        model = fit(X, R, lam1, lam2, **fit_kw)
        if model.nonzeros() > p:
            if hi is None:
                raise SparsityPathError(
                    "even the largest lam1 leaves more than p nonzero weights", model,
                    float(lam1))
            return _bisect_total(X, R, lam2, float(lam1), hi, hi_model, p, steps, fit_kw)
        hi, hi_model = float(lam1), model
        if model.nonzeros() == p:
            break
    return hi, hi_model


def _bisect_total(X, R, lam2, lo, hi, hi_model, p, steps, fit_kw):
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        model = fit(X, R, mid, lam2, **fit_kw)
        if model.nonzeros() <= p:
            hi, hi_model = mid, model
            if model.nonzeros() == p:
                break
        else:
            lo = mid
    return float(hi), hi_model
