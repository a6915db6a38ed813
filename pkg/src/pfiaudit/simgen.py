"""Simulated regression datasets with controlled feature dependence.

All generators return a :class:`~pfiaudit.data.Dataset` with features named
``V1..Vp`` and target ``y = sum(features) + N(0, noise_sd**2)``.
"""

import json
from dataclasses import asdict, dataclass, field
from itertools import product

import numpy as np

from . import _rng
from .data import Dataset

KINDS = ("two_correlated", "circle", "equal_blocks", "varied_blocks", "cod")
NOISE_SD = 0.1

COD_N = (50, 100, 150)
COD_P = (10, 50, 100, 150, 200, 250)


class GeneratorError(ValueError):
    pass


def _names(p):
    return [f"V{j + 1}" for j in range(p)]


def _linear_target(X, rng, noise_sd):
    return X.sum(axis=1) + rng.normal(0.0, noise_sd, X.shape[0])


def _check_rho(rho):
    if not -1.0 < rho < 1.0:
        raise GeneratorError(f"correlation must lie in (-1, 1), got {rho}")


def two_correlated(n=500, rho=0.75, seed=0, noise_sd=NOISE_SD):
    """Two correlated standard normals followed by six independent Uniform(0, 1)."""
    _check_rho(rho)
    if n < 2:
        raise GeneratorError("n must be at least 2")
    rng = _rng.stream(seed, _rng.GENERATOR)
    L = np.linalg.cholesky(np.array([[1.0, rho], [rho, 1.0]]))
    X = np.column_stack([rng.standard_normal((n, 2)) @ L.T, rng.random((n, 6))])
    return Dataset(X, _linear_target(X, rng, noise_sd), _names(8))


def circle(n=500, seed=0, noise_sd=NOISE_SD):
    """``(sin t, cos t)`` for ``t ~ Uniform(0, 2 pi)`` followed by six Uniform(0, 1).

    The first two features are uncorrelated but functionally dependent.
    """
    if n < 2:
        raise GeneratorError("n must be at least 2")
    rng = _rng.stream(seed, _rng.GENERATOR)
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    X = np.column_stack([np.sin(theta), np.cos(theta), rng.random((n, 6))])
    return Dataset(X, _linear_target(X, rng, noise_sd), _names(8))


def block_covariance(p, k, rhos):
    """Block-diagonal correlation matrix; the last ``p % k`` features are independent."""
    if k < 1:
        raise GeneratorError("block size must be at least 1")
    n_blocks = p // k
    rhos = np.atleast_1d(np.asarray(rhos, dtype=np.float64))
    if rhos.size == 1:
        rhos = np.repeat(rhos, n_blocks)
    if rhos.size != n_blocks:
        raise GeneratorError(f"{rhos.size} correlations given for {n_blocks} blocks")
    C = np.eye(p)
    for b, rho in enumerate(rhos):
        _check_rho(rho)
        if k > 1 and rho <= -1.0 / (k - 1):
            raise GeneratorError(
                f"block {b + 1} with rho={rho} and size {k} is not positive definite")
        s = slice(b * k, (b + 1) * k)
        C[s, s] = rho
        C[range(b * k, (b + 1) * k), range(b * k, (b + 1) * k)] = 1.0
    return C


def block_membership(p, k):
    """Block number (0-based) of each feature, ``-1`` for leftover independent ones."""
    n_blocks = p // k
    return np.array([j // k if j < n_blocks * k else -1 for j in range(p)])


def blocks(n, p, k, rhos, seed=0, noise_sd=NOISE_SD):
    """Multivariate normal features with block-structured correlation."""
    if n < 2:
        raise GeneratorError("n must be at least 2")
    C = block_covariance(p, k, rhos)
    L = np.linalg.cholesky(C)
    rng = _rng.stream(seed, _rng.GENERATOR)
    X = rng.standard_normal((n, p)) @ L.T
    return Dataset(X, _linear_target(X, rng, noise_sd), _names(p))


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    n: int = 500
    p: int = 8
    rho: tuple = (0.75,)
    k: int = 3
    noise_sd: float = NOISE_SD
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GeneratorError(f"unknown generator kind {self.kind!r}")
        object.__setattr__(self, "rho", tuple(float(r) for r in np.atleast_1d(self.rho)))
        if self.k < 1:
            raise GeneratorError("block size must be at least 1")

    def with_seed(self, seed):
        return GeneratorSpec(self.kind, self.n, self.p, self.rho, self.k, self.noise_sd, seed,
                             dict(self.meta))

    def to_dict(self):
        d = asdict(self)
        d["rho"] = list(self.rho)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def dependent_features(self):
        """Names of features that depend on some other feature."""
        if self.kind in ("two_correlated", "circle"):
            return ["V1", "V2"]
        if self.k == 1:
            return []
        member = block_membership(self.p, self.k)
        return [f"V{j + 1}" for j in np.flatnonzero(member >= 0)]


def generate(spec):
    if spec.kind == "two_correlated":
        return two_correlated(spec.n, spec.rho[0], spec.seed, spec.noise_sd)
    if spec.kind == "circle":
        return circle(spec.n, spec.seed, spec.noise_sd)
    return blocks(spec.n, spec.p, spec.k, spec.rho, spec.seed, spec.noise_sd)


def equal_blocks_spec(n=500, p=8, k=3, rho=0.75, seed=0):
    return GeneratorSpec("equal_blocks", n, p, (rho,), k, seed=seed)


def varied_blocks_spec(n=500, p=8, k=3, rhos=(0.75, 0.25), seed=0):
    return GeneratorSpec("varied_blocks", n, p, tuple(rhos), k, seed=seed)


def cod_suite(n_list=COD_N, p_list=COD_P, seed=0, rho=0.75, k=10):
    """Equal-correlation block specs over the grid ``n_list x p_list``."""
    return [GeneratorSpec("cod", n, p, (rho,), k, seed=seed) for n, p in product(n_list, p_list)]
