"""Paired sign-flip permutation test of permuted-feature ALCD against the baseline.

For feature ``j`` and repetition ``r`` the paired differences are
``alcd[j, r, i] - alcd[baseline, r, i]`` over evaluation points ``i``. Under the
null hypothesis the two labels within each pair are exchangeable, so flipping
the sign of each difference independently generates the null distribution of
the mean difference.

``alternative="two-sided"`` counts resampled statistics at least as large in
absolute value as the observed one; ``"greater"`` counts only those at least
as large.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _rng

DEFAULT_PERMUTATIONS = 10_000
EXACT_MAX = 20
ALTERNATIVES = ("two-sided", "greater")


class TripError(ValueError):
    pass


def _diffs(sample):
    d = np.asarray(sample, dtype=np.float64).ravel()
    if d.size == 0:
        raise TripError("empty paired sample")
    return d


def _slack(d):
    # sums taken in different orders differ by rounding; treat those as ties
    return 1e-12 * (np.abs(d).sum() / d.size + 1e-300)


def statistic(sample):
    """Mean of the paired differences."""
    return float(np.mean(_diffs(sample)))


def _check_alternative(alternative):
    if alternative not in ALTERNATIVES:
        raise TripError(f"alternative must be one of {ALTERNATIVES}, got {alternative!r}")


def permutation_test(sample, n_perm=DEFAULT_PERMUTATIONS, seed=0, rng=None,
                     alternative="two-sided", chunk=2048):
    """Monte Carlo sign-flip test.

    Returns
    -------
    (statistic, p_value)
        ``p_value = (1 + #{rounds at least as extreme as observed}) / (1 + n_perm)``;
        ties count as extreme.
    """
    d = _diffs(sample)
    if n_perm < 1:
        raise TripError("need at least one permutation round")
    _check_alternative(alternative)
    two_sided = alternative == "two-sided"
    rng = rng if rng is not None else np.random.default_rng(seed)
    m = d.size
    s = d.mean()
    cut = (abs(s) if two_sided else s) - _slack(d)
    tail = 0
    done = 0
    while done < n_perm:
        k = min(chunk, n_perm - done)
        # one uniform per sign keeps the stream independent of the chunk size
        signs = np.where(rng.random((k, m)) < 0.5, -1.0, 1.0)
        stats = (signs @ d) / m
        if two_sided:
            stats = np.abs(stats)
        tail += int(np.count_nonzero(stats >= cut))
        done += k
    return float(s), (1 + tail) / (1 + n_perm)


def exact_test(sample, alternative="greater"):
    """Exact sign-flip p-value by enumerating all 2**m assignments.

    The two halves of the sample are enumerated separately and combined by a
    sorted search, so m = 20 needs only 2 x 2**10 partial sums.
    """
    d = _diffs(sample)
    m = d.size
    if m > EXACT_MAX:
        raise TripError(f"exact enumeration limited to m <= {EXACT_MAX}, got {m}")
    _check_alternative(alternative)
    if alternative == "two-sided":
        # |S| >= c  <=>  S >= c  or  -S >= c; the sign-flip law of S is symmetric
        c = abs(d.sum()) - _slack(d) * m
        if c <= 0:
            return 1.0
        return min(1.0, 2.0 * _upper_count(d, c) / 2 ** m)
    return _upper_count(d, d.sum() - _slack(d) * m) / 2 ** m


def _upper_count(d, cut):
    """Number of sign vectors ``e`` with ``e @ d >= cut``."""
    m = d.size

    def half_sums(v):
        k = v.size
        bits = (np.arange(2 ** k)[:, None] >> np.arange(k)) & 1
        return (bits * 2 - 1) @ v

    a = half_sums(d[: m // 2])
    b = np.sort(half_sums(d[m // 2:]))
    # for each partial sum in a, count partners in b with a + b >= cut
    count = b.size - np.searchsorted(b, cut - a, side="left")
    return float(count.sum())


@dataclass(frozen=True, eq=False)
class TripResult:
    """Per (feature, repetition) statistics and p-values; baseline excluded."""

    feature_names: tuple
    statistic: np.ndarray
    p_value: np.ndarray
    n_perm: int
    alternative: str = "two-sided"

    def to_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "repetition", "statistic", "p_value"])
            for j, name in enumerate(self.feature_names):
                for r in range(self.p_value.shape[1]):
                    w.writerow([name, r, repr(float(self.statistic[j, r])),
                                repr(float(self.p_value[j, r]))])

    def p_values(self, feature):
        return self.p_value[self.feature_names.index(feature)]

    def medians(self):
        return dict(zip(self.feature_names, np.median(self.p_value, axis=1).tolist()))


def run_trip(table, n_perm=DEFAULT_PERMUTATIONS, seed=0, alternative="two-sided"):
    """Test every non-baseline feature of an :class:`~pfiaudit.alcd.AlcdTable`.

    The test for ``(j, r)`` draws its sign flips from a stream keyed
    ``(seed, j, r)``.
    """
    names = table.feature_names
    try:
        b = table.baseline_index
    except ValueError:
        raise TripError("ALCD table has no baseline column") from None
    E = table.entries
    keep = [j for j in range(len(names)) if j != b]
    R = E.shape[1]
    stat = np.empty((len(keep), R))
    pval = np.empty((len(keep), R))
    for a, j in enumerate(keep):
        for r in range(R):
            rng = _rng.stream(seed, _rng.SIGN_FLIP, j, r)
            stat[a, r], pval[a, r] = permutation_test(E[j, r] - E[b, r], n_perm, rng=rng,
                                                      alternative=alternative)
    return TripResult(tuple(names[j] for j in keep), stat, pval, n_perm, alternative)
