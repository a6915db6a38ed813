"""Keyed random streams.

Every random quantity in the package is drawn from a generator keyed by the
user seed plus a tuple of integers (tree index, feature index, repetition...),
so results never depend on the order in which work is scheduled.
"""

import numpy as np

# Stream domains; keep them distinct so that e.g. the permutation of feature j
# in repetition r is unrelated to the sign flips of the test for (j, r).
PERMUTATION = 0
SIGN_FLIP = 1
TREE = 2
BASELINE = 3
SPLIT = 4
GENERATOR = 5
RELEARN = 6


def stream(seed, domain, *key):
    """Return a ``numpy.random.Generator`` keyed by ``(seed, domain, *key)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(domain)] + [int(k) for k in key]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def feature_permutation(seed, feature, repetition, m):
    """The permutation of ``m`` evaluation rows used for ``(feature, repetition)``.

    Shared by the ALCD and PFI computations so both see the same permuted rows.
    """
    return stream(seed, PERMUTATION, feature, repetition).permutation(m)
