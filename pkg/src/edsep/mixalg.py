"""Stacked-signal algebra: mean/residual projectors and source permutations.

A stacked signal is a real (K, M) array holding K single-channel sources of M
samples each. Two complementary projectors act on the source axis:

    P x    replaces every row with the across-source mean (rank-M),
    Pbar x = x - P x, the inter-source residual (rank-(K-1)M).

P and Pbar diagonalize every operator in this package, so they are never
materialized as matrices; both are O(KM) row reductions.
"""

from __future__ import annotations

import itertools

import numpy as np


def as_stacked(x, min_sources=2):
    """Validate and return x as a float64 (K, M) array.

    Rejects wrong rank, K below ``min_sources``, and non-finite entries.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"stacked signal must be 2-D (K, M), got shape {x.shape}")
    if x.shape[0] < min_sources:
        raise ValueError(f"need at least {min_sources} sources, got K={x.shape[0]}")
    if x.shape[1] < 1:
        raise ValueError("stacked signal needs at least one sample")
    if not np.all(np.isfinite(x)):
        raise ValueError("stacked signal contains non-finite entries")
    return x


def project_mean(x):
    """P x: every row becomes the column-wise mean across sources."""
    x = as_stacked(x)
    m = x.mean(axis=0, keepdims=True)
    return np.broadcast_to(m, x.shape).copy()


def project_residual(x):
    """Pbar x = x - P x; output rows sum to the zero vector."""
    x = as_stacked(x)
    return x - x.mean(axis=0, keepdims=True)


def stack_mixture(y, num_sources):
    """Replicate the mixture y into K rows of y / K.

    The result is the fixed point of P that is consistent with the mixture:
    its rows sum back to y exactly in exact arithmetic.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError(f"mixture must be 1-D, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("mixture contains non-finite entries")
    if num_sources < 2:
        raise ValueError(f"need at least 2 sources, got K={num_sources}")
    return np.tile(y / num_sources, (num_sources, 1))


def apply_permutation(x, perm):
    """Reorder source rows: row i of the output is row perm[i] of x."""
    x = as_stacked(x)
    perm = tuple(perm)
    if len(perm) != x.shape[0]:
        raise ValueError(f"permutation length {len(perm)} != K={x.shape[0]}")
    if sorted(perm) != list(range(x.shape[0])):
        raise ValueError(f"not a permutation of 0..{x.shape[0] - 1}: {perm}")
    return x[list(perm)]


def all_permutations(num_sources):
    """All K! source orderings in lexicographic order, as index tuples.

    Capped at K <= 6: factorial growth makes exhaustive assignment search
    pointless beyond that.
    """
    if not 2 <= num_sources <= 6:
        raise ValueError(f"K must be in [2, 6], got {num_sources}")
    return list(itertools.permutations(range(num_sources)))
