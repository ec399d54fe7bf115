"""Clustering agreement scores computed from the contingency table."""

from __future__ import annotations

import numpy as np

__all__ = ["contingency", "ari", "nmi"]


def contingency(a, b) -> np.ndarray:
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise ValueError(f"label vectors differ in length: {a.size} vs {b.size}")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table


def _pairs(counts):
    counts = np.asarray(counts, dtype=float)
    return float(np.sum(counts * (counts - 1) / 2.0))


def ari(a, b) -> float:
    """Adjusted Rand index."""
    table = contingency(a, b)
    n = int(table.sum())
    if n < 2:
        raise ValueError("ARI needs at least two observations")
    index = _pairs(table)
    sum_a = _pairs(table.sum(axis=1))
    sum_b = _pairs(table.sum(axis=0))
    expected = sum_a * sum_b / (n * (n - 1) / 2.0)
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions trivial in the same way; they agree perfectly
        return 1.0
    return (index - expected) / (max_index - expected)


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(a, b) -> float:
    """Mutual information over the arithmetic mean of the two entropies."""
    table = contingency(a, b)
    n = table.sum()
    if n < 1:
        raise ValueError("NMI needs at least one observation")
    ha = _entropy(table.sum(axis=1), n)
    hb = _entropy(table.sum(axis=0), n)
    if ha == 0.0 and hb == 0.0:
        return 1.0
    pij = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / n**2
    nz = pij > 0
    mi = float(np.sum(pij[nz] * np.log(pij[nz] / outer[nz])))
    return float(np.clip(mi / (0.5 * (ha + hb)), 0.0, 1.0))
