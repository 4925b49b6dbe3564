"""Rank and linear correlation between predicted and subjective scores."""

from __future__ import annotations

import numpy as np

from .errors import DataError


def _validated_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DataError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise DataError("correlation needs at least 2 samples")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise DataError("non-finite values in correlation input")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DataError("constant input: correlation undefined")
    return x, y


def average_ranks(x) -> np.ndarray:
    """Fractional 1-based ranks; tied values share the mean of their ranks."""
    x = np.asarray(x, dtype=np.float64).ravel()
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.shape[0], dtype=np.float64)
    xs = x[order]
    i = 0
    n = x.shape[0]
    while i < n:
        j = i
        while j + 1 < n and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def plcc(x, y) -> float:
    """Pearson linear correlation coefficient."""
    x, y = _validated_pair(x, y)
    xc = x - x.mean()
    yc = y - y.mean()
    return float(np.dot(xc, yc) / np.sqrt(np.dot(xc, xc) * np.dot(yc, yc)))


def srcc(x, y) -> float:
    """Spearman rank correlation: Pearson correlation of average ranks."""
    x, y = _validated_pair(x, y)
    return plcc(average_ranks(x), average_ranks(y))
