"""Stratified train/test splits and k-fold partitions."""
from __future__ import annotations

import numpy as np

from ..errors import InsufficientDataError, InvalidParameterError

__all__ = ["stratified_split", "kfold_indices", "test_allocation"]


def test_allocation(counts, test_fraction):
    """Per-class test counts: floor of the proportional share, then the
    remaining ``round(N * f) - sum(floors)`` slots go to the largest
    fractional parts (lower class index first on ties)."""
    counts = np.asarray(counts, dtype=np.int64)
    exact = counts * test_fraction
    alloc = np.floor(exact).astype(np.int64)
    total = int(round(counts.sum() * test_fraction))
    rest = total - int(alloc.sum())
    frac = exact - alloc
    order = sorted(range(len(counts)), key=lambda i: (-frac[i], i))
    for i in order[:max(rest, 0)]:
        alloc[i] += 1
    return alloc


def stratified_split(labels, test_fraction, rng):
    """Split indices so each class is represented proportionally in the test set.

    Returns sorted ``(train_idx, test_idx)``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if not 0.0 < test_fraction < 1.0:
        raise InvalidParameterError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    classes, counts = np.unique(labels, return_counts=True)
    if np.any(counts < 2):
        raise InsufficientDataError(
            f"classes {classes[counts < 2].tolist()} have fewer than 2 members")
    alloc = test_allocation(counts, test_fraction)
    train, test = [], []
    for cls, n_test in zip(classes, alloc):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(len(members))]
        test.append(members[:n_test])
        train.append(members[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def kfold_indices(labels, k, rng):
    """``k`` disjoint stratified folds covering every index.

    Members of each class are shuffled and dealt round-robin, continuing the
    deal across classes, so fold sizes differ by at most one and every class is
    split as evenly as possible.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if not 2 <= k <= n:
        raise InvalidParameterError(f"k must lie in [2, {n}], got {k}")
    folds = [[] for _ in range(k)]
    pos = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        for idx in members[rng.permutation(len(members))]:
            folds[pos % k].append(int(idx))
            pos += 1
    return [np.sort(np.asarray(f, dtype=np.int64)) for f in folds]
