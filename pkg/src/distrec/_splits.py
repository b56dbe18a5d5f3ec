"""Seeded stratified partitioning shared by calibration and evaluation."""

from __future__ import annotations

import numpy as np


class SplitError(ValueError):
    pass


def _class_members(labels, rng) -> list[np.ndarray]:
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise SplitError("both classes must be present")
    return [rng.permutation(np.flatnonzero(labels == c)) for c in classes]


def stratified_kfold(labels, k: int, seed: int) -> np.ndarray:
    """Fold id per row.

    Each class is shuffled, then the concatenated shuffled classes are dealt
    round-robin, so every class (and every fold size) is within one of its
    even share.
    """
    if k < 2:
        raise SplitError("k must be at least 2")
    rng = np.random.default_rng(seed)
    dealt = np.concatenate(_class_members(labels, rng))
    folds = np.empty(len(dealt), dtype=np.int64)
    folds[dealt] = np.arange(len(dealt)) % k
    return folds


def stratified_split(labels, ratio: float, seed: int) -> np.ndarray:
    """Boolean mask, True for the first ("train") partition.

    Per class the first-partition size is ``ratio * class size`` rounded by
    largest remainder so the partition total is ``round(ratio * n)`` (half to even).
    """
    if not 0 < ratio < 1:
        raise SplitError(f"ratio must lie in (0, 1), got {ratio}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    members = _class_members(labels, rng)
    if min(len(m) for m in members) < 2:
        raise SplitError("every class needs at least two members")
    quotas = np.array([ratio * len(m) for m in members])
    alloc = np.floor(quotas).astype(np.int64)
    target = int(round(ratio * len(labels)))
    remainders = quotas - alloc
    # ties in remainder go to the smaller class index, i.e. deterministic
    for j in sorted(range(len(members)), key=lambda j: (-remainders[j], j))[: max(0, target - alloc.sum())]:
        alloc[j] += 1
    mask = np.zeros(len(labels), dtype=bool)
    for m, a in zip(members, alloc):
        mask[m[:a]] = True
    return mask
