"""Stratified splits and seed derivation."""
from __future__ import annotations

import math
from typing import List, Tuple

import numpy as np
from sklearn.model_selection import StratifiedKFold

from deep_bow.errors import SingleClass, TooFewSamples

Split = Tuple[np.ndarray, np.ndarray]


def derive_seeds(master_seed: int, count: int, stream: int = 0) -> List[int]:
    """Independent child seeds of a master seed; distinct streams never overlap."""
    children = np.random.SeedSequence(master_seed, spawn_key=(stream,)).spawn(count)
    return [int(c.generate_state(1)[0]) for c in children]


def validation_size(n: int, fraction: float) -> int:
    # 1e-9 slack keeps 114 * 0.2 at 23 rather than 24 under float rounding
    return max(1, math.ceil(n * fraction - 1e-9))


def class_quota(labels: np.ndarray, total: int) -> Tuple[int, int]:
    """(positives, negatives) of a stratified subset of ``total`` rows.

    Each class gets the floor of its proportional share; the remainder goes
    to the largest fractional parts, positives first on ties.
    """
    labels = np.asarray(labels)
    n = len(labels)
    n_pos = int((labels == 1).sum())
    n_neg = n - n_pos
    pos, pos_rem = divmod(n_pos * total, n)
    neg, neg_rem = divmod(n_neg * total, n)
    # the two shares sum to total, so at most one row is left over
    if total - pos - neg > 0:
        if pos_rem >= neg_rem:
            pos += 1
        else:
            neg += 1
    return pos, neg


def _require_both_classes(labels: np.ndarray) -> None:
    if len(np.unique(labels)) < 2:
        raise SingleClass("both classes are required")


def stratified_holdout(labels: np.ndarray, size: int, seed: int) -> Split:
    """Sorted (train, held-out) row indices with ``size`` held-out rows."""
    labels = np.asarray(labels)
    _require_both_classes(labels)
    if size >= len(labels):
        raise TooFewSamples(f"cannot hold out {size} of {len(labels)} samples")
    n_pos, n_neg = class_quota(labels, size)
    rng = np.random.default_rng(seed)
    held = []
    for cls, quota in ((1, n_pos), (0, n_neg)):
        members = np.flatnonzero(labels == cls)
        held.append(rng.permutation(members)[:quota])
    held_idx = np.sort(np.concatenate(held))
    train_idx = np.setdiff1d(np.arange(len(labels)), held_idx)
    return train_idx, held_idx


def stratified_split(labels: np.ndarray, fraction: float, seed: int) -> Split:
    return stratified_holdout(labels, validation_size(len(labels), fraction), seed)


def stratified_kfold(labels: np.ndarray, folds: int, seed: int) -> List[Split]:
    """Shuffled stratified folds; per-class counts per fold differ by at most one."""
    labels = np.asarray(labels)
    _require_both_classes(labels)
    counts = np.bincount(labels.astype(np.int64), minlength=2)
    smallest = int(counts.min())
    if smallest < 2 or counts.max() < folds:
        raise TooFewSamples(f"{len(labels)} samples (smallest class {smallest}) for {folds} folds")
    kfold = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    return list(kfold.split(np.zeros((len(labels), 1)), labels))
