import numpy as np
import pytest

from deep_bow.errors import SingleClass, TooFewSamples
from deep_bow.services.splits import (
    class_quota,
    derive_seeds,
    stratified_holdout,
    stratified_kfold,
    stratified_split,
    validation_size,
)

COHORT = np.array([1] * 70 + [0] * 44)


def test_seeds_are_deterministic_and_stream_separated():
    assert derive_seeds(7, 5) == derive_seeds(7, 5)
    assert len(set(derive_seeds(7, 50))) == 50
    assert set(derive_seeds(7, 10, stream=0)).isdisjoint(derive_seeds(7, 10, stream=1))
    assert derive_seeds(7, 3) != derive_seeds(8, 3)


def test_validation_size():
    assert validation_size(114, 0.2) == 23
    assert validation_size(94, 0.2) == 19
    assert validation_size(3, 0.1) == 1


def test_cohort_quotas():
    assert class_quota(COHORT, 23) == (14, 9)
    assert class_quota(COHORT, 20) == (12, 8)
    assert sum(class_quota(COHORT, 91)) == 91


def test_quota_tie_goes_to_positives():
    assert class_quota(np.array([1, 0, 1, 0]), 1) == (1, 0)


def test_cv_split_of_the_cohort():
    train, val = stratified_split(COHORT, 0.2, seed=3)
    assert len(val) == 23 and len(train) == 91
    assert COHORT[val].sum() == 14
    assert np.intersect1d(train, val).size == 0
    assert np.array_equal(np.sort(np.concatenate([train, val])), np.arange(114))


def test_holdout_is_seeded():
    a = stratified_holdout(COHORT, 20, seed=5)
    b = stratified_holdout(COHORT, 20, seed=5)
    c = stratified_holdout(COHORT, 20, seed=6)
    np.testing.assert_array_equal(a[1], b[1])
    assert not np.array_equal(a[1], c[1])
    assert COHORT[a[1]].sum() == 12


def test_holdout_limits():
    with pytest.raises(TooFewSamples):
        stratified_holdout(np.array([1, 0, 1]), 3, seed=0)
    with pytest.raises(SingleClass):
        stratified_holdout(np.ones(5, dtype=int), 1, seed=0)


def test_kfold_partitions_and_balances():
    labels = np.array([1] * 11 + [0] * 7)
    folds = stratified_kfold(labels, 5, seed=2)
    assert len(folds) == 5
    held = np.concatenate([te for _, te in folds])
    assert np.array_equal(np.sort(held), np.arange(18))
    positives = [int(labels[te].sum()) for _, te in folds]
    assert max(positives) - min(positives) <= 1
    for train, test in folds:
        assert np.intersect1d(train, test).size == 0
        assert set(labels[train]) == {0, 1}


def test_kfold_needs_two_per_class():
    with pytest.raises(TooFewSamples):
        stratified_kfold(np.array([1, 1, 1, 0]), 2, seed=0)
    with pytest.raises(TooFewSamples):
        stratified_kfold(np.array([1, 0, 1, 0]), 5, seed=0)


def test_kfold_is_seeded():
    labels = np.array([1] * 9 + [0] * 6)
    first = stratified_kfold(labels, 3, seed=11)
    again = stratified_kfold(labels, 3, seed=11)
    other = stratified_kfold(labels, 3, seed=12)
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(first, again))
    assert not all(np.array_equal(a[1], b[1]) for a, b in zip(first, other))
    assert [int(labels[te].sum()) for _, te in first] == [3, 3, 3]
