import itertools

import numpy as np
import pytest

from deep_bow.errors import LengthMismatch, SingleClass, TooFewSamples
from deep_bow.schemas.features import FeatureMatrix
from deep_bow.services.evaluation import (
    cohort_histograms,
    confusion_counts,
    confusion_metrics,
    heldout_ensemble_eval,
    majority_vote,
    repeated_split_cv,
)
from deep_bow.services.featurizer import PrecomputedFeaturizer, RegionMeanFeaturizer, make_featurizer
from deep_bow.services.ledger import FitLedger

from tests.conftest import small_config


def _matrix(rng, n_pos=18, n_neg=12):
    labels = np.array([1] * n_pos + [0] * n_neg)
    n = len(labels)
    values = rng.standard_normal((n, 6))
    values[:, 1] += 2.5 * (2 * labels - 1)
    values[:, 4] += 1.5 * (2 * labels - 1)
    names = ["cc/FA/bin00", "cc/FA/bin01", "thal/MK/bin00", "thal/MK/bin01", "demo/age", "clin/FSS"]
    return FeatureMatrix(values=values, names=names, labels=labels, subject_ids=[f"s{i:02d}" for i in range(n)])


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_confusion_metrics_on_every_small_table(n):
    for predictions in itertools.product((0, 1), repeat=n):
        for labels in itertools.product((0, 1), repeat=n):
            acc, sens, spec = confusion_metrics(predictions, labels)
            pairs = list(zip(predictions, labels))
            positives = [p for p, y in pairs if y == 1]
            negatives = [p for p, y in pairs if y == 0]
            assert acc == pytest.approx(sum(p == y for p, y in pairs) / n)
            assert sens == (pytest.approx(sum(positives) / len(positives)) if positives else None)
            assert spec == (pytest.approx(negatives.count(0) / len(negatives)) if negatives else None)


def test_confusion_counts_cells():
    counts = confusion_counts([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
    assert (counts.tp, counts.fp, counts.tn, counts.fn, counts.total) == (2, 1, 1, 1, 5)


def test_confusion_length_mismatch():
    with pytest.raises(LengthMismatch):
        confusion_metrics([1, 0], [1])
    with pytest.raises(LengthMismatch):
        confusion_metrics([], [])


def test_majority_vote_ties_go_to_positive():
    votes = np.array([
        [1, 0, 1, 0],
        [0, 0, 1, 1],
    ])
    assert majority_vote(votes).tolist() == [1, 0, 1, 1]
    assert majority_vote(np.array([[1, 0], [0, 0], [1, 0]])).tolist() == [1, 0]


def test_cohort_histograms_are_class_means(rng):
    matrix = _matrix(rng)
    cohort = cohort_histograms(matrix)
    assert cohort.names == ["cc/FA/bin00", "cc/FA/bin01", "thal/MK/bin00", "thal/MK/bin01"]
    assert (cohort.n_positive, cohort.n_negative) == (18, 12)
    assert cohort.positive_mean[1] == pytest.approx(matrix.values[matrix.labels == 1, 1].mean())
    assert cohort.difference[1] == pytest.approx(cohort.positive_mean[1] - cohort.negative_mean[1])
    with pytest.raises(SingleClass):
        cohort_histograms(matrix, np.ones(30, dtype=int))


def test_cv_on_precomputed_features(rng):
    config = small_config(eval={"repeats": 3})
    ledger = FitLedger()
    report = repeated_split_cv(PrecomputedFeaturizer(_matrix(rng)), config, ledger)

    assert report.family == "precomputed"
    assert (report.feature_dim, report.image_dim, report.n_subjects) == (6, 4, 30)
    assert len(report.repeats) == 3
    for r in report.repeats:
        assert (r.train_size, r.validation_size, r.validation_positives) == (24, 6, 4)
        assert len(r.selected) == 2
        assert [p.size for p in r.subset_curve] == [1, 2]
    assert report.accuracy.defined == 3
    assert report.accuracy.mean >= 0.8
    assert "FA in CC" in report.feature_groups
    assert {r.stage for r in ledger.records} == {"standardizer", "selection", "grid", "svm"}
    assert len(ledger) == 12


def test_cv_is_reproducible_across_worker_counts(rng):
    matrix = _matrix(rng)
    serial = repeated_split_cv(PrecomputedFeaturizer(matrix), small_config(jobs=1))
    parallel = repeated_split_cv(PrecomputedFeaturizer(matrix), small_config(jobs=2))
    assert [r.rates for r in serial.repeats] == [r.rates for r in parallel.repeats]
    assert [r.selected for r in serial.repeats] == [r.selected for r in parallel.repeats]


def test_cv_requires_both_classes(rng):
    matrix = _matrix(rng)
    one_class = matrix.model_copy(update={"labels": np.ones(30, dtype=np.int64)})
    with pytest.raises(SingleClass):
        repeated_split_cv(PrecomputedFeaturizer(one_class), small_config())


def test_heldout_ensemble_on_precomputed_features(rng):
    config = small_config(eval={"heldout_size": 6, "rounds": 2, "ensemble_size": 3})
    ledger = FitLedger()
    report = heldout_ensemble_eval(PrecomputedFeaturizer(_matrix(rng)), config, ledger)

    assert len(report.rounds) == 2
    for rd in report.rounds:
        assert len(rd.heldout_ids) == 6
        assert rd.counts.total == 6
        assert rd.ensemble_size == 3
        assert all(0 <= v <= 3 for v in rd.votes_positive)
    assert report.rounds[0].heldout_ids != report.rounds[1].heldout_ids
    assert {r.scope.rsplit("/", 1)[0] for r in ledger.records} == {"heldout/round0", "heldout/round1"}


def test_heldout_needs_spare_subjects(rng):
    with pytest.raises(TooFewSamples):
        heldout_ensemble_eval(PrecomputedFeaturizer(_matrix(rng)), small_config(eval={"heldout_size": 30}))


def test_region_mean_cv(small_dataset):
    report = repeated_split_cv(RegionMeanFeaturizer(small_dataset), small_config())
    assert report.family == "region-mean"
    assert (report.feature_dim, report.image_dim) == (19, 13)
    assert all(r.validation_size == 3 for r in report.repeats)


def test_deep_cv_trains_autoencoders_once_on_the_cohort(small_dataset, config):
    ledger = FitLedger()
    featurizer = make_featurizer(config, dataset=small_dataset, ledger=ledger)
    report = repeated_split_cv(featurizer, config, ledger)

    assert (report.feature_dim, report.image_dim) == (45, 39)
    pool = [r for r in ledger.records if r.scope == "pool"]
    assert [r.stage for r in pool] == ["normalizer", "autoencoder"]
    assert pool[1].subject_ids == tuple(sorted(small_dataset.ids))
    cv_stages = [r.stage for r in ledger.within("cv/rep000")]
    assert cv_stages == ["normalizer", "codebook", "standardizer", "selection", "grid", "svm"]


def test_strict_leakage_retrains_autoencoders_per_split(small_dataset):
    config = small_config(strict_leakage=True, scenario="stacked", eval={"repeats": 1})
    ledger = FitLedger()
    featurizer = make_featurizer(config, dataset=small_dataset, ledger=ledger)
    report = repeated_split_cv(featurizer, config, ledger)

    assert report.strict_leakage
    assert (report.feature_dim, report.image_dim) == (12, 6)
    assert not [r for r in ledger.records if r.scope == "pool"]
    assert "autoencoder" in [r.stage for r in ledger.within("cv/rep000")]


def test_deep_heldout_keeps_heldout_subjects_out_of_every_fit(small_dataset, config):
    ledger = FitLedger()
    report = heldout_ensemble_eval(make_featurizer(config, dataset=small_dataset, ledger=ledger), config, ledger)
    held = set(report.rounds[0].heldout_ids)
    assert len(held) == 4
    assert any(r.scope == "heldout/round0/pool" and r.stage == "autoencoder" for r in ledger.records)
    for record in ledger.records:
        assert held.isdisjoint(record.subject_ids)


def test_protocols_accept_a_bare_feature_matrix(rng):
    matrix = _matrix(rng)
    assert repeated_split_cv(matrix, small_config()).family == "precomputed"
    assert heldout_ensemble_eval(matrix, small_config()).n_subjects == 30
