import numpy as np
import pytest

from deep_bow.configs.pipeline_config import PipelineConfig
from deep_bow.errors import MissingArtifact
from deep_bow.schemas.volume import PhantomSpec
from deep_bow.services.featurizer import RegionMeanFeaturizer, make_featurizer
from deep_bow.services.phantom import generate_phantom_dataset

from tests.conftest import small_config


def _class_split(features):
    image = features.values[:, : features.image_dim]
    return image[features.labels == 1], image[features.labels == 0]


def test_lesion_texture_separates_raw_histograms(small_dataset):
    featurizer = make_featurizer(small_config(family="raw-bow"), dataset=small_dataset)
    ids = small_dataset.ids
    patients, controls = _class_split(featurizer.fit(ids, "pool").transform(ids))

    above = patients.min(axis=0) > controls.max(axis=0)
    below = patients.max(axis=0) < controls.min(axis=0)
    assert (above | below).any()


def test_deep_codebooks_need_trained_autoencoders(small_dataset, config):
    featurizer = make_featurizer(config, dataset=small_dataset)
    featurizer.fit_norms(small_dataset.ids, "pool")
    with pytest.raises(MissingArtifact, match="train-cae"):
        featurizer.fit_codebooks(small_dataset.ids, "pool")


def test_patches_need_a_fitted_normalizer(small_dataset):
    featurizer = make_featurizer(small_config(family="raw-bow"), dataset=small_dataset)
    with pytest.raises(MissingArtifact):
        featurizer.fit_codebooks(small_dataset.ids, "pool")


@pytest.mark.slow
def test_bow_columns_beat_region_means_on_the_default_cohort():
    dataset = generate_phantom_dataset(PhantomSpec())
    ids = dataset.ids

    patients, controls = _class_split(RegionMeanFeaturizer(dataset).matrix)
    assert np.abs(patients.mean(axis=0) - controls.mean(axis=0)).max() <= 1e-6

    config = PipelineConfig(family="raw-bow", jobs=1)
    patients, controls = _class_split(make_featurizer(config, dataset=dataset).fit(ids, "pool").transform(ids))
    gap = np.abs(patients.mean(axis=0) - controls.mean(axis=0))
    pooled_se = np.sqrt(patients.var(axis=0, ddof=1) / len(patients) + controls.var(axis=0, ddof=1) / len(controls))
    assert np.any(gap > 10 * pooled_se)
