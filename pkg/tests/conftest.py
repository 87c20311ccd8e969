from __future__ import annotations

import numpy as np
import pytest

from deep_bow.configs.pipeline_config import PipelineConfig
from deep_bow.schemas.volume import PhantomSpec
from deep_bow.services.phantom import generate_phantom_dataset

SMALL_DIMS = {"cc": (16, 12, 2), "thalamus": (12, 12, 2)}


def small_spec(**overrides) -> PhantomSpec:
    settings = dict(n_subjects=12, n_patients=6, dims=SMALL_DIMS, seed=3, effect_size=1.5)
    settings.update(overrides)
    return PhantomSpec(**settings)


def small_config(**overrides) -> PipelineConfig:
    payload = {
        "patch": {"size": 8, "stride": 4, "coverage_min": 0.5},
        "cae": {
            "widths": [2, 2],
            "latent_per_metric": 4,
            "latent_stacked": 4,
            "train": {"epochs": 1, "batch_size": 64, "learning_rate": 0.001, "seed": 0},
        },
        "vocab": {"words": 3},
        "selection": {"budget": 2, "inner_folds": 2},
        "svm": {"c_grid": [1.0, 10.0], "gamma_grid": [1.0], "grid_folds": 2},
        "eval": {"repeats": 2, "heldout_size": 4, "rounds": 1, "ensemble_size": 2},
        "jobs": 1,
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(payload.get(key), dict):
            payload[key] = {**payload[key], **value}
        else:
            payload[key] = value
    return PipelineConfig.model_validate(payload)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_phantom_dataset(small_spec())


@pytest.fixture
def config(tmp_path):
    return small_config(paths={"out_dir": str(tmp_path / "run")})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def blobs(rng: np.random.Generator, n_per_class: int = 10, d: int = 2, gap: float = 3.0):
    """Two Gaussian clouds: label 1 around +gap/2, label 0 around -gap/2 on every axis."""
    pos = rng.standard_normal((n_per_class, d)) + gap / 2
    neg = rng.standard_normal((n_per_class, d)) - gap / 2
    X = np.vstack([pos, neg])
    y = np.concatenate([np.ones(n_per_class, dtype=np.int64), np.zeros(n_per_class, dtype=np.int64)])
    return X, y
