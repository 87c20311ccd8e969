from __future__ import annotations

from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from deep_bow.errors import EmptyMask, InvalidSpec, MetricMismatch, NonFinite, SchemaError

REGIONS = ("cc", "thalamus")
REGION_ABBREV = {"cc": "cc", "thalamus": "thal"}
REGION_LABELS = {"cc": "CC", "thalamus": "Thal"}

DEFAULT_METRIC_CONFIG: Dict[str, List[str]] = {
    "cc": ["AWF", "DA", "De_par", "FA", "MD", "AK", "MK", "RK"],
    "thalamus": ["FA", "MD", "AK", "MK", "RK"],
}

DEMOGRAPHIC_NAMES = ("age", "sex")
CLINICAL_NAMES = ("Stroop", "SDMT", "CVLT", "FSS")


def ordered_regions(metric_config: Dict[str, List[str]]) -> List[str]:
    """Regions in feature order (cc first, then thalamus)."""
    return [r for r in REGIONS if r in metric_config]


def region_metric_pairs(metric_config: Dict[str, List[str]]) -> List[Tuple[str, str]]:
    return [(r, m) for r in ordered_regions(metric_config) for m in metric_config[r]]


def union_metrics(metric_config: Dict[str, List[str]]) -> List[str]:
    """Channel order of the stacked scenario: cc metrics, then metrics only thalamus has."""
    seen: List[str] = []
    for region in ordered_regions(metric_config):
        for m in metric_config[region]:
            if m not in seen:
                seen.append(m)
    return seen


class MetricVolume(BaseModel):
    """One scalar grid of one metric in one region.

    ``values`` and ``mask`` are indexed ``[z, y, x]`` so that C order matches
    the x-fastest on-disk layout.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    mask: np.ndarray

    @model_validator(mode="after")
    def _check(self) -> "MetricVolume":
        if self.values.ndim != 3 or self.values.shape != self.mask.shape:
            raise ValueError(
                f"values {self.values.shape} and mask {self.mask.shape} must be equal 3D shapes"
            )
        if min(self.values.shape) < 1:
            raise ValueError("volume dims must be positive")
        if not np.all(np.isfinite(self.values)):
            raise NonFinite("volume contains NaN/Inf values")
        if not self.mask.any():
            raise EmptyMask("mask contains no in-region voxel")
        return self

    @classmethod
    def from_arrays(cls, values: np.ndarray, mask: Optional[np.ndarray] = None) -> "MetricVolume":
        values = np.ascontiguousarray(values, dtype=np.float32)
        if mask is None:
            mask = np.ones(values.shape, dtype=bool)
        return cls(values=values, mask=np.ascontiguousarray(mask, dtype=bool))

    @property
    def dims(self) -> Tuple[int, int, int]:
        nz, ny, nx = self.values.shape
        return nx, ny, nz

    def in_mask_mean(self) -> float:
        return float(np.mean(self.values[self.mask], dtype=np.float64))


class SubjectRecord(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    id: str
    label: int
    demographics: Tuple[float, float]
    clinical: Tuple[float, float, float, float]
    regions: Dict[str, Dict[str, MetricVolume]]

    @model_validator(mode="after")
    def _check(self) -> "SubjectRecord":
        if self.label not in (0, 1):
            raise SchemaError(f"subject {self.id}: label must be 0 or 1, got {self.label}")
        unknown = set(self.regions) - set(REGIONS)
        if unknown:
            raise SchemaError(f"subject {self.id}: unknown regions {sorted(unknown)}")
        return self

    def tabular(self) -> np.ndarray:
        return np.asarray(self.demographics + self.clinical, dtype=np.float64)


class Dataset(BaseModel):
    """Immutable after load/generation."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    subjects: List[SubjectRecord]
    metric_config: Dict[str, List[str]] = DEFAULT_METRIC_CONFIG

    @model_validator(mode="after")
    def _check(self) -> "Dataset":
        ids = [s.id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise SchemaError("subject ids are not unique")
        unknown = set(self.metric_config) - set(REGIONS)
        if unknown:
            raise SchemaError(f"metric_config names unknown regions {sorted(unknown)}")
        for s in self.subjects:
            for region, metrics in self.metric_config.items():
                present = s.regions.get(region, {})
                missing = [m for m in metrics if m not in present]
                if missing:
                    raise MetricMismatch(f"subject {s.id} lacks {region} metrics {missing}")
        return self

    @property
    def ids(self) -> List[str]:
        return [s.id for s in self.subjects]

    @property
    def labels(self) -> np.ndarray:
        return np.asarray([s.label for s in self.subjects], dtype=np.int64)

    def pairs(self) -> List[Tuple[str, str]]:
        return region_metric_pairs(self.metric_config)

    def subject(self, subject_id: str) -> SubjectRecord:
        for s in self.subjects:
            if s.id == subject_id:
                return s
        raise KeyError(subject_id)

    def class_counts(self) -> Tuple[int, int]:
        pos = int(self.labels.sum())
        return pos, len(self.subjects) - pos


class PhantomSpec(BaseModel):
    """Generator settings for mean-matched synthetic cohorts."""
    model_config = ConfigDict(frozen=True)

    n_subjects: int = 114
    n_patients: int = 70
    dims: Dict[str, Tuple[int, int, int]] = {"cc": (40, 24, 3), "thalamus": (28, 28, 3)}
    lesion_fraction: float = 0.5
    effect_size: float = 0.6
    seed: int = 7
    metric_config: Dict[str, List[str]] = DEFAULT_METRIC_CONFIG
    lesion_metrics: Dict[str, List[str]] = {
        "cc": ["AWF", "DA", "FA", "RK"],
        "thalamus": ["FA", "MK", "RK"],
    }
    # Patient shift of clinical scores in SD units (0 = no class gap).
    clinical_gap: float = 0.0
    smoothness: float = 2.0
    metric_correlation: float = 0.5

    @model_validator(mode="after")
    def _check(self) -> "PhantomSpec":
        if self.n_subjects < 2:
            raise InvalidSpec("n_subjects must be at least 2")
        if not 0 <= self.n_patients <= self.n_subjects:
            raise InvalidSpec(
                f"n_patients ({self.n_patients}) must lie in [0, n_subjects={self.n_subjects}]"
            )
        if not 0.0 < self.lesion_fraction <= 1.0:
            raise InvalidSpec("lesion_fraction must lie in (0, 1]")
        if self.effect_size < 0:
            raise InvalidSpec("effect_size must be >= 0")
        if self.seed < 0:
            raise InvalidSpec("seed must be unsigned")
        if not 0.0 <= self.metric_correlation < 1.0:
            raise InvalidSpec("metric_correlation must lie in [0, 1)")
        for region in self.metric_config:
            if region not in REGIONS:
                raise InvalidSpec(f"unknown region {region!r}")
            if region not in self.dims or min(self.dims[region]) < 1:
                raise InvalidSpec(f"missing or invalid dims for region {region!r}")
        for region, metrics in self.lesion_metrics.items():
            unknown = set(metrics) - set(self.metric_config.get(region, []))
            if unknown:
                raise InvalidSpec(f"lesion metrics {sorted(unknown)} not configured for {region}")
        return self
