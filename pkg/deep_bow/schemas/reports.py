"""Report documents written by the evaluation protocols."""
from __future__ import annotations

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, model_validator


class ConfusionCounts(BaseModel):
    model_config = ConfigDict(frozen=True)

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @model_validator(mode="after")
    def _check(self) -> "ConfusionCounts":
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")
        return self

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


class Rates(BaseModel):
    """Accuracy, sensitivity and specificity; None marks an undefined ratio."""
    model_config = ConfigDict(frozen=True)

    accuracy: Optional[float]
    sensitivity: Optional[float]
    specificity: Optional[float]


class SubsetPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    size: int
    accuracy: Optional[float]
    sensitivity: Optional[float]
    specificity: Optional[float]


class RepeatResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    repeat: int
    seed: int
    train_size: int
    validation_size: int
    validation_positives: int
    counts: ConfusionCounts
    rates: Rates
    selected: List[str]
    selected_indices: List[int]
    selection_curve: List[float]
    C: float
    gamma: float
    converged: bool = True
    subset_curve: List[SubsetPoint] = []


class Summary(BaseModel):
    model_config = ConfigDict(frozen=True)

    mean: Optional[float]
    std: Optional[float]
    defined: int


class CvReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: str = "cv"
    family: str
    scenario: str
    feature_dim: int
    image_dim: int
    n_subjects: int
    validation_fraction: float
    master_seed: int
    strict_leakage: bool
    repeats: List[RepeatResult]
    accuracy: Summary
    sensitivity: Summary
    specificity: Summary
    subset_curve: List[SubsetPoint] = []
    feature_groups: Dict[str, int] = {}
    config: Dict[str, Any] = {}

    @model_validator(mode="after")
    def _check(self) -> "CvReport":
        for r in self.repeats:
            for v in (r.rates.accuracy, r.rates.sensitivity, r.rates.specificity):
                if v is not None and not 0.0 <= v <= 1.0:
                    raise ValueError(f"rate {v} outside [0, 1]")
        return self


class HeldoutRound(BaseModel):
    model_config = ConfigDict(frozen=True)

    round: int
    seed: int
    heldout_ids: List[str]
    counts: ConfusionCounts
    rates: Rates
    ensemble_size: int
    member_validation_accuracy: Optional[float]
    votes_positive: List[int]


class HeldoutReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: str = "heldout"
    family: str
    scenario: str
    feature_dim: int
    image_dim: int
    n_subjects: int
    heldout_size: int
    ensemble_size: int
    master_seed: int
    rounds: List[HeldoutRound]
    mean_accuracy: Optional[float]
    config: Dict[str, Any] = {}


class CohortHistograms(BaseModel):
    model_config = ConfigDict(frozen=True)

    names: List[str]
    positive_mean: List[float]
    negative_mean: List[float]
    difference: List[float]
    n_positive: int
    n_negative: int
