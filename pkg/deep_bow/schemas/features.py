from __future__ import annotations

from typing import List, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from sklearn.preprocessing import StandardScaler

from deep_bow.errors import LengthMismatch, SchemaError

TABULAR_PREFIXES = ("demo/", "clin/")


def is_image_column(name: str) -> bool:
    return not name.startswith(TABULAR_PREFIXES)


class FeatureVector(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    names: List[str]

    @model_validator(mode="after")
    def _check(self) -> "FeatureVector":
        if self.values.ndim != 1 or len(self.values) != len(self.names):
            raise LengthMismatch(f"{self.values.shape} values for {len(self.names)} names")
        if len(set(self.names)) != len(self.names):
            raise SchemaError("feature names are not unique")
        return self

    def __len__(self) -> int:
        return len(self.names)


class FeatureMatrix(BaseModel):
    """Subjects by named feature columns, with one 0/1 label per row."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    names: List[str]
    labels: np.ndarray
    subject_ids: List[str]

    @model_validator(mode="after")
    def _check(self) -> "FeatureMatrix":
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise LengthMismatch(f"matrix {self.values.shape} against {len(self.names)} names")
        n = self.values.shape[0]
        if self.labels.shape != (n,) or len(self.subject_ids) != n:
            raise LengthMismatch("labels/subject ids do not match the row count")
        if not np.isin(self.labels, (0, 1)).all():
            raise SchemaError("labels must be 0 or 1")
        if len(set(self.names)) != len(self.names):
            raise SchemaError("feature names are not unique")
        return self

    @classmethod
    def from_vectors(
        cls,
        vectors: Sequence[FeatureVector],
        labels: Sequence[int],
        subject_ids: Sequence[str],
    ) -> "FeatureMatrix":
        names = vectors[0].names
        for v in vectors[1:]:
            if v.names != names:
                raise SchemaError("feature vectors do not share column names")
        return cls(
            values=np.stack([v.values for v in vectors]).astype(np.float64),
            names=list(names),
            labels=np.asarray(labels, dtype=np.int64),
            subject_ids=list(subject_ids),
        )

    @property
    def n_samples(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def image_columns(self) -> List[int]:
        return [i for i, name in enumerate(self.names) if is_image_column(name)]

    @property
    def image_dim(self) -> int:
        return len(self.image_columns)

    def rows(self, subject_ids: Sequence[str]) -> "FeatureMatrix":
        position = {sid: i for i, sid in enumerate(self.subject_ids)}
        try:
            idx = [position[sid] for sid in subject_ids]
        except KeyError as e:
            raise SchemaError(f"subject {e.args[0]} has no feature row") from e
        return self.take(idx)

    def take(self, idx: Sequence[int]) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        return self.model_copy(update={
            "values": self.values[idx],
            "labels": self.labels[idx],
            "subject_ids": [self.subject_ids[i] for i in idx],
        })


class StandardizeParams(BaseModel):
    """A column scaler fitted on training rows; ``constant`` columns map to 0."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    scaler: StandardScaler
    constant: List[bool]
    names: List[str] = []

    @property
    def mean(self) -> np.ndarray:
        return self.scaler.mean_

    @property
    def std(self) -> np.ndarray:
        return np.where(self.constant, 0.0, self.scaler.scale_)
