from __future__ import annotations

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

STACK_GROUP = "stack"


def scope_name(region: str, group: str) -> str:
    """``cc/FA`` for one metric, ``cc/stack`` for the stacked scenario."""
    return f"{region}/{group}"


def split_scope(scope: str) -> Tuple[str, str]:
    region, group = scope.split("/", 1)
    return region, group


class NormStats(BaseModel):
    """Per-channel z-score statistics fitted on training patches."""
    model_config = ConfigDict(frozen=True)

    mean: List[float]
    std: List[float]

    @property
    def channels(self) -> int:
        return len(self.mean)


class Patch(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray  # (channels, size, size)
    origin: Tuple[int, int, int]
    subject_id: str
    region: str
    group: str

    @property
    def size(self) -> int:
        return int(self.values.shape[-1])

    @property
    def channels(self) -> int:
        return int(self.values.shape[0])


class PatchSet(BaseModel):
    """A homogeneous batch of patches, stored as one (n, C, s, s) array."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    origins: np.ndarray  # (n, 3) as (x, y, z)
    subject_ids: np.ndarray  # (n,) str
    region: str = ""
    metrics: Tuple[str, ...] = ()
    norm_stats: Optional[NormStats] = None

    @model_validator(mode="after")
    def _check(self) -> "PatchSet":
        if self.values.ndim != 4 or self.values.shape[-1] != self.values.shape[-2]:
            raise ValueError(f"patch values must be (n, C, s, s), got {self.values.shape}")
        n = self.values.shape[0]
        if self.origins.shape != (n, 3) or self.subject_ids.shape != (n,):
            raise ValueError("origins/subject_ids do not match the patch count")
        if self.values.shape[-1] < 2:
            raise ValueError("patch size must be >= 2")
        if self.metrics and len(self.metrics) != self.values.shape[1]:
            raise ValueError(f"{len(self.metrics)} metric names for {self.values.shape[1]} channels")
        return self

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def __getitem__(self, i: int) -> Patch:
        x, y, z = (int(v) for v in self.origins[i])
        return Patch(
            values=self.values[i],
            origin=(x, y, z),
            subject_id=str(self.subject_ids[i]),
            region=self.region,
            group=self.group,
        )

    @property
    def size(self) -> int:
        return int(self.values.shape[-1])

    @property
    def channels(self) -> int:
        return int(self.values.shape[1])

    @property
    def group(self) -> str:
        return self.metrics[0] if len(self.metrics) == 1 else STACK_GROUP

    def flat(self) -> np.ndarray:
        """Raw patch vectors, (n, C*s*s)."""
        return self.values.reshape(len(self), -1)

    def select_subjects(self, ids: Sequence[str]) -> "PatchSet":
        keep = np.isin(self.subject_ids, np.asarray(list(ids), dtype=str))
        return self.model_copy(update={
            "values": self.values[keep],
            "origins": self.origins[keep],
            "subject_ids": self.subject_ids[keep],
        })

    @classmethod
    def concat(cls, sets: Sequence["PatchSet"]) -> "PatchSet":
        first = sets[0]
        return cls(
            values=np.concatenate([s.values for s in sets], axis=0),
            origins=np.concatenate([s.origins for s in sets], axis=0),
            subject_ids=np.concatenate([s.subject_ids for s in sets], axis=0),
            region=first.region,
            metrics=first.metrics,
            norm_stats=first.norm_stats,
        )


class PatchBank(BaseModel):
    """Every scope's patches for a whole cohort."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    sets: Dict[str, PatchSet]
    scenario: str
    size: int
    stride: int
    coverage_min: float

    def scopes(self) -> List[str]:
        return list(self.sets)

    def select_subjects(self, ids: Sequence[str]) -> "PatchBank":
        return self.model_copy(update={
            "sets": {scope: s.select_subjects(ids) for scope, s in self.sets.items()}
        })
