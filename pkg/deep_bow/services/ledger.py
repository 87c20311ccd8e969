from __future__ import annotations

import logging
from typing import Dict, Iterable, List, Sequence

from pydantic import BaseModel, ConfigDict

from deep_bow.configs.logging_config import setup_logging
from deep_bow.errors import LeakageError

setup_logging()
logger = logging.getLogger(__name__)

POOL_SCOPE = "pool"


class FitRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    scope: str
    stage: str
    subject_ids: tuple[str, ...]


class FitLedger:
    """Log of the subject ids every fitted object consumed.

    Scopes are slash-separated (``cv/rep007``, ``heldout/round2/m13``); a
    held-out set declared for a scope must not appear in any fit of that
    scope or its children.
    """

    def __init__(self, records: Iterable[FitRecord] = ()):
        self.records: List[FitRecord] = list(records)

    def record(self, scope: str, stage: str, subject_ids: Sequence[str]) -> None:
        ids = tuple(sorted(str(s) for s in subject_ids))
        self.records.append(FitRecord(scope=scope, stage=stage, subject_ids=ids))
        logger.debug(f"fit [{scope}] {stage}: {len(ids)} subjects {list(ids)}")

    def extend(self, other: "FitLedger") -> None:
        self.records.extend(other.records)

    def within(self, scope: str) -> List[FitRecord]:
        return [r for r in self.records if r.scope == scope or r.scope.startswith(scope + "/")]

    def audit(self, held_out: Dict[str, Sequence[str]]) -> int:
        """Raise LeakageError if a held-out id entered a fit of its scope; returns the records checked."""
        checked = 0
        for scope, ids in held_out.items():
            forbidden = set(ids)
            for r in self.within(scope):
                checked += 1
                leaked = forbidden.intersection(r.subject_ids)
                if leaked:
                    raise LeakageError(
                        f"{r.stage} fit in scope {r.scope} consumed held-out subjects {sorted(leaked)}"
                    )
        logger.info(f"Leakage audit passed: {checked} fit records over {len(held_out)} scopes")
        return checked

    def to_rows(self) -> List[Dict[str, object]]:
        return [
            {"scope": r.scope, "stage": r.stage, "n_subjects": len(r.subject_ids), "subject_ids": " ".join(r.subject_ids)}
            for r in self.records
        ]

    def __len__(self) -> int:
        return len(self.records)
