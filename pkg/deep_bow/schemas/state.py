from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict

from deep_bow.configs.pipeline_config import PipelineConfig
from deep_bow.schemas.features import FeatureMatrix
from deep_bow.schemas.patches import PatchBank
from deep_bow.schemas.reports import CohortHistograms, CvReport, HeldoutReport
from deep_bow.schemas.volume import Dataset


class Step(BaseModel):
    step: str
    executed: bool


class PipelineState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    config: PipelineConfig
    steps: List[Step] = []
    current_step: str = ""
    dataset: Optional[Dataset] = None
    bank: Optional[PatchBank] = None
    # Featurizer and FitLedger instances; typed loosely to keep schemas free of services
    featurizer: Optional[Any] = None
    ledger: Optional[Any] = None
    features: Optional[FeatureMatrix] = None
    cohort: Optional[CohortHistograms] = None
    cv_report: Optional[CvReport] = None
    heldout_report: Optional[HeldoutReport] = None
    timings: Dict[str, float] = {}
    outputs: List[str] = []
    notes: List[str] = []
