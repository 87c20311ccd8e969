"""Subject-level feature vectors, the region-mean baseline and standardization."""
from __future__ import annotations

import logging
from collections import Counter
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd
from sklearn.preprocessing import StandardScaler

from deep_bow.configs.logging_config import setup_logging
from deep_bow.errors import MissingVolume, SchemaError, ScopeMismatch
from deep_bow.schemas.features import FeatureMatrix, FeatureVector, StandardizeParams
from deep_bow.schemas.models import BowHistogram
from deep_bow.schemas.patches import STACK_GROUP, scope_name, split_scope
from deep_bow.schemas.volume import (
    CLINICAL_NAMES,
    DEMOGRAPHIC_NAMES,
    REGION_ABBREV,
    REGION_LABELS,
    SubjectRecord,
    ordered_regions,
    region_metric_pairs,
)

setup_logging()
logger = logging.getLogger(__name__)

MIN_STD = 1e-12
LABEL_COLUMN = "label"
ID_COLUMN = "subject_id"

_REGION_BY_ABBREV = {abbrev: region for region, abbrev in REGION_ABBREV.items()}


def tabular_names() -> List[str]:
    return [f"demo/{n}" for n in DEMOGRAPHIC_NAMES] + [f"clin/{n}" for n in CLINICAL_NAMES]


def image_scopes(metric_config: Dict[str, List[str]], scenario: str) -> List[str]:
    """Histogram scopes in feature order."""
    if scenario == "stacked":
        return [scope_name(r, STACK_GROUP) for r in ordered_regions(metric_config)]
    return [scope_name(r, m) for r, m in region_metric_pairs(metric_config)]


def bin_names(scope: str, k: int) -> List[str]:
    region, group = split_scope(scope)
    width = max(2, len(str(k - 1)))
    prefix = f"{REGION_ABBREV[region]}/{group}"
    return [f"{prefix}/bin{w:0{width}d}" for w in range(k)]


def assemble_features(
    histograms: Sequence[BowHistogram],
    demographics: Sequence[float],
    clinical: Sequence[float],
    metric_config: Dict[str, List[str]],
    scenario: str = "per-metric",
) -> FeatureVector:
    """Concatenate histograms (cc, then thalamus), demographics and clinical scores."""
    expected = image_scopes(metric_config, scenario)
    by_scope = {h.scope: h for h in histograms}
    if len(by_scope) != len(histograms) or set(by_scope) != set(expected):
        raise ScopeMismatch(
            f"histogram scopes {sorted(h.scope for h in histograms)} do not cover {expected}"
        )
    values: List[np.ndarray] = []
    names: List[str] = []
    for scope in expected:
        bins = np.asarray(by_scope[scope].bins, dtype=np.float64)
        values.append(bins)
        names.extend(bin_names(scope, len(bins)))
    values.append(np.asarray(tuple(demographics) + tuple(clinical), dtype=np.float64))
    names.extend(tabular_names())
    return FeatureVector(values=np.concatenate(values), names=names)


def region_mean_features(subject: SubjectRecord, metric_config: Dict[str, List[str]]) -> FeatureVector:
    means = []
    names = []
    for region, metric in region_metric_pairs(metric_config):
        volume = subject.regions.get(region, {}).get(metric)
        if volume is None:
            raise MissingVolume(f"subject {subject.id} has no {region}/{metric} volume")
        means.append(volume.in_mask_mean())
        names.append(f"{REGION_ABBREV[region]}/{metric}/mean")
    values = np.concatenate([np.asarray(means, dtype=np.float64), subject.tabular()])
    return FeatureVector(values=values, names=names + tabular_names())


def standardize_fit(train: FeatureMatrix | np.ndarray) -> StandardizeParams:
    values = train.values if isinstance(train, FeatureMatrix) else np.asarray(train, dtype=np.float64)
    scaler = StandardScaler().fit(values)
    names = train.names if isinstance(train, FeatureMatrix) else []
    return StandardizeParams(scaler=scaler, constant=(np.sqrt(scaler.var_) < MIN_STD).tolist(), names=names)


def standardize_values(values: np.ndarray, params: StandardizeParams) -> np.ndarray:
    if values.shape[-1] != params.scaler.n_features_in_:
        raise ScopeMismatch(
            f"{values.shape[-1]} columns against {params.scaler.n_features_in_} standardizer columns"
        )
    out = params.scaler.transform(values)
    out[:, np.asarray(params.constant, dtype=bool)] = 0.0
    return out


def standardize_apply(matrix: FeatureMatrix, params: StandardizeParams) -> FeatureMatrix:
    if params.names and params.names != matrix.names:
        raise ScopeMismatch("standardizer was fitted on different feature columns")
    return matrix.model_copy(update={"values": standardize_values(matrix.values, params)})


def feature_group(name: str) -> str:
    """Display label of a column: ``thal/FA/bin03`` -> ``FA in Thal``."""
    parts = name.split("/")
    if parts[0] in ("demo", "clin"):
        return parts[1]
    region = _REGION_BY_ABBREV.get(parts[0], parts[0])
    label = REGION_LABELS.get(region, parts[0])
    if len(parts) > 1 and parts[1] == STACK_GROUP:
        return f"words in {label}"
    return f"{parts[1]} in {label}"


def group_counts(names: Sequence[str]) -> Dict[str, int]:
    """Selected names aggregated per (region, metric); most frequent first."""
    counts = Counter(feature_group(n) for n in names)
    first_seen = {}
    for n in names:
        first_seen.setdefault(feature_group(n), len(first_seen))
    ordered = sorted(counts, key=lambda g: (-counts[g], first_seen[g]))
    return {g: counts[g] for g in ordered}


def write_feature_csv(matrix: FeatureMatrix, path: str | Path) -> Path:
    frame = pd.DataFrame(matrix.values, columns=matrix.names)
    frame.insert(0, ID_COLUMN, matrix.subject_ids)
    frame[LABEL_COLUMN] = matrix.labels
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Wrote {matrix.n_samples}x{matrix.dim} feature matrix to {path}")
    return path


def read_feature_csv(path: str | Path) -> FeatureMatrix:
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise SchemaError(f"cannot read feature csv {path}: {e}") from e
    if LABEL_COLUMN not in frame.columns:
        raise SchemaError(f"feature csv {path} has no '{LABEL_COLUMN}' column")
    if ID_COLUMN in frame.columns:
        ids = frame.pop(ID_COLUMN).astype(str).tolist()
    else:
        ids = [f"row-{i:03d}" for i in range(len(frame))]
    labels = frame.pop(LABEL_COLUMN).to_numpy(dtype=np.int64)
    return FeatureMatrix(
        values=frame.to_numpy(dtype=np.float64),
        names=[str(c) for c in frame.columns],
        labels=labels,
        subject_ids=ids,
    )
