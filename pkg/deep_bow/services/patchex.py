from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
from joblib import Parallel, delayed
from numpy.lib.stride_tricks import sliding_window_view

from deep_bow.configs.logging_config import setup_logging
from deep_bow.configs.pipeline_config import PatchConfig
from deep_bow.errors import (
    DegenerateChannel,
    EmptyPatchSet,
    EmptyResult,
    OriginMismatch,
    PatchGeometryError,
    ShapeMismatch,
)
from deep_bow.schemas.patches import STACK_GROUP, NormStats, PatchBank, PatchSet, scope_name
from deep_bow.schemas.volume import Dataset, MetricVolume, SubjectRecord, ordered_regions

setup_logging()
logger = logging.getLogger(__name__)

MIN_STD = 1e-12


def extract_patches(
    volume: MetricVolume,
    size: int = 16,
    stride: int = 4,
    coverage_min: float = 0.5,
    subject_id: str = "",
    region: str = "",
    metric: str = "",
) -> PatchSet:
    """Overlapping axial patches whose in-window mask fraction reaches ``coverage_min``.

    Windows sit on the stride lattice of every z slice; output order is z,
    then y, then x ascending.
    """
    nx, ny, _ = volume.dims
    if size < 2 or size > min(nx, ny):
        raise PatchGeometryError(f"patch size {size} does not fit volume dims {volume.dims}")
    if stride < 1:
        raise PatchGeometryError(f"stride must be >= 1, got {stride}")
    if not 0.0 < coverage_min <= 1.0:
        raise PatchGeometryError(f"coverage_min must lie in (0, 1], got {coverage_min}")

    windows = sliding_window_view(volume.values, (size, size), axis=(1, 2))[:, ::stride, ::stride]
    mask_windows = sliding_window_view(volume.mask, (size, size), axis=(1, 2))[:, ::stride, ::stride]
    coverage = mask_windows.sum(axis=(-1, -2)) / float(size * size)
    keep = coverage >= coverage_min
    if not keep.any():
        raise EmptyResult(
            f"no {size}x{size} window reaches coverage {coverage_min} "
            f"({subject_id or 'volume'} {region}/{metric})"
        )

    zyx = np.argwhere(keep)
    origins = np.stack([zyx[:, 2] * stride, zyx[:, 1] * stride, zyx[:, 0]], axis=1).astype(np.int64)
    values = windows[keep].astype(np.float64)[:, None, :, :]
    return PatchSet(
        values=values,
        origins=origins,
        subject_ids=np.full(len(values), subject_id),
        region=region,
        metrics=(metric,) if metric else (),
    )


def stack_metrics(per_metric_sets: Sequence[PatchSet]) -> PatchSet:
    """Stack co-registered per-metric sets as channels, in input order."""
    if not per_metric_sets:
        raise EmptyPatchSet("nothing to stack")
    first = per_metric_sets[0]
    if len(per_metric_sets) == 1:
        return first
    for other in per_metric_sets[1:]:
        if (
            other.size != first.size
            or not np.array_equal(other.origins, first.origins)
            or not np.array_equal(other.subject_ids, first.subject_ids)
        ):
            raise OriginMismatch("per-metric patch sets were not extracted on identical windows")
    metrics = tuple(m for s in per_metric_sets for m in s.metrics)
    return PatchSet(
        values=np.concatenate([s.values for s in per_metric_sets], axis=1),
        origins=first.origins.copy(),
        subject_ids=first.subject_ids.copy(),
        region=first.region,
        metrics=metrics,
    )


def fit_norm(train: PatchSet) -> NormStats:
    if len(train) == 0:
        raise EmptyPatchSet(f"cannot fit normalization on an empty {train.region}/{train.group} set")
    per_channel = np.moveaxis(train.values, 1, 0).reshape(train.channels, -1)
    mean = per_channel.mean(axis=1, dtype=np.float64)
    std = per_channel.std(axis=1, dtype=np.float64)
    degenerate = np.flatnonzero(std < MIN_STD)
    if degenerate.size:
        names = [train.metrics[c] if train.metrics else str(c) for c in degenerate]
        raise DegenerateChannel(f"constant channel(s) {names} in {train.region} patches")
    return NormStats(mean=mean.tolist(), std=std.tolist())


def apply_norm(patches: PatchSet, norm_stats: NormStats) -> PatchSet:
    if norm_stats.channels != patches.channels:
        raise ShapeMismatch(
            f"normalizer has {norm_stats.channels} channels, patches have {patches.channels}"
        )
    mean = np.asarray(norm_stats.mean)[None, :, None, None]
    std = np.asarray(norm_stats.std)[None, :, None, None]
    return patches.model_copy(update={
        "values": (patches.values - mean) / std,
        "norm_stats": norm_stats,
    })


def expand_channels(patches: PatchSet, channel_order: Sequence[str]) -> PatchSet:
    """Lay channels out in ``channel_order``; absent metrics become zero channels."""
    n, _, s, _ = patches.values.shape
    out = np.zeros((n, len(channel_order), s, s), dtype=patches.values.dtype)
    for c, metric in enumerate(patches.metrics):
        out[:, list(channel_order).index(metric)] = patches.values[:, c]
    return patches.model_copy(update={"values": out, "metrics": tuple(channel_order)})


def extract_subject_patches(
    subject: SubjectRecord,
    metric_config: Dict[str, List[str]],
    geometry: PatchConfig,
    scenario: str,
) -> Dict[str, PatchSet]:
    sets: Dict[str, PatchSet] = {}
    for region in ordered_regions(metric_config):
        per_metric = [
            extract_patches(
                subject.regions[region][metric],
                geometry.size,
                geometry.stride,
                geometry.coverage_min,
                subject_id=subject.id,
                region=region,
                metric=metric,
            )
            for metric in metric_config[region]
        ]
        if scenario == "stacked":
            sets[scope_name(region, STACK_GROUP)] = stack_metrics(per_metric)
        else:
            for metric, patch_set in zip(metric_config[region], per_metric):
                sets[scope_name(region, metric)] = patch_set
    return sets


def extract_dataset_patches(
    dataset: Dataset,
    geometry: PatchConfig,
    scenario: str = "per-metric",
    jobs: int = 1,
) -> PatchBank:
    """Extract every subject's patches; subjects may be processed in parallel."""
    per_subject = Parallel(n_jobs=jobs)(
        delayed(extract_subject_patches)(s, dataset.metric_config, geometry, scenario)
        for s in dataset.subjects
    )
    scopes = list(per_subject[0]) if per_subject else []
    sets = {scope: PatchSet.concat([p[scope] for p in per_subject]) for scope in scopes}
    for scope, patch_set in sets.items():
        logger.info(f"Extracted {len(patch_set)} patches for {scope} ({patch_set.channels} channel(s))")
    return PatchBank(
        sets=sets,
        scenario=scenario,
        size=geometry.size,
        stride=geometry.stride,
        coverage_min=geometry.coverage_min,
    )


def save_patch_bank(bank: PatchBank, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = {
        "scenario": bank.scenario,
        "size": bank.size,
        "stride": bank.stride,
        "coverage_min": bank.coverage_min,
        "scopes": {},
    }
    for scope, patch_set in bank.sets.items():
        file_name = scope.replace("/", "__") + ".npz"
        np.savez_compressed(
            out_dir / file_name,
            values=patch_set.values,
            origins=patch_set.origins,
            subject_ids=patch_set.subject_ids,
        )
        index["scopes"][scope] = {
            "file": file_name,
            "region": patch_set.region,
            "metrics": list(patch_set.metrics),
        }
    (out_dir / "patch_bank.json").write_text(json.dumps(index, indent=2))
    return out_dir


def load_patch_bank(in_dir: str | Path) -> PatchBank:
    in_dir = Path(in_dir)
    index = json.loads((in_dir / "patch_bank.json").read_text())
    sets = {}
    for scope, meta in index["scopes"].items():
        with np.load(in_dir / meta["file"]) as arrays:
            sets[scope] = PatchSet(
                values=arrays["values"],
                origins=arrays["origins"],
                subject_ids=arrays["subject_ids"],
                region=meta["region"],
                metrics=tuple(meta["metrics"]),
            )
    return PatchBank(
        sets=sets,
        scenario=index["scenario"],
        size=index["size"],
        stride=index["stride"],
        coverage_min=index["coverage_min"],
    )
