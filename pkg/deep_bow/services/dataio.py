from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from deep_bow.configs.logging_config import setup_logging
from deep_bow.errors import (
    BadMagic,
    MissingVolume,
    NonFinite,
    SchemaError,
    TruncatedFile,
    VolumeIOError,
)
from deep_bow.schemas.volume import Dataset, MetricVolume, SubjectRecord, ordered_regions

setup_logging()
logger = logging.getLogger(__name__)

MAGIC = b"DBV1"
HEADER_BYTES = 16


class VolumeRef(BaseModel):
    model_config = ConfigDict(extra="forbid")

    volume: str
    mask: Optional[str] = None


class SubjectEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    label: int
    demographics: Tuple[float, float]
    clinical: Tuple[float, float, float, float]
    regions: Dict[str, Dict[str, VolumeRef]]


class Manifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    metric_config: Dict[str, List[str]]
    subjects: List[SubjectEntry]


def companion_mask_path(path: str | Path) -> Path:
    """``name.dbv`` -> ``name.mask.dbv``."""
    path = Path(path)
    return path.with_name(f"{path.stem}.mask{path.suffix or '.dbv'}")


def _read_grid(path: Path) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise VolumeIOError(f"cannot read {path}: {e}") from e
    if len(raw) < HEADER_BYTES or raw[:4] != MAGIC:
        raise BadMagic(f"{path} is not a DBV1 file")
    nx, ny, nz = (int(v) for v in np.frombuffer(raw, dtype="<u4", count=3, offset=4))
    count = nx * ny * nz
    if count == 0:
        raise TruncatedFile(f"{path} declares an empty grid ({nx}, {ny}, {nz})")
    if len(raw) - HEADER_BYTES < 4 * count:
        raise TruncatedFile(
            f"{path}: payload holds {(len(raw) - HEADER_BYTES) // 4} of {count} values"
        )
    values = np.frombuffer(raw, dtype="<f4", count=count, offset=HEADER_BYTES)
    if not np.all(np.isfinite(values)):
        raise NonFinite(f"{path} contains NaN/Inf values")
    return values.astype(np.float32).reshape(nz, ny, nx)


def _write_grid(values: np.ndarray, path: Path) -> None:
    nz, ny, nx = values.shape
    header = MAGIC + np.asarray([nx, ny, nz], dtype="<u4").tobytes()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(header + np.ascontiguousarray(values, dtype="<f4").tobytes())
    except OSError as e:
        raise VolumeIOError(f"cannot write {path}: {e}") from e


def read_volume(path: str | Path, mask_path: Optional[str | Path] = None) -> MetricVolume:
    """Read a DBV1 volume and its mask.

    The mask comes from ``mask_path`` or, when that is not given, from the
    companion ``.mask.dbv`` file if it exists; otherwise every voxel is in
    the region. Mask values are thresholded at 0.5.
    """
    path = Path(path)
    values = _read_grid(path)
    mask_file = Path(mask_path) if mask_path is not None else companion_mask_path(path)
    if mask_file.exists():
        mask_values = _read_grid(mask_file)
        if mask_values.shape != values.shape:
            raise SchemaError(f"mask {mask_file} has dims differing from {path}")
        mask = mask_values >= 0.5
    elif mask_path is not None:
        raise MissingVolume(f"mask file {mask_file} does not exist")
    else:
        mask = None
    return MetricVolume.from_arrays(values, mask)


def write_volume(volume: MetricVolume, path: str | Path, mask_path: Optional[str | Path] = None) -> None:
    """Write the values as DBV1; the mask is written only when ``mask_path`` is given."""
    _write_grid(volume.values, Path(path))
    if mask_path is not None:
        _write_grid(volume.mask.astype(np.float32), Path(mask_path))


def load_dataset(manifest_path: str | Path) -> Dataset:
    manifest_path = Path(manifest_path)
    try:
        payload = json.loads(manifest_path.read_text())
    except OSError as e:
        raise MissingVolume(f"cannot read manifest {manifest_path}: {e}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"manifest {manifest_path} is not valid JSON: {e}") from e
    try:
        manifest = Manifest.model_validate(payload)
    except ValidationError as e:
        raise SchemaError(f"manifest {manifest_path} does not match the schema: {e}") from e

    base = manifest_path.parent
    subjects: List[SubjectRecord] = []
    for entry in manifest.subjects:
        regions: Dict[str, Dict[str, MetricVolume]] = {}
        for region, metrics in entry.regions.items():
            regions[region] = {}
            for metric, ref in metrics.items():
                volume_file = base / ref.volume
                if not volume_file.exists():
                    raise MissingVolume(f"subject {entry.id}: {region}/{metric} volume {volume_file} missing")
                mask_file = base / ref.mask if ref.mask else None
                regions[region][metric] = read_volume(volume_file, mask_file)
        subjects.append(SubjectRecord(
            id=entry.id,
            label=entry.label,
            demographics=entry.demographics,
            clinical=entry.clinical,
            regions=regions,
        ))

    dataset = Dataset(subjects=subjects, metric_config=manifest.metric_config)
    pos, neg = dataset.class_counts()
    logger.info(
        f"Loaded {len(subjects)} subjects from {manifest_path} "
        f"({pos} positive, {neg} negative, {len(dataset.pairs())} region/metric pairs)"
    )
    return dataset


def write_dataset(dataset: Dataset, out_dir: str | Path) -> Path:
    """Write every volume and mask plus ``manifest.json`` under ``out_dir``."""
    out_dir = Path(out_dir)
    entries = []
    for subject in dataset.subjects:
        regions: Dict[str, Dict[str, dict]] = {}
        for region in ordered_regions(dataset.metric_config):
            regions[region] = {}
            for metric in dataset.metric_config[region]:
                volume = subject.regions[region][metric]
                rel = Path("volumes") / subject.id / f"{region}_{metric}.dbv"
                rel_mask = companion_mask_path(rel)
                write_volume(volume, out_dir / rel, out_dir / rel_mask)
                regions[region][metric] = {"volume": rel.as_posix(), "mask": rel_mask.as_posix()}
        entries.append({
            "id": subject.id,
            "label": subject.label,
            "demographics": list(subject.demographics),
            "clinical": list(subject.clinical),
            "regions": regions,
        })
    manifest = {"metric_config": dataset.metric_config, "subjects": entries}
    manifest_path = out_dir / "manifest.json"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest_path.write_text(json.dumps(manifest, indent=2))
    except OSError as e:
        raise VolumeIOError(f"cannot write manifest {manifest_path}: {e}") from e
    logger.info(f"Wrote {len(entries)} subjects to {out_dir}")
    return manifest_path
