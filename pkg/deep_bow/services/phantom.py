"""Mean-matched synthetic cohorts.

Controls are smooth, inter-metric-correlated noise fields. Patients follow
the same process plus a high-frequency texture perturbation inside a
contiguous lesion block: an in-plane checkerboard with a random per-voxel
amplitude, so the added variance sits at the lattice frequency and keeps its
phase across patches cut on an even stride. Every subject's region/metric
volume is then shifted so that its in-mask mean equals the control-population
mean, which leaves class information only in patch-scale texture.
"""
from __future__ import annotations

import logging
from typing import Dict, List, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from deep_bow.configs.logging_config import setup_logging
from deep_bow.schemas.volume import (
    Dataset,
    MetricVolume,
    PhantomSpec,
    SubjectRecord,
    ordered_regions,
)

setup_logging()
logger = logging.getLogger(__name__)

# (level, spatial scale); diffusivities in um^2/ms so every metric is O(1)
METRIC_LEVELS: Dict[str, Tuple[float, float]] = {
    "AWF": (0.45, 0.05),
    "DA": (2.0, 0.15),
    "De_par": (2.3, 0.15),
    "De_perp": (0.9, 0.10),
    "FA": (0.55, 0.06),
    "MD": (0.80, 0.06),
    "AK": (0.90, 0.08),
    "MK": (1.10, 0.08),
    "RK": (1.30, 0.10),
}
MEASUREMENT_NOISE = 0.1
TEXTURE_GAIN = 2.0
# relative spread of the per-voxel texture amplitude around 1
TEXTURE_JITTER = 0.5

CLINICAL_MEANS = np.array([45.0, 50.0, 55.0, 35.0])
CLINICAL_SDS = np.array([10.0, 10.0, 10.0, 12.0])
# Direction of impairment: lower Stroop/SDMT/CVLT, higher fatigue (FSS).
CLINICAL_DIRECTION = np.array([-1.0, -1.0, -1.0, 1.0])


def region_mask(dims: Tuple[int, int, int]) -> np.ndarray:
    """Elliptic cylinder inscribed in the box, indexed [z, y, x]."""
    nx, ny, nz = dims
    y, x = np.mgrid[0:ny, 0:nx]
    a = max(nx / 2.0, 0.5)
    b = max(ny / 2.0, 0.5)
    inside = ((x - (nx - 1) / 2.0) / a) ** 2 + ((y - (ny - 1) / 2.0) / b) ** 2 <= 1.0
    if not inside.any():
        inside[ny // 2, nx // 2] = True
    return np.repeat(inside[None, :, :], nz, axis=0)


def _smooth_field(rng: np.random.Generator, shape: Tuple[int, int, int], sigma: float) -> np.ndarray:
    field = rng.standard_normal(shape)
    if sigma > 0:
        field = gaussian_filter(field, sigma=(0.0, sigma, sigma), mode="reflect")
    std = field.std()
    return field / std if std > 0 else field


def _checkerboard(shape: Tuple[int, int, int]) -> np.ndarray:
    """+1/-1 alternating along x and y, constant along z."""
    nz, ny, nx = shape
    y, x = np.mgrid[0:ny, 0:nx]
    plane = np.where((x + y) % 2 == 0, 1.0, -1.0)
    return np.repeat(plane[None, :, :], nz, axis=0)


def _lesion_block(rng: np.random.Generator, shape: Tuple[int, int, int], fraction: float) -> Tuple[slice, slice, slice]:
    """Contiguous axis-aligned block spanning ``fraction`` of the x extent."""
    nz, ny, nx = shape
    width = max(1, int(np.ceil(fraction * nx)))
    x0 = int(rng.integers(0, nx - width + 1))
    return slice(0, nz), slice(0, ny), slice(x0, x0 + width)


def _raw_region(
    rng: np.random.Generator,
    spec: PhantomSpec,
    region: str,
    is_patient: bool,
) -> Dict[str, np.ndarray]:
    nx, ny, nz = spec.dims[region]
    shape = (nz, ny, nx)
    rho = spec.metric_correlation
    shared = _smooth_field(rng, shape, spec.smoothness)
    block = _lesion_block(rng, shape, spec.lesion_fraction)
    lesion_metrics = set(spec.lesion_metrics.get(region, []))
    checker = _checkerboard(shape)

    volumes = {}
    for metric in spec.metric_config[region]:
        level, scale = METRIC_LEVELS.get(metric, (1.0, 0.1))
        own = _smooth_field(rng, shape, spec.smoothness)
        field = np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * own
        field = field + MEASUREMENT_NOISE * rng.standard_normal(shape)
        texture = checker * (1.0 + TEXTURE_JITTER * rng.standard_normal(shape))
        values = level + scale * field
        if is_patient and metric in lesion_metrics and spec.effect_size > 0:
            values[block] += scale * spec.effect_size * TEXTURE_GAIN * texture[block]
        volumes[metric] = values
    return volumes


def _match_mean(values: np.ndarray, mask: np.ndarray, target: float) -> np.ndarray:
    """Shift so the float32 in-mask mean equals ``target``; two passes absorb rounding."""
    out = values.astype(np.float64)
    for _ in range(2):
        stored = out.astype(np.float32)
        residual = target - float(np.mean(stored[mask], dtype=np.float64))
        out = stored.astype(np.float64) + residual
    return out.astype(np.float32)


def generate_phantom_dataset(spec: PhantomSpec) -> Dataset:
    """Generate a deterministic mean-matched cohort from ``spec``."""
    root = np.random.SeedSequence(spec.seed)
    label_seq, tab_seq, *subject_seqs = root.spawn(spec.n_subjects + 2)

    labels = np.zeros(spec.n_subjects, dtype=np.int64)
    labels[np.random.default_rng(label_seq).permutation(spec.n_subjects)[: spec.n_patients]] = 1

    regions = ordered_regions(spec.metric_config)
    masks = {r: region_mask(spec.dims[r]) for r in regions}

    raw: List[Dict[str, Dict[str, np.ndarray]]] = []
    for i, seq in enumerate(subject_seqs):
        rng = np.random.default_rng(seq)
        raw.append({r: _raw_region(rng, spec, r, bool(labels[i])) for r in regions})

    # control-population target per (region, metric), measured on stored float32 values
    targets: Dict[Tuple[str, str], float] = {}
    controls = np.flatnonzero(labels == 0)
    reference = controls if controls.size else np.arange(spec.n_subjects)
    for r in regions:
        for m in spec.metric_config[r]:
            targets[(r, m)] = float(np.mean([
                np.mean(raw[i][r][m].astype(np.float32)[masks[r]], dtype=np.float64) for i in reference
            ]))

    tab_rng = np.random.default_rng(tab_seq)
    subjects = []
    for i in range(spec.n_subjects):
        age = float(tab_rng.uniform(18.0, 64.0))
        sex = float(tab_rng.integers(0, 2))
        shift = spec.clinical_gap * CLINICAL_SDS * CLINICAL_DIRECTION * labels[i]
        clinical = CLINICAL_MEANS + shift + CLINICAL_SDS * tab_rng.standard_normal(4)
        region_volumes = {
            r: {
                m: MetricVolume.from_arrays(_match_mean(raw[i][r][m], masks[r], targets[(r, m)]), masks[r])
                for m in spec.metric_config[r]
            }
            for r in regions
        }
        subjects.append(SubjectRecord(
            id=f"sub-{i + 1:03d}",
            label=int(labels[i]),
            demographics=(age, sex),
            clinical=tuple(float(c) for c in clinical),
            regions=region_volumes,
        ))

    logger.info(
        f"Generated phantom cohort: {spec.n_subjects} subjects ({spec.n_patients} patients), "
        f"effect_size={spec.effect_size}, seed={spec.seed}"
    )
    return Dataset(subjects=subjects, metric_config=spec.metric_config)
