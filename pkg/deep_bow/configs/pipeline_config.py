"""Pipeline configuration: one pydantic document drives every subcommand."""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from deep_bow.errors import ConfigError

Family = Literal["deep-bow", "raw-bow", "region-mean"]
Scenario = Literal["per-metric", "stacked"]
Protocol = Literal["cv", "heldout", "both"]


def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("DEEP_BOW_JOBS", "1")))
    except ValueError:
        return 1


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PathsConfig(_Section):
    manifest: Optional[str] = None
    out_dir: str = "runs/default"
    # Precomputed feature CSV for `evaluate --features`.
    features: Optional[str] = None


class PatchConfig(_Section):
    size: int = Field(16, ge=2)
    stride: int = Field(4, ge=1)
    coverage_min: float = Field(0.5, gt=0.0, le=1.0)


class TrainConfig(_Section):
    epochs: int = Field(10, ge=0)
    batch_size: int = Field(500, ge=1)
    learning_rate: float = Field(0.0003, ge=0.0)
    seed: int = Field(0, ge=0)


class CaeConfig(_Section):
    train: TrainConfig = TrainConfig()
    widths: List[int] = [8, 16, 32]
    latent_per_metric: int = Field(32, ge=1)
    latent_stacked: int = Field(64, ge=1)
    init_seed: int = Field(0, ge=0)
    encode_batch: int = Field(2048, ge=1)


class VocabConfig(_Section):
    words: int = Field(20, ge=2)
    tol: float = Field(1e-6, gt=0.0)
    max_iters: int = Field(300, ge=1)


class SelectionConfig(_Section):
    method: Literal["forward", "correlation"] = "forward"
    budget: int = Field(10, ge=1)
    inner_folds: int = Field(5, ge=2)
    # SVM used inside the wrapper; gamma is gamma_scale / subset size.
    C: float = Field(1.0, gt=0.0)
    gamma_scale: float = Field(1.0, gt=0.0)


class SvmConfig(_Section):
    c_grid: List[float] = [0.1, 1.0, 10.0, 100.0]
    # Multiplied by 1/d, d = number of selected features.
    gamma_grid: List[float] = [0.001, 0.01, 0.1, 1.0]
    grid_folds: int = Field(5, ge=2)
    tol: float = Field(1e-3, gt=0.0)
    max_passes: int = Field(100, ge=1)


class EvalConfig(_Section):
    protocol: Protocol = "cv"
    repeats: int = Field(50, ge=1)
    validation_fraction: float = Field(0.2, gt=0.0, lt=1.0)
    heldout_size: int = Field(20, ge=1)
    rounds: int = Field(6, ge=1)
    ensemble_size: int = Field(50, ge=1)
    subset_curve: bool = True


class PipelineConfig(_Section):
    paths: PathsConfig = PathsConfig()
    family: Family = "deep-bow"
    scenario: Scenario = "per-metric"
    patch: PatchConfig = PatchConfig()
    cae: CaeConfig = CaeConfig()
    vocab: VocabConfig = VocabConfig()
    selection: SelectionConfig = SelectionConfig()
    svm: SvmConfig = SvmConfig()
    eval: EvalConfig = EvalConfig()
    seed: int = Field(7, ge=0)
    jobs: int = Field(default_factory=_default_jobs, ge=1)
    strict: bool = False
    strict_leakage: bool = False

    @model_validator(mode="after")
    def _check_cross_section(self) -> "PipelineConfig":
        stages = len(self.cae.widths) + 1
        if self.family == "deep-bow" and self.patch.size % (2 ** stages) != 0:
            raise ValueError(
                f"patch size {self.patch.size} must be divisible by 2**{stages} "
                f"for a {stages}-stage auto-encoder"
            )
        if not self.svm.c_grid or not self.svm.gamma_grid:
            raise ValueError("svm grid must not be empty")
        if any(v <= 0 for v in self.svm.c_grid + self.svm.gamma_grid):
            raise ValueError("svm grid values must be positive")
        if any(w < 1 for w in self.cae.widths):
            raise ValueError("cae widths must be positive")
        return self

    def latent_dim(self) -> int:
        return self.cae.latent_stacked if self.scenario == "stacked" else self.cae.latent_per_metric


def _validate(payload: dict[str, Any]) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigError(f"invalid pipeline config: {e}") from e


def load_config(path: Optional[str | Path]) -> PipelineConfig:
    """Read a JSON config; a missing path yields the defaults."""
    if path is None:
        return PipelineConfig()
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return _validate(payload)


def apply_overrides(config: PipelineConfig, **flags: Any) -> PipelineConfig:
    """Apply CLI flag overrides (flags win) and re-validate.

    Recognised keys: seed, out, jobs, family, scenario, words, manifest,
    features, strict, strict_leakage, protocol, repeats.
    """
    payload = config.model_dump()
    mapping = {
        "seed": ("seed",),
        "out": ("paths", "out_dir"),
        "jobs": ("jobs",),
        "family": ("family",),
        "scenario": ("scenario",),
        "words": ("vocab", "words"),
        "manifest": ("paths", "manifest"),
        "features": ("paths", "features"),
        "strict": ("strict",),
        "strict_leakage": ("strict_leakage",),
        "protocol": ("eval", "protocol"),
        "repeats": ("eval", "repeats"),
    }
    for key, value in flags.items():
        if value is None or key not in mapping:
            continue
        *parents, leaf = mapping[key]
        target = payload
        for p in parents:
            target = target[p]
        target[leaf] = value
    return _validate(payload)


def config_echo(config: PipelineConfig) -> dict[str, Any]:
    return config.model_dump(mode="json")
