"""Fitted artifacts: auto-encoders, codebooks, SVMs and feature selections."""
from __future__ import annotations

import math
from typing import List, Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from deep_bow.errors import InvalidArch


class CaeArch(BaseModel):
    """Encoder widths per stage; the last width is the latent channel count.

    Every stage halves the spatial size, so ``size`` must be divisible by
    ``2 ** len(widths)``.
    """
    model_config = ConfigDict(frozen=True)

    size: int = 16
    channels: int = 1
    widths: Tuple[int, ...] = (8, 16, 32, 32)

    @model_validator(mode="after")
    def _check(self) -> "CaeArch":
        if self.channels < 1 or not self.widths or any(w < 1 for w in self.widths):
            raise InvalidArch(f"invalid channels/widths: {self.channels}, {self.widths}")
        if self.size < 2 or self.size % (2 ** len(self.widths)) != 0:
            raise InvalidArch(
                f"size {self.size} is not divisible by 2**{len(self.widths)} "
                f"({len(self.widths)} pooling stages)"
            )
        return self

    @classmethod
    def build(cls, size: int, channels: int, hidden: List[int], latent: int) -> "CaeArch":
        return cls(size=size, channels=channels, widths=tuple(hidden) + (latent,))

    @property
    def stages(self) -> int:
        return len(self.widths)

    @property
    def latent_side(self) -> int:
        return self.size // (2 ** self.stages)

    @property
    def latent_dim(self) -> int:
        return self.widths[-1] * self.latent_side ** 2

    def conv_shapes(self) -> List[Tuple[int, int]]:
        """(c_out, c_in) of every conv layer, encoder first."""
        enc_in = (self.channels,) + self.widths[:-1]
        encoder = list(zip(self.widths, enc_in))
        dec_out = tuple(reversed(self.widths[:-1])) + (self.channels,)
        dec_in = tuple(reversed(self.widths))
        return encoder + list(zip(dec_out, dec_in))

    def parameter_count(self) -> int:
        return sum(9 * c_in * c_out + c_out for c_out, c_in in self.conv_shapes())


class ConvLayer(BaseModel):
    """3x3 kernel ``weight`` (c_out, c_in, 3, 3) and ``bias`` (c_out,)."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    weight: np.ndarray
    bias: np.ndarray


class AutoEncoderModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    arch: CaeArch
    layers: List[ConvLayer]
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "AutoEncoderModel":
        shapes = self.arch.conv_shapes()
        if len(shapes) != len(self.layers):
            raise InvalidArch(f"expected {len(shapes)} conv layers, got {len(self.layers)}")
        for (c_out, c_in), layer in zip(shapes, self.layers):
            if layer.weight.shape != (c_out, c_in, 3, 3) or layer.bias.shape != (c_out,):
                raise InvalidArch(
                    f"layer shapes {layer.weight.shape}/{layer.bias.shape} do not match ({c_out}, {c_in})"
                )
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise ValueError("auto-encoder parameters must be finite")
        return self

    @property
    def dtype(self) -> np.dtype:
        return self.layers[0].weight.dtype


class Gradients(BaseModel):
    """Loss gradient per conv layer (same shapes as the model) plus the batch loss."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    layers: List[ConvLayer]
    loss: float


class Codebook(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    centroids: np.ndarray  # (k, d)
    feature_kind: Literal["raw", "latent"] = "latent"
    scope: str = ""
    fit_seed: int = 0
    inertia: float = 0.0
    n_iter: int = 0
    inertia_trace: List[float] = []

    @model_validator(mode="after")
    def _check(self) -> "Codebook":
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise ValueError(f"centroids must be (k, d) with k >= 1, got {self.centroids.shape}")
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("centroids must be finite")
        return self

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def d(self) -> int:
        return int(self.centroids.shape[1])


class BowHistogram(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    scope: str
    bins: np.ndarray


class SvmParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    C: float
    gamma: float

    @model_validator(mode="after")
    def _check(self) -> "SvmParams":
        for name, v in (("C", self.C), ("gamma", self.gamma)):
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        return self


class SvmModel(BaseModel):
    """Decision f(x) = sum_i dual_coef_i k(sv_i, x) + bias, dual_coef = alpha * y."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    support_vectors: np.ndarray
    dual_coef: np.ndarray
    support_indices: np.ndarray
    bias: float
    params: SvmParams
    feature_names: List[str] = []
    dual_objective: float = 0.0
    n_iter: int = 0
    converged: bool = True


class SelectionResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    selected: List[int]
    names: List[str]
    accuracy_curve: List[float]
    budget: int
    method: Literal["forward", "correlation"] = "forward"

    @model_validator(mode="after")
    def _check(self) -> "SelectionResult":
        if len(self.selected) > self.budget:
            raise ValueError("more features selected than the budget allows")
        if len(self.accuracy_curve) != len(self.selected) or len(self.names) != len(self.selected):
            raise ValueError("selection curve/names must parallel the selected indices")
        return self


class CorrelationRanking(BaseModel):
    model_config = ConfigDict(frozen=True)

    order: List[int]
    scores: List[float]  # |r| per column, original column order
