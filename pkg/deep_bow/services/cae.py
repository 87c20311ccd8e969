"""Convolutional auto-encoder with hand-written backpropagation.

Encoder stage: conv3x3(pad 1) -> ReLU -> 2x2 max-pool.
Decoder stage: 2x nearest upsample -> conv3x3(pad 1) -> ReLU, the last
stage linear. The latent is the flattened output of the last encoder stage.

Activations are kept in the model dtype (float32 for training, float64
for gradient checks); parameter gradients and the loss are accumulated in
float64.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from deep_bow.configs.logging_config import setup_logging
from deep_bow.configs.pipeline_config import TrainConfig
from deep_bow.errors import EmptyPatchSet, NumericError, ShapeMismatch
from deep_bow.schemas.models import AutoEncoderModel, CaeArch, ConvLayer, Gradients
from deep_bow.schemas.patches import Patch, PatchSet

setup_logging()
logger = logging.getLogger(__name__)

BatchLike = Union[PatchSet, np.ndarray]


# ---- layer primitives -------------------------------------------------------

def _im2col(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (n, c, h, w, 3, 3)
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n, _, h, w = x.shape
    c_out = weight.shape[0]
    cols = _im2col(x)
    out = cols @ weight.reshape(c_out, -1).T + bias
    return out.reshape(n, h, w, c_out).transpose(0, 3, 1, 2), cols


def conv_backward(
    dout: np.ndarray,
    cols: np.ndarray,
    weight: np.ndarray,
    x_shape: Tuple[int, ...],
    need_dx: bool = True,
) -> Tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    n, c_in, h, w = x_shape
    c_out = weight.shape[0]
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, c_out)
    d2_64 = d2.astype(np.float64, copy=False)
    dw = (d2_64.T @ cols.astype(np.float64, copy=False)).reshape(weight.shape)
    db = d2_64.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ weight.reshape(c_out, -1)).reshape(n, h, w, c_in, 3, 3)
    dxp = np.zeros((n, c_in, h + 2, w + 2), dtype=dout.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dw, db


def maxpool_forward(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """2x2 max-pool; ties go to the first element in scan order."""
    n, c, h, w = x.shape
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool_backward(dout: np.ndarray, arg: np.ndarray, x_shape: Tuple[int, ...]) -> np.ndarray:
    n, c, h, w = x_shape
    dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    return dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


def upsample_forward(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample_backward(dout: np.ndarray) -> np.ndarray:
    n, c, h, w = dout.shape
    return dout.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


# ---- model ------------------------------------------------------------------

def init_model(arch: CaeArch, seed: int = 0, dtype: np.dtype = np.float32) -> AutoEncoderModel:
    """Glorot-uniform kernels in +-sqrt(6/(fan_in+fan_out)), zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for c_out, c_in in arch.conv_shapes():
        limit = np.sqrt(6.0 / (9 * c_in + 9 * c_out))
        weight = rng.uniform(-limit, limit, size=(c_out, c_in, 3, 3)).astype(dtype)
        layers.append(ConvLayer(weight=weight, bias=np.zeros(c_out, dtype=dtype)))
    return AutoEncoderModel(arch=arch, layers=layers, seed=seed)


def _as_batch(model: AutoEncoderModel, batch: BatchLike) -> np.ndarray:
    values = batch.values if isinstance(batch, PatchSet) else np.asarray(batch)
    arch = model.arch
    expected = (arch.channels, arch.size, arch.size)
    if values.ndim != 4 or values.shape[1:] != expected:
        raise ShapeMismatch(f"batch shape {values.shape} does not match (n, {expected})")
    return values.astype(model.dtype, copy=False)


def _encode(model: AutoEncoderModel, x: np.ndarray, cache: list | None = None) -> np.ndarray:
    h = x
    for layer in model.layers[: model.arch.stages]:
        z, cols = conv_forward(h, layer.weight, layer.bias)
        a = relu(z)
        p, arg = maxpool_forward(a)
        if cache is not None:
            cache.append((h.shape, cols, z, arg))
        h = p
    return h


def _decode(model: AutoEncoderModel, h: np.ndarray, cache: list | None = None) -> np.ndarray:
    decoder = model.layers[model.arch.stages:]
    for j, layer in enumerate(decoder):
        u = upsample_forward(h)
        z, cols = conv_forward(u, layer.weight, layer.bias)
        h = z if j == len(decoder) - 1 else relu(z)
        if cache is not None:
            cache.append((u.shape, cols, z, None))
    return h


def forward(model: AutoEncoderModel, batch: BatchLike) -> Tuple[np.ndarray, np.ndarray]:
    """Return (latents (n, L), reconstructions shaped like the batch)."""
    x = _as_batch(model, batch)
    h = _encode(model, x)
    recon = _decode(model, h)
    return h.reshape(len(x), -1), recon


def loss(reconstructions: np.ndarray, batch: BatchLike) -> float:
    """Mean over the batch of the per-patch mean squared error."""
    x = batch.values if isinstance(batch, PatchSet) else np.asarray(batch)
    if reconstructions.shape != x.shape:
        raise ShapeMismatch(f"reconstruction {reconstructions.shape} vs batch {x.shape}")
    diff = reconstructions.astype(np.float64) - x.astype(np.float64)
    return float(np.mean(diff * diff))


def backward(model: AutoEncoderModel, batch: BatchLike) -> Gradients:
    """Gradient of the MSE loss w.r.t. every kernel and bias."""
    x = _as_batch(model, batch)
    cache: list = []
    h = _encode(model, x, cache)
    recon = _decode(model, h, cache)
    diff = recon.astype(np.float64) - x.astype(np.float64)
    batch_loss = float(np.mean(diff * diff))
    d = (2.0 * diff / diff.size).astype(model.dtype)

    stages = model.arch.stages
    grads: List[ConvLayer | None] = [None] * len(model.layers)
    for j in reversed(range(stages)):
        idx = stages + j
        u_shape, cols, z, _ = cache[idx]
        if j != stages - 1:
            d = d * (z > 0)
        dx, dw, db = conv_backward(d, cols, model.layers[idx].weight, u_shape)
        grads[idx] = ConvLayer.model_construct(weight=dw, bias=db)
        d = upsample_backward(dx)
    for i in reversed(range(stages)):
        h_shape, cols, z, arg = cache[i]
        d = maxpool_backward(d, arg, z.shape)
        d = d * (z > 0)
        dx, dw, db = conv_backward(d, cols, model.layers[i].weight, h_shape, need_dx=i > 0)
        grads[i] = ConvLayer.model_construct(weight=dw, bias=db)
        d = dx
    return Gradients.model_construct(layers=grads, loss=batch_loss)


def activation_pattern(model: AutoEncoderModel, batch: BatchLike) -> List[np.ndarray]:
    """ReLU on/off masks and pooling winners of a forward pass.

    The loss is smooth in the parameters only while this pattern is fixed.
    """
    x = _as_batch(model, batch)
    cache: list = []
    _decode(model, _encode(model, x, cache), cache)
    pattern = []
    for _, _, z, arg in cache:
        pattern.append(z > 0)
        if arg is not None:
            pattern.append(arg)
    return pattern


def sgd_step(model: AutoEncoderModel, gradients: Gradients, learning_rate: float) -> AutoEncoderModel:
    """w' = w - lr * g for every parameter."""
    dtype = model.dtype
    layers = []
    for layer, grad in zip(model.layers, gradients.layers):
        if grad.weight.shape != layer.weight.shape or grad.bias.shape != layer.bias.shape:
            raise ShapeMismatch("gradient shapes do not match the model")
        layers.append(ConvLayer.model_construct(
            weight=(layer.weight.astype(np.float64) - learning_rate * grad.weight).astype(dtype),
            bias=(layer.bias.astype(np.float64) - learning_rate * grad.bias).astype(dtype),
        ))
    return AutoEncoderModel.model_construct(arch=model.arch, layers=layers, seed=model.seed)


def train(
    model: AutoEncoderModel,
    patches: BatchLike,
    config: TrainConfig,
) -> Tuple[AutoEncoderModel, List[float]]:
    """Minibatch SGD over seeded shuffles; returns the model and per-epoch mean loss."""
    x = _as_batch(model, patches)
    n = len(x)
    if n == 0:
        raise EmptyPatchSet("cannot train the auto-encoder on zero patches")
    rng = np.random.default_rng(config.seed)
    trace: List[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            grads = backward(model, x[idx])
            model = sgd_step(model, grads, config.learning_rate)
            total += grads.loss * len(idx)
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise NumericError(f"auto-encoder training diverged at epoch {epoch + 1}")
        trace.append(epoch_loss)
        logger.info(f"CAE epoch {epoch + 1}/{config.epochs}: mean loss {epoch_loss:.6f} over {n} patches")
    return model, trace


def encode(model: AutoEncoderModel, patch: Union[Patch, np.ndarray]) -> np.ndarray:
    """Latent vector of one (C, s, s) patch."""
    values = patch.values if isinstance(patch, Patch) else np.asarray(patch)
    return _encode(model, _as_batch(model, values[None])).reshape(-1)


def encode_set(model: AutoEncoderModel, patches: BatchLike, batch_size: int = 2048) -> np.ndarray:
    x = _as_batch(model, patches)
    out = np.empty((len(x), model.arch.latent_dim), dtype=np.float64)
    for start in range(0, len(x), batch_size):
        chunk = x[start:start + batch_size]
        out[start:start + len(chunk)] = _encode(model, chunk).reshape(len(chunk), -1)
    return out


def save_model(model: AutoEncoderModel, path: str | Path) -> None:
    payload = {
        "arch": model.arch.model_dump(mode="json"),
        "seed": model.seed,
        "dtype": np.dtype(model.dtype).name,
        "weights": [layer.weight.tolist() for layer in model.layers],
        "biases": [layer.bias.tolist() for layer in model.layers],
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload))


def load_model(path: str | Path) -> AutoEncoderModel:
    payload = json.loads(Path(path).read_text())
    dtype = np.dtype(payload.get("dtype", "float32"))
    arch = CaeArch.model_validate(payload["arch"])
    layers = [
        ConvLayer(weight=np.asarray(w, dtype=dtype), bias=np.asarray(b, dtype=dtype))
        for w, b in zip(payload["weights"], payload["biases"])
    ]
    return AutoEncoderModel(arch=arch, layers=layers, seed=payload["seed"])
