from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from deep_bow.configs.logging_config import setup_logging
from deep_bow.errors import DimMismatch, EmptyRegion, NumericError, TooFewVectors
from deep_bow.schemas.models import BowHistogram, Codebook

setup_logging()
logger = logging.getLogger(__name__)

# float slack when asserting Lloyd monotonicity
_MONOTONE_SLACK = 1e-9


def squared_distances(vectors: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(n, k) squared Euclidean distances, clipped at 0."""
    d2 = (
        np.einsum("ij,ij->i", vectors, vectors)[:, None]
        - 2.0 * vectors @ centroids.T
        + np.einsum("ij,ij->i", centroids, centroids)[None, :]
    )
    return np.maximum(d2, 0.0)


def _kmeans_pp(vectors: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(vectors)
    chosen = [int(rng.integers(n))]
    closest = squared_distances(vectors, vectors[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            raise TooFewVectors(f"fewer than k={k} distinct vectors")
        nxt = int(rng.choice(n, p=closest / total))
        chosen.append(nxt)
        closest = np.minimum(closest, squared_distances(vectors, vectors[[nxt]])[:, 0])
    return vectors[chosen].copy()


def kmeans_fit(
    vectors: np.ndarray | Sequence[Sequence[float]],
    k: int,
    seed: int = 0,
    max_iters: int = 300,
    tol: float = 1e-6,
    scope: str = "",
    feature_kind: Literal["raw", "latent"] = "latent",
) -> Codebook:
    """k-means++ seeding followed by Lloyd iterations.

    Stops when the largest centroid shift drops below ``tol`` or after
    ``max_iters``. An empty cluster is re-seeded with the point farthest from
    its current centroid.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise DimMismatch(f"expected a (n, d) array, got shape {x.shape}")
    if k < 1 or len(x) < k:
        raise TooFewVectors(f"{len(x)} vectors cannot form {k} clusters")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)

    trace: list[float] = []
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        d2 = squared_distances(x, centroids)
        labels = d2.argmin(axis=1)
        point_cost = d2[np.arange(len(x)), labels]
        inertia = float(point_cost.sum())
        if trace and inertia > trace[-1] * (1 + _MONOTONE_SLACK) + _MONOTONE_SLACK:
            raise NumericError(f"k-means inertia increased: {trace[-1]} -> {inertia}")
        trace.append(inertia)

        counts = np.bincount(labels, minlength=k)
        new = np.zeros_like(centroids)
        np.add.at(new, labels, x)
        for j in np.flatnonzero(counts == 0):
            # farthest point whose cluster keeps at least one member
            for far in np.argsort(-point_cost, kind="stable"):
                donor = labels[far]
                if counts[donor] > 1:
                    break
            new[donor] -= x[far]
            counts[donor] -= 1
            new[j] = x[far]
            counts[j] = 1
            labels[far] = j
            point_cost[far] = -1.0
        occupied = counts > 0
        new[occupied] /= counts[occupied, None]
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        if shift < tol:
            break

    final = squared_distances(x, centroids)
    inertia = float(final.min(axis=1).sum())
    logger.debug(f"k-means {scope or ''} k={k}: {n_iter} iterations, inertia {inertia:.6g}")
    return Codebook(
        centroids=centroids,
        feature_kind=feature_kind,
        scope=scope,
        fit_seed=seed,
        inertia=inertia,
        n_iter=n_iter,
        inertia_trace=trace,
    )


def quantize_many(codebook: Codebook, vectors: np.ndarray) -> np.ndarray:
    """Nearest word per row; ties go to the lowest index."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != codebook.d:
        raise DimMismatch(f"vectors of shape {x.shape} against a {codebook.d}-dim codebook")
    return squared_distances(x, codebook.centroids).argmin(axis=1)


def quantize(codebook: Codebook, vector: np.ndarray | Sequence[float]) -> int:
    v = np.asarray(vector, dtype=np.float64)
    if v.ndim != 1:
        raise DimMismatch(f"expected a single vector, got shape {v.shape}")
    return int(quantize_many(codebook, v[None, :])[0])


def bow_histogram(codebook: Codebook, features: np.ndarray | Sequence[Sequence[float]]) -> BowHistogram:
    """L1-normalised word frequencies of one region's patches."""
    x = np.asarray(features, dtype=np.float64)
    if x.size == 0 or len(x) == 0:
        raise EmptyRegion(f"no patch features for {codebook.scope or 'region'}")
    words = quantize_many(codebook, x.reshape(len(x), -1))
    counts = np.bincount(words, minlength=codebook.k).astype(np.float64)
    return BowHistogram(scope=codebook.scope, bins=counts / counts.sum())


def save_codebook(codebook: Codebook, path: str | Path) -> None:
    payload = {
        "k": codebook.k,
        "d": codebook.d,
        "scope": codebook.scope,
        "feature_kind": codebook.feature_kind,
        "fit_seed": codebook.fit_seed,
        "inertia": codebook.inertia,
        "n_iter": codebook.n_iter,
        "inertia_trace": list(codebook.inertia_trace),
        "centroids": codebook.centroids.tolist(),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload))


def load_codebook(path: str | Path) -> Codebook:
    payload = json.loads(Path(path).read_text())
    centroids = np.asarray(payload["centroids"], dtype=np.float64)
    if centroids.shape != (payload["k"], payload["d"]):
        raise DimMismatch(f"codebook {path} declares ({payload['k']}, {payload['d']}) but holds {centroids.shape}")
    return Codebook(
        centroids=centroids,
        feature_kind=payload["feature_kind"],
        scope=payload["scope"],
        fit_seed=payload.get("fit_seed", 0),
        inertia=payload.get("inertia", 0.0),
        n_iter=payload.get("n_iter", 0),
        inertia_trace=payload.get("inertia_trace", []),
    )
