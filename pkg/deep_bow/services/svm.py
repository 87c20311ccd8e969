"""Soft-margin RBF SVM.

The dual ``min 1/2 a'Qa - e'a  s.t. 0 <= a <= C, y'a = 0`` (Q_ij = y_i y_j K_ij)
is solved by pairwise coordinate descent on the maximal violating pair, and
independently by an accelerated projected-gradient oracle used for
verification.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numba import njit
from pydantic import BaseModel, ConfigDict
from scipy.spatial.distance import cdist

from deep_bow.configs.logging_config import setup_logging
from deep_bow.errors import DimMismatch, NoConvergence, SingleClass
from deep_bow.schemas.features import FeatureMatrix
from deep_bow.schemas.models import SvmModel, SvmParams

setup_logging()
logger = logging.getLogger(__name__)

ALPHA_EPS = 1e-12
TAU = 1e-12


def rbf_kernel(x: np.ndarray | Sequence[float], z: np.ndarray | Sequence[float], gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise DimMismatch(f"kernel arguments of shapes {x.shape} and {z.shape}")
    d = x - z
    return float(np.exp(-gamma * np.dot(d, d)))


def squared_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] != b.shape[1]:
        raise DimMismatch(f"{a.shape[1]} features against {b.shape[1]}")
    return cdist(a, b, metric="sqeuclidean")


def kernel_matrix(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * squared_distance_matrix(np.atleast_2d(a), np.atleast_2d(b)))


def signed_labels(labels: np.ndarray) -> np.ndarray:
    """0/1 class labels (1 = patient) to -1/+1."""
    labels = np.asarray(labels)
    if labels.min() == labels.max():
        raise SingleClass(f"training labels contain only class {int(labels[0])}")
    return np.where(labels > 0, 1.0, -1.0)


@njit(cache=True)
def _smo_solve(Q, y, C, tol, max_iter):
    n = Q.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    converged = False
    while it < max_iter:
        # maximal violating pair; strict comparisons keep the first index on ties
        i = -1
        j = -1
        g_max = -np.inf
        g_min = np.inf
        for t in range(n):
            v = -y[t] * G[t]
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                if v > g_max:
                    g_max = v
                    i = t
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                if v < g_min:
                    g_min = v
                    j = t
        if i < 0 or j < 0 or g_max - g_min <= tol:
            converged = True
            break
        it += 1

        old_i = alpha[i]
        old_j = alpha[j]
        if y[i] != y[j]:
            quad = Q[i, i] + Q[j, j] + 2.0 * Q[i, j]
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = Q[i, i] + Q[j, j] - 2.0 * Q[i, j]
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total

        d_i = alpha[i] - old_i
        d_j = alpha[j] - old_j
        for t in range(n):
            G[t] += Q[t, i] * d_i + Q[t, j] * d_j
    return alpha, G, it, converged


def dual_bias(alpha: np.ndarray, gradient: np.ndarray, y: np.ndarray, C: float) -> float:
    """Bias from the dual solution: mean over free vectors, else the bound midpoint."""
    v = -y * gradient
    free = (alpha > ALPHA_EPS) & (alpha < C - ALPHA_EPS)
    if free.any():
        return float(v[free].mean())
    at_upper = alpha >= C - ALPHA_EPS
    up = ((y > 0) & ~at_upper) | ((y < 0) & at_upper)
    low = ((y > 0) & at_upper) | ((y < 0) & ~at_upper)
    hi = v[up].max() if up.any() else v[low].min()
    lo = v[low].min() if low.any() else v[up].max()
    return float(0.5 * (hi + lo))


def dual_objective(alpha: np.ndarray, Q: np.ndarray) -> float:
    """Dual value to maximise: sum(a) - 1/2 a'Qa."""
    return float(alpha.sum() - 0.5 * alpha @ Q @ alpha)


class DualSolution(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    alpha: np.ndarray
    bias: float
    objective: float
    n_iter: int
    converged: bool


def solve_dual(
    K: np.ndarray,
    y_signed: np.ndarray,
    C: float,
    tol: float = 1e-3,
    max_passes: int = 100,
) -> DualSolution:
    Q = np.ascontiguousarray(y_signed[:, None] * y_signed[None, :] * K, dtype=np.float64)
    y = np.ascontiguousarray(y_signed, dtype=np.float64)
    alpha, G, n_iter, converged = _smo_solve(Q, y, float(C), float(tol), int(max_passes * len(y)))
    return DualSolution(
        alpha=alpha,
        bias=dual_bias(alpha, G, y, C),
        objective=dual_objective(alpha, Q),
        n_iter=int(n_iter),
        converged=bool(converged),
    )


def svm_train(
    X: FeatureMatrix | np.ndarray,
    y: Optional[np.ndarray] = None,
    params: SvmParams = SvmParams(C=1.0, gamma=1.0),
    tol: float = 1e-3,
    max_passes: int = 100,
    feature_names: Optional[List[str]] = None,
    strict: bool = False,
) -> SvmModel:
    """Train on rows of ``X`` with 0/1 labels (1 is the positive class).

    Hitting the iteration cap returns the model with ``converged=False``;
    with ``strict`` it raises NoConvergence instead.
    """
    if isinstance(X, FeatureMatrix):
        y = X.labels if y is None else y
        feature_names = X.names if feature_names is None else feature_names
        X = X.values
    X = np.asarray(X, dtype=np.float64)
    y_signed = signed_labels(np.asarray(y))
    if X.ndim != 2 or len(X) != len(y_signed):
        raise DimMismatch(f"design matrix {X.shape} against {len(y_signed)} labels")

    solution = solve_dual(kernel_matrix(X, X, params.gamma), y_signed, params.C, tol, max_passes)
    if not solution.converged:
        message = f"SMO stopped after {solution.n_iter} iterations without reaching tol={tol}"
        if strict:
            raise NoConvergence(message)
        logger.warning(message)
    support = np.flatnonzero(solution.alpha > ALPHA_EPS)
    return SvmModel(
        support_vectors=X[support],
        dual_coef=solution.alpha[support] * y_signed[support],
        support_indices=support,
        bias=solution.bias,
        params=params,
        feature_names=list(feature_names or []),
        dual_objective=solution.objective,
        n_iter=solution.n_iter,
        converged=solution.converged,
    )


def decision_function(model: SvmModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.support_vectors.shape[1]:
        raise DimMismatch(f"{X.shape[1]} features against a model of {model.support_vectors.shape[1]}")
    return kernel_matrix(X, model.support_vectors, model.params.gamma) @ model.dual_coef + model.bias


def predict_labels(decisions: np.ndarray) -> np.ndarray:
    """Sign of the decision; 0 counts as positive."""
    return (np.asarray(decisions) >= 0).astype(np.int64)


def svm_predict(model: SvmModel, x: np.ndarray | Sequence[float]) -> Tuple[int, float]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimMismatch(f"expected a single sample, got shape {x.shape}")
    decision = float(decision_function(model, x[None, :])[0])
    return int(predict_labels(decision)), decision


def svm_predict_many(model: SvmModel, X: np.ndarray) -> np.ndarray:
    return predict_labels(decision_function(model, X))


# ---- verification oracle ----------------------------------------------------

def project_feasible(v: np.ndarray, y: np.ndarray, C: float) -> np.ndarray:
    """Euclidean projection onto {0 <= a <= C, y'a = 0}.

    The projection is clip(v - lam*y, 0, C) for the root lam of a piecewise
    linear non-increasing function, found exactly between its breakpoints.
    """
    def residual(lam: np.ndarray) -> np.ndarray:
        return (np.clip(v[None, :] - lam[:, None] * y[None, :], 0.0, C) * y[None, :]).sum(axis=1)

    points = np.unique(np.concatenate([y * v, y * (v - C)]))
    h = residual(points)
    k = int(np.argmax(h <= 0.0))
    if h[k] == 0.0 or k == 0:
        lam = points[k]
    else:
        lo, hi = points[k - 1], points[k]
        lam = lo + h[k - 1] * (hi - lo) / (h[k - 1] - h[k])
    return np.clip(v - lam * y, 0.0, C)


def qp_oracle(
    X: FeatureMatrix | np.ndarray,
    y: Optional[np.ndarray] = None,
    params: SvmParams = SvmParams(C=1.0, gamma=1.0),
    tol: float = 1e-10,
    max_iter: int = 200_000,
) -> DualSolution:
    """Accelerated projected gradient with restarts; slow, for small n."""
    if isinstance(X, FeatureMatrix):
        y = X.labels if y is None else y
        X = X.values
    X = np.asarray(X, dtype=np.float64)
    y_signed = signed_labels(np.asarray(y))
    Q = y_signed[:, None] * y_signed[None, :] * kernel_matrix(X, X, params.gamma)
    lipschitz = float(np.linalg.eigvalsh(Q)[-1])
    step = 1.0 / max(lipschitz, TAU)
    C = params.C

    def objective(a: np.ndarray) -> float:
        return float(0.5 * a @ Q @ a - a.sum())

    alpha = np.zeros(len(y_signed))
    z = alpha.copy()
    t = 1.0
    f_alpha = objective(alpha)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = project_feasible(z - step * (Q @ z - 1.0), y_signed, C)
        f_new = objective(new)
        if f_new > f_alpha and t > 1.0:
            # restart momentum from the last iterate
            z = alpha.copy()
            t = 1.0
            continue
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = new + ((t - 1.0) / t_next) * (new - alpha)
        alpha, f_alpha, t = new, f_new, t_next
        mapping = (alpha - project_feasible(alpha - step * (Q @ alpha - 1.0), y_signed, C)) / step
        if np.linalg.norm(mapping) < tol:
            converged = True
            break
    if not converged:
        logger.warning(f"QP oracle stopped after {it} iterations above tol={tol}")
    gradient = Q @ alpha - 1.0
    return DualSolution(
        alpha=alpha,
        bias=dual_bias(alpha, gradient, y_signed, C),
        objective=dual_objective(alpha, Q),
        n_iter=it,
        converged=converged,
    )


def save_svm(model: SvmModel, path: str | Path) -> None:
    payload = {
        "params": model.params.model_dump(),
        "bias": model.bias,
        "feature_names": model.feature_names,
        "support_vectors": model.support_vectors.tolist(),
        "dual_coef": model.dual_coef.tolist(),
        "support_indices": model.support_indices.tolist(),
        "dual_objective": model.dual_objective,
        "n_iter": model.n_iter,
        "converged": model.converged,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload))


def load_svm(path: str | Path) -> SvmModel:
    payload = json.loads(Path(path).read_text())
    return SvmModel(
        support_vectors=np.asarray(payload["support_vectors"], dtype=np.float64),
        dual_coef=np.asarray(payload["dual_coef"], dtype=np.float64),
        support_indices=np.asarray(payload["support_indices"], dtype=np.int64),
        bias=payload["bias"],
        params=SvmParams(**payload["params"]),
        feature_names=payload["feature_names"],
        dual_objective=payload.get("dual_objective", 0.0),
        n_iter=payload.get("n_iter", 0),
        converged=payload.get("converged", True),
    )
