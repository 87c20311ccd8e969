"""Hyperparameter grid search, greedy forward selection and correlation ranking.

Cross-validated accuracies are pooled (correct predictions over all folds
divided by n), so equal scores compare exactly and ties resolve by index.
"""
from __future__ import annotations

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict
from scipy.spatial.distance import cdist

from deep_bow.configs.logging_config import setup_logging
from deep_bow.errors import BudgetExceedsFeatures, EmptyGrid
from deep_bow.schemas.models import CorrelationRanking, SelectionResult, SvmParams
from deep_bow.services.features import MIN_STD, standardize_fit, standardize_values
from deep_bow.services.splits import stratified_kfold
from deep_bow.services.svm import predict_labels, signed_labels, solve_dual

setup_logging()
logger = logging.getLogger(__name__)


class GridPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    C: float
    gamma: float
    accuracy: float


class GridSearchResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    best: SvmParams
    table: List[GridPoint]


def default_grid(c_grid: Sequence[float], gamma_grid: Sequence[float], n_features: int) -> List[SvmParams]:
    """Cartesian grid with every gamma divided by the feature count."""
    d = max(1, n_features)
    return [SvmParams(C=c, gamma=g / d) for c in c_grid for g in gamma_grid]


def _fold_correct(
    d_train: np.ndarray,
    d_test: np.ndarray,
    y_train: np.ndarray,
    y_test: np.ndarray,
    params: SvmParams,
    tol: float,
    max_passes: int,
) -> int:
    y_signed = signed_labels(y_train)
    solution = solve_dual(np.exp(-params.gamma * d_train), y_signed, params.C, tol, max_passes)
    coef = solution.alpha * y_signed
    decisions = np.exp(-params.gamma * d_test) @ coef + solution.bias
    return int((predict_labels(decisions) == y_test).sum())


def grid_search(
    X: np.ndarray,
    y: np.ndarray,
    grid: Sequence[SvmParams],
    folds: int = 5,
    seed: int = 0,
    tol: float = 1e-3,
    max_passes: int = 100,
) -> GridSearchResult:
    """Best grid point by stratified k-fold accuracy; ties go to smaller C, then smaller gamma."""
    if not grid:
        raise EmptyGrid("hyperparameter grid is empty")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    splits = stratified_kfold(y, folds, seed)
    d_full = cdist(X, X, "sqeuclidean")
    table = []
    for params in grid:
        correct = sum(
            _fold_correct(d_full[np.ix_(tr, tr)], d_full[np.ix_(te, tr)], y[tr], y[te], params, tol, max_passes)
            for tr, te in splits
        )
        table.append(GridPoint(C=params.C, gamma=params.gamma, accuracy=correct / len(y)))
    ranked = sorted(range(len(table)), key=lambda i: (-table[i].accuracy, table[i].C, table[i].gamma, i))
    best = table[ranked[0]]
    logger.debug(f"grid search: best C={best.C:g} gamma={best.gamma:g} cv accuracy {best.accuracy:.3f}")
    return GridSearchResult(best=SvmParams(C=best.C, gamma=best.gamma), table=table)


class _FoldCubes:
    """Per-fold, per-column squared differences of fold-standardized features.

    The RBF distance of a column subset is the sum of its columns' slices.
    """

    def __init__(self, X: np.ndarray, splits: List[Tuple[np.ndarray, np.ndarray]]):
        self.splits = splits
        self.train: List[np.ndarray] = []
        self.test: List[np.ndarray] = []
        for tr, te in splits:
            params = standardize_fit(X[tr])
            z_tr = standardize_values(X[tr], params)
            z_te = standardize_values(X[te], params)
            self.train.append((z_tr[:, None, :] - z_tr[None, :, :]) ** 2)
            self.test.append((z_te[:, None, :] - z_tr[None, :, :]) ** 2)

    def base(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return [(np.zeros(tr.shape[:2]), np.zeros(te.shape[:2])) for tr, te in zip(self.train, self.test)]


def _subset_correct(
    cubes: _FoldCubes,
    base: List[Tuple[np.ndarray, np.ndarray]],
    column: int,
    size: int,
    y: np.ndarray,
    C: float,
    gamma_scale: float,
    tol: float,
    max_passes: int,
) -> int:
    params = SvmParams(C=C, gamma=gamma_scale / size)
    correct = 0
    for f, (tr, te) in enumerate(cubes.splits):
        d_tr = base[f][0] + cubes.train[f][:, :, column]
        d_te = base[f][1] + cubes.test[f][:, :, column]
        correct += _fold_correct(d_tr, d_te, y[tr], y[te], params, tol, max_passes)
    return correct


def subset_cv_accuracy(
    X: np.ndarray,
    y: np.ndarray,
    columns: Sequence[int],
    inner_folds: int = 5,
    seed: int = 0,
    C: float = 1.0,
    gamma_scale: float = 1.0,
    tol: float = 1e-3,
    max_passes: int = 100,
) -> float:
    """Inner-CV accuracy of one column subset, standardized within each fold."""
    X = np.asarray(X, dtype=np.float64)[:, list(columns)]
    y = np.asarray(y)
    params = SvmParams(C=C, gamma=gamma_scale / len(columns))
    correct = 0
    for tr, te in stratified_kfold(y, inner_folds, seed):
        scaler = standardize_fit(X[tr])
        z_tr = standardize_values(X[tr], scaler)
        z_te = standardize_values(X[te], scaler)
        correct += _fold_correct(
            cdist(z_tr, z_tr, "sqeuclidean"), cdist(z_te, z_tr, "sqeuclidean"), y[tr], y[te], params, tol, max_passes
        )
    return correct / len(y)


def forward_select(
    X: np.ndarray,
    y: np.ndarray,
    budget: int = 10,
    inner_folds: int = 5,
    seed: int = 0,
    C: float = 1.0,
    gamma_scale: float = 1.0,
    tol: float = 1e-3,
    max_passes: int = 100,
    names: Optional[Sequence[str]] = None,
) -> SelectionResult:
    """Greedy wrapper selection with an RBF SVM (gamma = gamma_scale / subset size).

    Each step adds the column with the highest inner-CV accuracy, lowest
    index first on ties, until ``budget`` columns are chosen.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n_features = X.shape[1]
    if budget < 1 or budget > n_features:
        raise BudgetExceedsFeatures(f"budget {budget} for {n_features} features")
    names = list(names) if names is not None else [str(i) for i in range(n_features)]
    cubes = _FoldCubes(X, stratified_kfold(y, inner_folds, seed))
    base = cubes.base()

    selected: List[int] = []
    curve: List[float] = []
    remaining = list(range(n_features))
    for step in range(1, budget + 1):
        scores = [
            _subset_correct(cubes, base, c, step, y, C, gamma_scale, tol, max_passes) for c in remaining
        ]
        best = remaining[int(np.argmax(scores))]
        selected.append(best)
        remaining.remove(best)
        curve.append(max(scores) / len(y))
        base = [
            (b_tr + cubes.train[f][:, :, best], b_te + cubes.test[f][:, :, best])
            for f, (b_tr, b_te) in enumerate(base)
        ]
        logger.debug(f"forward selection step {step}: {names[best]} (cv accuracy {curve[-1]:.3f})")
    return SelectionResult(
        selected=selected,
        names=[names[i] for i in selected],
        accuracy_curve=curve,
        budget=budget,
        method="forward",
    )


def correlation_rank(X: np.ndarray, y: np.ndarray) -> CorrelationRanking:
    """Columns by |Pearson r| with the labels, descending; constant columns last with r = 0."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    constant = X.std(axis=0) < MIN_STD
    if y.std() < MIN_STD:
        constant[:] = True
    r = np.zeros(X.shape[1])
    live = np.flatnonzero(~constant)
    if live.size:
        corr = np.corrcoef(X[:, live], y, rowvar=False)
        r[live] = np.minimum(np.abs(corr[-1, :-1]), 1.0)
    order = sorted(range(X.shape[1]), key=lambda i: (bool(constant[i]), -r[i], i))
    return CorrelationRanking(order=order, scores=r.tolist())


def correlation_select(
    X: np.ndarray,
    y: np.ndarray,
    budget: int = 10,
    inner_folds: int = 5,
    seed: int = 0,
    C: float = 1.0,
    gamma_scale: float = 1.0,
    tol: float = 1e-3,
    max_passes: int = 100,
    names: Optional[Sequence[str]] = None,
) -> SelectionResult:
    """Top ``budget`` columns of the correlation ranking, with the same inner-CV curve."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n_features = X.shape[1]
    if budget < 1 or budget > n_features:
        raise BudgetExceedsFeatures(f"budget {budget} for {n_features} features")
    names = list(names) if names is not None else [str(i) for i in range(n_features)]
    selected = correlation_rank(X, y).order[:budget]
    cubes = _FoldCubes(X, stratified_kfold(y, inner_folds, seed))
    base = cubes.base()
    curve = []
    for step, column in enumerate(selected, start=1):
        correct = _subset_correct(cubes, base, column, step, y, C, gamma_scale, tol, max_passes)
        curve.append(correct / len(y))
        base = [
            (b_tr + cubes.train[f][:, :, column], b_te + cubes.test[f][:, :, column])
            for f, (b_tr, b_te) in enumerate(base)
        ]
    return SelectionResult(
        selected=list(selected),
        names=[names[i] for i in selected],
        accuracy_curve=curve,
        budget=budget,
        method="correlation",
    )


def selection_report(result: SelectionResult) -> pd.DataFrame:
    """One row per step: step, feature name, CV accuracy."""
    return pd.DataFrame({
        "step": range(1, len(result.selected) + 1),
        "feature": result.names,
        "cv_accuracy": result.accuracy_curve,
    })
