"""Classification metrics and the two evaluation protocols.

Repeated-split CV: stratified validation splits, everything fitted on the
training side only. Held-out ensemble: per round, a stratified held-out set
is scored by majority vote of models trained on CV splits of the rest.
"""
from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict
from sklearn.metrics import confusion_matrix
from tqdm import tqdm

from deep_bow.configs.logging_config import setup_logging
from deep_bow.configs.pipeline_config import PipelineConfig, config_echo
from deep_bow.errors import LengthMismatch, SingleClass, TooFewSamples
from deep_bow.schemas.features import FeatureMatrix, StandardizeParams
from deep_bow.schemas.models import SelectionResult, SvmModel, SvmParams
from deep_bow.schemas.reports import (
    CohortHistograms,
    ConfusionCounts,
    CvReport,
    HeldoutReport,
    HeldoutRound,
    Rates,
    RepeatResult,
    SubsetPoint,
    Summary,
)
from deep_bow.services.featurizer import BowFeaturizer, Featurizer, PrecomputedFeaturizer
from deep_bow.services.features import group_counts, standardize_fit, standardize_values
from deep_bow.services.ledger import POOL_SCOPE, FitLedger
from deep_bow.services.selection import correlation_select, default_grid, forward_select, grid_search
from deep_bow.services.splits import derive_seeds, stratified_holdout, stratified_split
from deep_bow.services.svm import decision_function, predict_labels, svm_train

setup_logging()
logger = logging.getLogger(__name__)

CV_STREAM = 0
HELDOUT_STREAM = 1


def confusion_counts(predictions: Sequence[int], labels: Sequence[int]) -> ConfusionCounts:
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape or p.ndim != 1 or len(p) == 0:
        raise LengthMismatch(f"{p.shape} predictions against {y.shape} labels")
    tn, fp, fn, tp = confusion_matrix(y, p, labels=[0, 1]).ravel()
    return ConfusionCounts(tp=int(tp), fp=int(fp), tn=int(tn), fn=int(fn))


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def rates(counts: ConfusionCounts) -> Rates:
    return Rates(
        accuracy=_ratio(counts.tp + counts.tn, counts.total),
        sensitivity=_ratio(counts.tp, counts.tp + counts.fn),
        specificity=_ratio(counts.tn, counts.tn + counts.fp),
    )


def confusion_metrics(
    predictions: Sequence[int], labels: Sequence[int]
) -> Tuple[Optional[float], Optional[float], Optional[float]]:
    """(accuracy, sensitivity, specificity) with patients positive; None where undefined."""
    r = rates(confusion_counts(predictions, labels))
    return r.accuracy, r.sensitivity, r.specificity


def _require_both_classes(labels: np.ndarray) -> None:
    if len(np.unique(labels)) < 2:
        raise SingleClass("evaluation needs both classes")


# ---- one training side ------------------------------------------------------

class FittedSplit(BaseModel):
    """Everything fitted on one training side, ready to score new subjects."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    featurizer: Featurizer
    standardizer: StandardizeParams
    selection: SelectionResult
    svm: SvmModel
    train_values: np.ndarray
    train_labels: np.ndarray

    def design(self, ids: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
        matrix = self.featurizer.transform(ids)
        return standardize_values(matrix.values, self.standardizer), matrix.labels

    def decisions(self, ids: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
        X, labels = self.design(ids)
        return decision_function(self.svm, X[:, self.selection.selected]), labels


def fit_split(
    featurizer: Featurizer,
    train_ids: Sequence[str],
    scope: str,
    seed: int,
    config: PipelineConfig,
    train_cae: bool,
) -> FittedSplit:
    codebook_seed, selection_seed, grid_seed = derive_seeds(seed, 3)
    featurizer.fit(train_ids, scope, codebook_seed, train_cae)
    train = featurizer.transform(train_ids)
    ledger = featurizer.ledger

    standardizer = standardize_fit(train)
    ledger.record(scope, "standardizer", train_ids)
    X = standardize_values(train.values, standardizer)
    y = train.labels

    sel = config.selection
    select = forward_select if sel.method == "forward" else correlation_select
    selection = select(
        X, y,
        budget=sel.budget,
        inner_folds=sel.inner_folds,
        seed=selection_seed,
        C=sel.C,
        gamma_scale=sel.gamma_scale,
        tol=config.svm.tol,
        max_passes=config.svm.max_passes,
        names=train.names,
    )
    ledger.record(scope, "selection", train_ids)

    svm_cfg = config.svm
    Xs = X[:, selection.selected]
    grid = grid_search(
        Xs, y,
        default_grid(svm_cfg.c_grid, svm_cfg.gamma_grid, len(selection.selected)),
        folds=svm_cfg.grid_folds,
        seed=grid_seed,
        tol=svm_cfg.tol,
        max_passes=svm_cfg.max_passes,
    )
    ledger.record(scope, "grid", train_ids)
    model = svm_train(
        Xs, y, grid.best,
        tol=svm_cfg.tol,
        max_passes=svm_cfg.max_passes,
        feature_names=selection.names,
        strict=config.strict,
    )
    ledger.record(scope, "svm", train_ids)
    return FittedSplit(
        featurizer=featurizer,
        standardizer=standardizer,
        selection=selection,
        svm=model,
        train_values=X,
        train_labels=y,
    )


def subset_curve(fitted: FittedSplit, X_val: np.ndarray, y_val: np.ndarray, config: PipelineConfig) -> List[SubsetPoint]:
    """Validation rates of SVMs on the first 1..k selected columns (inner-selection C and gamma)."""
    points = []
    for size in range(1, len(fitted.selection.selected) + 1):
        cols = fitted.selection.selected[:size]
        params = SvmParams(C=config.selection.C, gamma=config.selection.gamma_scale / size)
        model = svm_train(
            fitted.train_values[:, cols], fitted.train_labels, params,
            tol=config.svm.tol, max_passes=config.svm.max_passes,
        )
        r = rates(confusion_counts(predict_labels(decision_function(model, X_val[:, cols])), y_val))
        points.append(SubsetPoint(size=size, **r.model_dump()))
    return points


# ---- repeated-split CV ------------------------------------------------------

def _cv_repeat(
    featurizer: Featurizer,
    repeat: int,
    seed: int,
    config: PipelineConfig,
    train_cae: bool,
) -> Tuple[RepeatResult, FitLedger, List[str]]:
    ids = np.asarray(featurizer.subject_ids)
    split_seed, fit_seed = derive_seeds(seed, 2)
    train_idx, val_idx = stratified_split(featurizer.labels, config.eval.validation_fraction, split_seed)
    train_ids, val_ids = ids[train_idx].tolist(), ids[val_idx].tolist()

    ledger = FitLedger()
    fitted = fit_split(featurizer.clone(ledger), train_ids, f"cv/rep{repeat:03d}", fit_seed, config, train_cae)
    X_val, y_val = fitted.design(val_ids)
    decisions = decision_function(fitted.svm, X_val[:, fitted.selection.selected])
    counts = confusion_counts(predict_labels(decisions), y_val)
    result = RepeatResult(
        repeat=repeat,
        seed=seed,
        train_size=len(train_ids),
        validation_size=len(val_ids),
        validation_positives=int(y_val.sum()),
        counts=counts,
        rates=rates(counts),
        selected=fitted.selection.names,
        selected_indices=fitted.selection.selected,
        selection_curve=fitted.selection.accuracy_curve,
        C=fitted.svm.params.C,
        gamma=fitted.svm.params.gamma,
        converged=fitted.svm.converged,
        subset_curve=subset_curve(fitted, X_val, y_val, config) if config.eval.subset_curve else [],
    )
    return result, ledger, val_ids


def _summary(values: Sequence[Optional[float]]) -> Summary:
    defined = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if defined.size == 0:
        return Summary(mean=None, std=None, defined=0)
    return Summary(mean=float(defined.mean()), std=float(defined.std()), defined=int(defined.size))


def _mean_subset_curve(repeats: Sequence[RepeatResult]) -> List[SubsetPoint]:
    sizes = sorted({p.size for r in repeats for p in r.subset_curve})
    curve = []
    for size in sizes:
        points = [p for r in repeats for p in r.subset_curve if p.size == size]
        curve.append(SubsetPoint(
            size=size,
            accuracy=_summary([p.accuracy for p in points]).mean,
            sensitivity=_summary([p.sensitivity for p in points]).mean,
            specificity=_summary([p.specificity for p in points]).mean,
        ))
    return curve


def _fit_pool(featurizer: Featurizer, ids: Sequence[str], scope: str) -> None:
    if isinstance(featurizer, BowFeaturizer) and featurizer.deep:
        featurizer.fit_norms(ids, scope)
        featurizer.fit_autoencoders(ids, scope)


def _as_featurizer(source: Featurizer | FeatureMatrix) -> Featurizer:
    return PrecomputedFeaturizer(source) if isinstance(source, FeatureMatrix) else source


def _feature_dim(featurizer: Featurizer) -> int:
    if isinstance(featurizer, BowFeaturizer):
        return featurizer.image_dim + 6
    return featurizer.transform(featurizer.subject_ids[:1]).dim


def repeated_split_cv(
    featurizer: Featurizer | FeatureMatrix,
    config: PipelineConfig,
    ledger: Optional[FitLedger] = None,
) -> CvReport:
    """Stratified repeated random-split CV.

    Without ``strict_leakage`` the auto-encoders are trained once on the
    whole cohort (unsupervised, ledger scope ``pool``); normalizers,
    codebooks, standardizer, selection, grid choice and SVM are refitted on
    every training side.
    """
    featurizer = _as_featurizer(featurizer)
    labels = featurizer.labels
    _require_both_classes(labels)
    ledger = ledger if ledger is not None else featurizer.ledger
    train_cae = config.strict_leakage
    # auto-encoders already trained on the cohort (run / train-cae) are reused
    if not train_cae and not getattr(featurizer, "models", None):
        pool = FitLedger()
        featurizer.ledger, previous = pool, featurizer.ledger
        _fit_pool(featurizer, featurizer.subject_ids, POOL_SCOPE)
        featurizer.ledger = previous
        ledger.extend(pool)

    seeds = derive_seeds(config.seed, config.eval.repeats, CV_STREAM)
    jobs = Parallel(n_jobs=config.jobs, return_as="generator")(
        delayed(_cv_repeat)(featurizer, r, s, config, train_cae) for r, s in enumerate(seeds)
    )
    outcomes = list(tqdm(jobs, total=len(seeds), desc=f"{featurizer.family} cv", disable=None))

    held_out: Dict[str, List[str]] = {}
    repeats = []
    for result, repeat_ledger, val_ids in sorted(outcomes, key=lambda o: o[0].repeat):
        ledger.extend(repeat_ledger)
        held_out[f"cv/rep{result.repeat:03d}"] = val_ids
        repeats.append(result)
        logger.info(
            f"CV repeat {result.repeat + 1}/{len(seeds)}: accuracy {result.rates.accuracy:.3f} "
            f"({result.validation_size} validation subjects)"
        )
    ledger.audit(held_out)

    report = CvReport(
        family=featurizer.family or config.family,
        scenario=config.scenario,
        feature_dim=_feature_dim(featurizer),
        image_dim=featurizer.image_dim,
        n_subjects=len(labels),
        validation_fraction=config.eval.validation_fraction,
        master_seed=config.seed,
        strict_leakage=config.strict_leakage,
        repeats=repeats,
        accuracy=_summary([r.rates.accuracy for r in repeats]),
        sensitivity=_summary([r.rates.sensitivity for r in repeats]),
        specificity=_summary([r.rates.specificity for r in repeats]),
        subset_curve=_mean_subset_curve(repeats),
        feature_groups=group_counts([n for r in repeats for n in r.selected]),
        config=config_echo(config),
    )
    logger.info(
        f"{report.family} CV over {len(repeats)} repeats: accuracy {report.accuracy.mean:.3f} "
        f"+- {report.accuracy.std:.3f}"
    )
    return report


# ---- held-out ensemble ------------------------------------------------------

def _ensemble_member(
    base: Featurizer,
    pool_ids: List[str],
    pool_labels: np.ndarray,
    heldout_ids: List[str],
    round_scope: str,
    member: int,
    seed: int,
    config: PipelineConfig,
    train_cae: bool,
) -> Tuple[np.ndarray, Optional[float], FitLedger, str, List[str]]:
    split_seed, fit_seed = derive_seeds(seed, 2)
    train_idx, val_idx = stratified_split(pool_labels, config.eval.validation_fraction, split_seed)
    ids = np.asarray(pool_ids)
    train_ids, val_ids = ids[train_idx].tolist(), ids[val_idx].tolist()
    scope = f"{round_scope}/m{member:02d}"
    ledger = FitLedger()
    fitted = fit_split(base.clone(ledger), train_ids, scope, fit_seed, config, train_cae)
    val_decisions, val_labels = fitted.decisions(val_ids)
    val_accuracy = rates(confusion_counts(predict_labels(val_decisions), val_labels)).accuracy
    heldout_decisions, _ = fitted.decisions(heldout_ids)
    return predict_labels(heldout_decisions), val_accuracy, ledger, scope, val_ids


def majority_vote(predictions: np.ndarray) -> np.ndarray:
    """Column-wise majority of an (members, samples) 0/1 array; ties go to positive."""
    predictions = np.atleast_2d(predictions)
    return (2 * predictions.sum(axis=0) >= predictions.shape[0]).astype(np.int64)


def heldout_ensemble_eval(
    featurizer: Featurizer | FeatureMatrix,
    config: PipelineConfig,
    ledger: Optional[FitLedger] = None,
) -> HeldoutReport:
    featurizer = _as_featurizer(featurizer)
    labels = featurizer.labels
    ids = np.asarray(featurizer.subject_ids)
    size = config.eval.heldout_size
    if len(labels) <= size:
        raise TooFewSamples(f"{len(labels)} subjects cannot spare {size} held-out samples")
    _require_both_classes(labels)
    ledger = ledger if ledger is not None else featurizer.ledger
    train_cae = config.strict_leakage

    rounds = []
    for r, round_seed in enumerate(derive_seeds(config.seed, config.eval.rounds, HELDOUT_STREAM)):
        split_seed, members_seed = derive_seeds(round_seed, 2)
        pool_idx, held_idx = stratified_holdout(labels, size, split_seed)
        pool_ids, heldout_ids = ids[pool_idx].tolist(), ids[held_idx].tolist()
        round_scope = f"heldout/round{r}"

        base = featurizer.clone(FitLedger())
        if not train_cae:
            _fit_pool(base, pool_ids, f"{round_scope}/{POOL_SCOPE}")
        ledger.extend(base.ledger)

        member_seeds = derive_seeds(members_seed, config.eval.ensemble_size)
        jobs = Parallel(n_jobs=config.jobs, return_as="generator")(
            delayed(_ensemble_member)(
                base, pool_ids, labels[pool_idx], heldout_ids, round_scope, m, s, config, train_cae
            )
            for m, s in enumerate(member_seeds)
        )
        members = list(tqdm(jobs, total=len(member_seeds), desc=f"round {r + 1} ensemble", disable=None))

        held_out = {round_scope: heldout_ids}
        for _, _, member_ledger, scope, val_ids in members:
            ledger.extend(member_ledger)
            held_out[scope] = val_ids
        ledger.audit(held_out)

        votes = np.stack([m[0] for m in members])
        counts = confusion_counts(majority_vote(votes), labels[held_idx])
        inner = _summary([m[1] for m in members]).mean
        rounds.append(HeldoutRound(
            round=r,
            seed=round_seed,
            heldout_ids=heldout_ids,
            counts=counts,
            rates=rates(counts),
            ensemble_size=len(members),
            member_validation_accuracy=inner,
            votes_positive=votes.sum(axis=0).astype(int).tolist(),
        ))
        logger.info(f"Held-out round {r + 1}/{config.eval.rounds}: accuracy {rounds[-1].rates.accuracy:.3f}")

    report = HeldoutReport(
        family=featurizer.family or config.family,
        scenario=config.scenario,
        feature_dim=_feature_dim(featurizer),
        image_dim=featurizer.image_dim,
        n_subjects=len(labels),
        heldout_size=size,
        ensemble_size=config.eval.ensemble_size,
        master_seed=config.seed,
        rounds=rounds,
        mean_accuracy=_summary([rd.rates.accuracy for rd in rounds]).mean,
        config=config_echo(config),
    )
    logger.info(f"{report.family} held-out ensemble: mean accuracy {report.mean_accuracy:.3f}")
    return report


def cohort_histograms(features: FeatureMatrix, labels: Optional[np.ndarray] = None) -> CohortHistograms:
    """Class-mean imaging vectors (patients, controls) and their difference."""
    labels = features.labels if labels is None else np.asarray(labels)
    if len(labels) != features.n_samples:
        raise LengthMismatch(f"{len(labels)} labels for {features.n_samples} rows")
    _require_both_classes(labels)
    cols = features.image_columns
    values = features.values[:, cols]
    pos = values[labels == 1].mean(axis=0)
    neg = values[labels == 0].mean(axis=0)
    return CohortHistograms(
        names=[features.names[c] for c in cols],
        positive_mean=pos.tolist(),
        negative_mean=neg.tolist(),
        difference=(pos - neg).tolist(),
        n_positive=int((labels == 1).sum()),
        n_negative=int((labels == 0).sum()),
    )
