"""One handler per subcommand; each returns the process exit code."""
from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Callable, Dict, Optional

from pydantic import ValidationError

from deep_bow.configs.logging_config import setup_logging
from deep_bow.configs.pipeline_config import PipelineConfig, apply_overrides, load_config
from deep_bow.errors import ConfigError, InvalidSpec
from deep_bow.pipeline import run_pipeline
from deep_bow.schemas.patches import PatchBank
from deep_bow.schemas.volume import Dataset, PhantomSpec
from deep_bow.services.dataio import load_dataset, write_dataset
from deep_bow.services.evaluation import cohort_histograms, heldout_ensemble_eval, repeated_split_cv
from deep_bow.services.featurizer import BowFeaturizer, Featurizer, make_featurizer
from deep_bow.services.features import read_feature_csv, write_feature_csv
from deep_bow.services.ledger import POOL_SCOPE, FitLedger
from deep_bow.services.patchex import extract_dataset_patches, load_patch_bank, save_patch_bank
from deep_bow.services.phantom import generate_phantom_dataset
from deep_bow.services.reporting import (
    compare_reports,
    format_comparison,
    format_report,
    read_report,
    write_cohort_histograms,
    write_comparison,
    write_cv_report,
    write_heldout_report,
    write_ledger,
)
from deep_bow.services.splits import derive_seeds

setup_logging()
logger = logging.getLogger(__name__)


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """JSON config (or defaults) with command-line flags applied on top."""
    config = load_config(getattr(args, "config", None))
    return apply_overrides(
        config,
        seed=getattr(args, "seed", None),
        out=getattr(args, "out", None),
        jobs=getattr(args, "jobs", None),
        family=getattr(args, "family", None),
        scenario=getattr(args, "scenario", None),
        words=getattr(args, "words", None),
        manifest=getattr(args, "manifest", None),
        features=getattr(args, "features", None),
        strict=getattr(args, "strict", None),
        strict_leakage=getattr(args, "strict_leakage", None),
        protocol=getattr(args, "protocol", None),
        repeats=getattr(args, "repeats", None),
    )


def _out(config: PipelineConfig) -> Path:
    return Path(config.paths.out_dir)


def _dataset(config: PipelineConfig) -> Dataset:
    if not config.paths.manifest:
        raise ConfigError("a dataset manifest is required (--manifest or paths.manifest)")
    return load_dataset(config.paths.manifest)


def _bank(config: PipelineConfig, dataset: Dataset) -> PatchBank:
    """Reuse the bank written by `extract` when its geometry matches the config."""
    index = _out(config) / "patches" / "patch_bank.json"
    if index.exists():
        bank = load_patch_bank(index.parent)
        geometry = (bank.scenario, bank.size, bank.stride, bank.coverage_min)
        wanted = (config.scenario, config.patch.size, config.patch.stride, config.patch.coverage_min)
        if geometry == wanted:
            logger.info(f"Reusing patch bank {index.parent}")
            return bank
        logger.warning(f"Patch bank {index.parent} was extracted with {geometry}; re-extracting")
    return extract_dataset_patches(dataset, config.patch, config.scenario, config.jobs)


def _bow(config: PipelineConfig, dataset: Dataset, ledger: Optional[FitLedger] = None) -> BowFeaturizer:
    if config.family == "region-mean":
        raise ConfigError("this command needs a bag-of-words family (deep-bow or raw-bow)")
    return make_featurizer(config, dataset=dataset, bank=_bank(config, dataset), ledger=ledger)


def _featurizer(config: PipelineConfig, ledger: FitLedger) -> Featurizer:
    if config.paths.features:
        return make_featurizer(config, matrix=read_feature_csv(config.paths.features), ledger=ledger)
    dataset = _dataset(config)
    if config.family == "region-mean":
        return make_featurizer(config, dataset=dataset, ledger=ledger)
    featurizer = _bow(config, dataset, ledger)
    # cohort auto-encoders from train-cae stand in for the pooled fit
    if featurizer.deep:
        featurizer.load_artifacts(_out(config) / "artifacts", codebooks=False)
    return featurizer


# ---- handlers ---------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    try:
        spec = PhantomSpec(
            n_subjects=args.subjects,
            n_patients=args.patients,
            seed=args.seed if args.seed is not None else 7,
            effect_size=args.effect_size,
            lesion_fraction=args.lesion_fraction,
            clinical_gap=args.clinical_gap,
        )
    except ValidationError as e:
        raise InvalidSpec(f"invalid phantom settings: {e}") from e
    manifest = write_dataset(generate_phantom_dataset(spec), args.out or "data")
    logger.info(f"Wrote phantom cohort manifest {manifest}")
    return 0


def cmd_extract(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    dataset = _dataset(config)
    bank = extract_dataset_patches(dataset, config.patch, config.scenario, config.jobs)
    out = save_patch_bank(bank, _out(config) / "patches")
    logger.info(f"Saved {len(bank.sets)} patch sets to {out}")
    return 0


def cmd_train_cae(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    if config.family != "deep-bow":
        raise ConfigError(f"train-cae needs family deep-bow, got {config.family}")
    dataset = _dataset(config)
    featurizer = _bow(config, dataset)
    featurizer.fit_norms(dataset.ids, POOL_SCOPE)
    featurizer.fit_autoencoders(dataset.ids, POOL_SCOPE)
    artifacts = _out(config) / "artifacts"
    featurizer.save_normalizers(artifacts)
    featurizer.save_models(artifacts)
    logger.info(f"Saved {len(featurizer.models)} auto-encoder(s) to {artifacts / 'models'}")
    return 0


def cmd_build_vocab(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    dataset = _dataset(config)
    featurizer = _bow(config, dataset)
    artifacts = _out(config) / "artifacts"
    featurizer.load_artifacts(artifacts, codebooks=False)
    if featurizer.deep and set(featurizer.models) != set(featurizer.cae_keys()):
        raise ConfigError(f"no trained auto-encoders under {artifacts}; run train-cae first")
    featurizer.fit_norms(dataset.ids, POOL_SCOPE)
    (seed,) = derive_seeds(config.seed, 1, stream=2)
    featurizer.fit_codebooks(dataset.ids, POOL_SCOPE, seed)
    featurizer.save_normalizers(artifacts)
    featurizer.save_codebooks(artifacts)
    logger.info(f"Saved {len(featurizer.codebooks)} codebooks to {artifacts / 'codebooks'}")
    return 0


def cmd_featurize(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    dataset = _dataset(config)
    if config.family == "region-mean":
        featurizer = make_featurizer(config, dataset=dataset)
    else:
        featurizer = _bow(config, dataset)
        featurizer.load_artifacts(_out(config) / "artifacts")
        if set(featurizer.codebooks) != set(featurizer.scopes):
            raise ConfigError("codebooks are missing; run build-vocab first")
    features = featurizer.transform(dataset.ids)
    write_feature_csv(features, _out(config) / "features.csv")
    write_cohort_histograms(cohort_histograms(features), _out(config))
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    ledger = FitLedger()
    report = repeated_split_cv(_featurizer(config, ledger), config, ledger)
    write_cv_report(report, _out(config))
    write_ledger(ledger, _out(config))
    print(format_report(report))
    return 0


def cmd_holdout(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    ledger = FitLedger()
    report = heldout_ensemble_eval(_featurizer(config, ledger), config, ledger)
    write_heldout_report(report, _out(config))
    write_ledger(ledger, _out(config))
    print(format_report(report))
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    frame = compare_reports(args.reports)
    write_comparison(frame, args.out or ".")
    print(format_comparison(frame))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    print(format_report(read_report(args.report)))
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    state = run_pipeline(config)
    for report in (state.cv_report, state.heldout_report):
        if report is not None:
            print(format_report(report))
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "synth": cmd_synth,
    "extract": cmd_extract,
    "train-cae": cmd_train_cae,
    "build-vocab": cmd_build_vocab,
    "featurize": cmd_featurize,
    "evaluate": cmd_evaluate,
    "holdout": cmd_holdout,
    "compare": cmd_compare,
    "report": cmd_report,
    "run": cmd_run,
}
