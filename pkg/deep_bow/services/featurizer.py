"""Feature families behind one fit/transform surface.

``deep-bow`` encodes normalized patches with convolutional auto-encoders and
quantizes the latents; ``raw-bow`` quantizes the normalized patch pixels;
``region-mean`` uses in-mask means; ``precomputed`` serves rows of a
feature CSV. Every fit records the subject ids it consumed in a FitLedger.
"""
from __future__ import annotations

import copy
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from deep_bow.configs.logging_config import setup_logging
from deep_bow.configs.pipeline_config import PipelineConfig
from deep_bow.errors import ConfigError, EmptyPatchSet, MissingArtifact, SchemaError
from deep_bow.schemas.features import FeatureMatrix, FeatureVector
from deep_bow.schemas.models import AutoEncoderModel, CaeArch, Codebook
from deep_bow.schemas.patches import STACK_GROUP, NormStats, PatchBank, PatchSet, split_scope
from deep_bow.schemas.volume import Dataset, union_metrics
from deep_bow.services import cae, vocab
from deep_bow.services.features import assemble_features, image_scopes, region_mean_features
from deep_bow.services.ledger import FitLedger
from deep_bow.services.patchex import apply_norm, expand_channels, extract_dataset_patches, fit_norm
from deep_bow.services.splits import derive_seeds

setup_logging()
logger = logging.getLogger(__name__)


class Featurizer:
    family = ""

    def __init__(self, ledger: Optional[FitLedger] = None):
        self.ledger = ledger if ledger is not None else FitLedger()

    def fit(self, train_ids: Sequence[str], scope: str, seed: int = 0, train_cae: bool = True) -> "Featurizer":
        return self

    def transform(self, ids: Sequence[str]) -> FeatureMatrix:
        raise NotImplementedError

    @property
    def image_dim(self) -> int:
        raise NotImplementedError

    @property
    def subject_ids(self) -> List[str]:
        raise NotImplementedError

    @property
    def labels(self) -> np.ndarray:
        raise NotImplementedError

    def clone(self, ledger: Optional[FitLedger] = None) -> "Featurizer":
        twin = copy.copy(self)
        twin.ledger = ledger if ledger is not None else FitLedger()
        return twin


class PrecomputedFeaturizer(Featurizer):
    family = "precomputed"

    def __init__(self, matrix: FeatureMatrix, ledger: Optional[FitLedger] = None):
        super().__init__(ledger)
        self.matrix = matrix

    def transform(self, ids: Sequence[str]) -> FeatureMatrix:
        return self.matrix.rows(ids)

    @property
    def image_dim(self) -> int:
        return self.matrix.image_dim

    @property
    def subject_ids(self) -> List[str]:
        return self.matrix.subject_ids

    @property
    def labels(self) -> np.ndarray:
        return self.matrix.labels


class RegionMeanFeaturizer(Featurizer):
    family = "region-mean"

    def __init__(self, dataset: Dataset, ledger: Optional[FitLedger] = None):
        super().__init__(ledger)
        vectors = [region_mean_features(s, dataset.metric_config) for s in dataset.subjects]
        self.matrix = FeatureMatrix.from_vectors(vectors, dataset.labels, dataset.ids)

    def transform(self, ids: Sequence[str]) -> FeatureMatrix:
        return self.matrix.rows(ids)

    @property
    def image_dim(self) -> int:
        return self.matrix.image_dim

    @property
    def subject_ids(self) -> List[str]:
        return self.matrix.subject_ids

    @property
    def labels(self) -> np.ndarray:
        return self.matrix.labels


class BowFeaturizer(Featurizer):
    """Per-scope normalizers and codebooks, plus auto-encoders for ``deep-bow``.

    Per-metric scenario: one auto-encoder per metric shared by both regions,
    one codebook per (region, metric). Stacked scenario: one auto-encoder
    over the union channel order, one codebook per region.
    """

    def __init__(
        self,
        dataset: Dataset,
        config: PipelineConfig,
        bank: Optional[PatchBank] = None,
        ledger: Optional[FitLedger] = None,
        deep: bool = True,
    ):
        super().__init__(ledger)
        self.family = "deep-bow" if deep else "raw-bow"
        self.deep = deep
        self.dataset = dataset
        self.config = config
        self.bank = bank if bank is not None else extract_dataset_patches(
            dataset, config.patch, config.scenario, config.jobs
        )
        self.scopes = image_scopes(dataset.metric_config, config.scenario)
        missing = set(self.scopes) - set(self.bank.sets)
        if missing:
            raise SchemaError(f"patch bank lacks scopes {sorted(missing)}")
        self.channel_order = union_metrics(dataset.metric_config)
        self._records = {s.id: s for s in dataset.subjects}
        self.norms: Dict[str, NormStats] = {}
        self.models: Dict[str, AutoEncoderModel] = {}
        self.codebooks: Dict[str, Codebook] = {}

    def clone(self, ledger: Optional[FitLedger] = None) -> "BowFeaturizer":
        twin = super().clone(ledger)
        twin.norms = dict(self.norms)
        twin.models = dict(self.models)
        twin.codebooks = dict(self.codebooks)
        return twin

    @property
    def image_dim(self) -> int:
        return len(self.scopes) * self.config.vocab.words

    @property
    def subject_ids(self) -> List[str]:
        return self.dataset.ids

    @property
    def labels(self) -> np.ndarray:
        return self.dataset.labels

    # ---- fitting --------------------------------------------------------

    def cae_keys(self) -> List[str]:
        if self.config.scenario == "stacked":
            return [STACK_GROUP]
        return list(dict.fromkeys(split_scope(s)[1] for s in self.scopes))

    def _scopes_of(self, key: str) -> List[str]:
        if key == STACK_GROUP:
            return list(self.scopes)
        return [s for s in self.scopes if split_scope(s)[1] == key]

    def _prepared(self, scope: str, ids: Sequence[str]) -> PatchSet:
        patches = self.bank.sets[scope].select_subjects(ids)
        if len(patches) == 0:
            raise EmptyPatchSet(f"no {scope} patches for the requested subjects")
        if scope not in self.norms:
            raise MissingArtifact(f"no patch normalizer for {scope}")
        patches = apply_norm(patches, self.norms[scope])
        if self.deep and self.config.scenario == "stacked":
            patches = expand_channels(patches, self.channel_order)
        return patches

    def fit_norms(self, train_ids: Sequence[str], scope: str) -> None:
        for s in self.scopes:
            self.norms[s] = fit_norm(self.bank.sets[s].select_subjects(train_ids))
        self.ledger.record(scope, "normalizer", train_ids)

    def _arch(self, channels: int) -> CaeArch:
        return CaeArch.build(
            size=self.config.patch.size,
            channels=channels,
            hidden=self.config.cae.widths,
            latent=self.config.latent_dim(),
        )

    def fit_autoencoders(self, train_ids: Sequence[str], scope: str) -> None:
        cae_config = self.config.cae
        for index, key in enumerate(self.cae_keys()):
            patches = PatchSet.concat([self._prepared(s, train_ids) for s in self._scopes_of(key)])
            model = cae.init_model(self._arch(patches.channels), seed=cae_config.init_seed + index)
            logger.info(f"Training {key} auto-encoder on {len(patches)} patches ({patches.channels} channel(s))")
            self.models[key], _ = cae.train(model, patches, cae_config.train)
        self.ledger.record(scope, "autoencoder", train_ids)

    def _vectors(self, scope: str, ids: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
        patches = self._prepared(scope, ids)
        if not self.deep:
            return patches.flat().astype(np.float64), patches.subject_ids
        key = STACK_GROUP if self.config.scenario == "stacked" else split_scope(scope)[1]
        if key not in self.models:
            raise MissingArtifact(f"no trained {key} auto-encoder for {scope}; run train-cae first")
        latents = cae.encode_set(self.models[key], patches, self.config.cae.encode_batch)
        return latents, patches.subject_ids

    def fit_codebooks(self, train_ids: Sequence[str], scope: str, seed: int = 0) -> None:
        words = self.config.vocab
        for s, s_seed in zip(self.scopes, derive_seeds(seed, len(self.scopes))):
            vectors, _ = self._vectors(s, train_ids)
            self.codebooks[s] = vocab.kmeans_fit(
                vectors,
                words.words,
                seed=s_seed,
                max_iters=words.max_iters,
                tol=words.tol,
                scope=s,
                feature_kind="latent" if self.deep else "raw",
            )
        self.ledger.record(scope, "codebook", train_ids)

    def fit(self, train_ids: Sequence[str], scope: str, seed: int = 0, train_cae: bool = True) -> "BowFeaturizer":
        self.fit_norms(train_ids, scope)
        if self.deep and (train_cae or not self.models):
            self.fit_autoencoders(train_ids, scope)
        self.fit_codebooks(train_ids, scope, seed)
        return self

    # ---- transform -------------------------------------------------------

    def transform(self, ids: Sequence[str]) -> FeatureMatrix:
        if set(self.codebooks) != set(self.scopes):
            raise ConfigError("featurizer used before its codebooks were fitted")
        ids = list(ids)
        per_subject: Dict[str, list] = {sid: [] for sid in ids}
        for s in self.scopes:
            vectors, owners = self._vectors(s, ids)
            for sid in ids:
                per_subject[sid].append(vocab.bow_histogram(self.codebooks[s], vectors[owners == sid]))
        rows: List[FeatureVector] = []
        for sid in ids:
            record = self._records[sid]
            rows.append(assemble_features(
                per_subject[sid],
                record.demographics,
                record.clinical,
                self.dataset.metric_config,
                self.config.scenario,
            ))
        labels = [self._records[sid].label for sid in ids]
        return FeatureMatrix.from_vectors(rows, labels, ids)

    # ---- artifacts ------------------------------------------------------

    def save_normalizers(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = {s: n.model_dump() for s, n in self.norms.items()}
        (out_dir / "normalizers.json").write_text(json.dumps(payload, indent=2))

    def save_models(self, out_dir: str | Path) -> None:
        for key, model in self.models.items():
            cae.save_model(model, Path(out_dir) / "models" / f"{key}.json")

    def save_codebooks(self, out_dir: str | Path) -> None:
        for s, codebook in self.codebooks.items():
            vocab.save_codebook(codebook, Path(out_dir) / "codebooks" / f"{s.replace('/', '__')}.json")

    def load_artifacts(self, in_dir: str | Path, codebooks: bool = True) -> None:
        """Restore whatever normalizers, auto-encoders and codebooks exist under ``in_dir``."""
        in_dir = Path(in_dir)
        norms_path = in_dir / "normalizers.json"
        if norms_path.exists():
            self.norms = {s: NormStats(**n) for s, n in json.loads(norms_path.read_text()).items()}
        if self.deep:
            for key in self.cae_keys():
                path = in_dir / "models" / f"{key}.json"
                if path.exists():
                    self.models[key] = cae.load_model(path)
        if codebooks:
            for s in self.scopes:
                path = in_dir / "codebooks" / f"{s.replace('/', '__')}.json"
                if path.exists():
                    self.codebooks[s] = vocab.load_codebook(path)


def make_featurizer(
    config: PipelineConfig,
    dataset: Optional[Dataset] = None,
    bank: Optional[PatchBank] = None,
    matrix: Optional[FeatureMatrix] = None,
    ledger: Optional[FitLedger] = None,
) -> Featurizer:
    if matrix is not None:
        return PrecomputedFeaturizer(matrix, ledger)
    if dataset is None:
        raise ConfigError("a dataset manifest or a feature csv is required")
    if config.family == "region-mean":
        return RegionMeanFeaturizer(dataset, ledger)
    return BowFeaturizer(dataset, config, bank, ledger, deep=config.family == "deep-bow")
