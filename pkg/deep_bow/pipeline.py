"""Stage graph behind ``deep-bow run``.

A router node plans the stage list from the config on its first visit and
afterwards hands control to the next unexecuted stage, ending when none is
left.
"""
from __future__ import annotations

import json
import time
import logging
from pathlib import Path
from typing import Callable, Dict, List

from langgraph.graph import END, StateGraph

from deep_bow.configs.logging_config import setup_logging
from deep_bow.configs.pipeline_config import PipelineConfig, config_echo
from deep_bow.errors import ConfigError, DeepBowError
from deep_bow.schemas.state import PipelineState, Step
from deep_bow.services.dataio import load_dataset
from deep_bow.services.evaluation import cohort_histograms, heldout_ensemble_eval, repeated_split_cv
from deep_bow.services.featurizer import BowFeaturizer, make_featurizer
from deep_bow.services.features import read_feature_csv, write_feature_csv
from deep_bow.services.ledger import POOL_SCOPE, FitLedger
from deep_bow.services.patchex import extract_dataset_patches
from deep_bow.services.reporting import (
    write_cohort_histograms,
    write_cv_report,
    write_heldout_report,
    write_ledger,
)
from deep_bow.services.splits import derive_seeds

setup_logging()
logger = logging.getLogger(__name__)

STAGES = (
    "load_features",
    "load_data",
    "extract_patches",
    "train_autoencoders",
    "build_vocabulary",
    "featurize",
    "evaluate_cv",
    "evaluate_heldout",
    "write_reports",
)


def plan_stages(config: PipelineConfig) -> List[str]:
    if config.paths.features:
        steps = ["load_features", "featurize"]
    else:
        steps = ["load_data"]
        if config.family != "region-mean":
            steps.append("extract_patches")
        if config.family == "deep-bow":
            steps.append("train_autoencoders")
        if config.family != "region-mean":
            steps.append("build_vocabulary")
        steps.append("featurize")
    if config.eval.protocol in ("cv", "both"):
        steps.append("evaluate_cv")
    if config.eval.protocol in ("heldout", "both"):
        steps.append("evaluate_heldout")
    steps.append("write_reports")
    return steps


def stage_router(state: PipelineState) -> dict:
    """Plan on the first visit, then route to the next unexecuted stage."""
    if not state.current_step:
        steps = [Step(step=s, executed=False) for s in plan_stages(state.config)]
        logger.info(f"Planned stages: {[s.step for s in steps]}")
        return {"steps": steps, "current_step": steps[0].step}

    steps = [s.model_copy() for s in state.steps]
    for step in steps:
        if step.step == state.current_step:
            step.executed = True
    next_step = next((s.step for s in steps if not s.executed), None)
    return {"steps": steps, "current_step": next_step or "END"}


# ---- stages -----------------------------------------------------------------

def load_data_node(state: PipelineState) -> dict:
    if not state.config.paths.manifest:
        raise ConfigError("paths.manifest is required (or --manifest)")
    return {"dataset": load_dataset(state.config.paths.manifest)}


def load_features_node(state: PipelineState) -> dict:
    matrix = read_feature_csv(state.config.paths.features)
    return {"features": matrix, "featurizer": make_featurizer(state.config, matrix=matrix, ledger=state.ledger)}


def extract_patches_node(state: PipelineState) -> dict:
    config = state.config
    return {"bank": extract_dataset_patches(state.dataset, config.patch, config.scenario, config.jobs)}


def _bow_featurizer(state: PipelineState) -> BowFeaturizer:
    if state.featurizer is not None:
        return state.featurizer
    return make_featurizer(state.config, dataset=state.dataset, bank=state.bank, ledger=state.ledger)


def train_autoencoders_node(state: PipelineState) -> dict:
    featurizer = _bow_featurizer(state)
    ids = state.dataset.ids
    featurizer.fit_norms(ids, POOL_SCOPE)
    featurizer.fit_autoencoders(ids, POOL_SCOPE)
    featurizer.save_models(Path(state.config.paths.out_dir) / "artifacts")
    return {"featurizer": featurizer}


def build_vocabulary_node(state: PipelineState) -> dict:
    featurizer = _bow_featurizer(state)
    ids = state.dataset.ids
    featurizer.fit_norms(ids, POOL_SCOPE)
    (seed,) = derive_seeds(state.config.seed, 1, stream=2)
    featurizer.fit_codebooks(ids, POOL_SCOPE, seed)
    artifacts = Path(state.config.paths.out_dir) / "artifacts"
    featurizer.save_normalizers(artifacts)
    featurizer.save_codebooks(artifacts)
    return {"featurizer": featurizer}


def featurize_node(state: PipelineState) -> dict:
    featurizer = state.featurizer
    if featurizer is None:
        featurizer = make_featurizer(state.config, dataset=state.dataset, ledger=state.ledger)
    features = state.features if state.features is not None else featurizer.transform(featurizer.subject_ids)
    out_dir = Path(state.config.paths.out_dir)
    outputs = list(state.outputs)
    if not state.config.paths.features:
        outputs.append(str(write_feature_csv(features, out_dir / "features.csv")))
    logger.info(f"Feature matrix: {features.n_samples} subjects x {features.dim} features ({features.image_dim} imaging)")
    return {
        "featurizer": featurizer,
        "features": features,
        "cohort": cohort_histograms(features),
        "outputs": outputs,
    }


def evaluate_cv_node(state: PipelineState) -> dict:
    return {"cv_report": repeated_split_cv(state.featurizer, state.config, state.ledger)}


def evaluate_heldout_node(state: PipelineState) -> dict:
    return {"heldout_report": heldout_ensemble_eval(state.featurizer, state.config, state.ledger)}


def write_reports_node(state: PipelineState) -> dict:
    start = time.perf_counter()
    out_dir = Path(state.config.paths.out_dir)
    outputs = list(state.outputs)
    if state.cv_report is not None:
        outputs += [str(p) for p in write_cv_report(state.cv_report, out_dir)]
    if state.heldout_report is not None:
        outputs.append(str(write_heldout_report(state.heldout_report, out_dir)))
    if state.cohort is not None:
        outputs.append(str(write_cohort_histograms(state.cohort, out_dir)))
    outputs.append(str(write_ledger(state.ledger, out_dir)))

    meta = {
        "config": config_echo(state.config),
        "master_seed": state.config.seed,
        "stages": [s.step for s in state.steps],
        # the stage wrapper times write_reports only after this file exists
        "timings": {**state.timings, "write_reports": round(time.perf_counter() - start, 3)},
        "feature_dim": state.features.dim if state.features is not None else None,
        "image_dim": state.features.image_dim if state.features is not None else None,
        "outputs": outputs,
    }
    meta_path = out_dir / "run_meta.json"
    meta_path.parent.mkdir(parents=True, exist_ok=True)
    meta_path.write_text(json.dumps(meta, indent=2))
    outputs.append(str(meta_path))
    return {"outputs": outputs}


def _stage(name: str, fn: Callable[[PipelineState], dict]) -> Callable[[PipelineState], dict]:
    def node(state: PipelineState) -> dict:
        logger.info(f"Stage {name} started")
        start = time.perf_counter()
        try:
            updates = fn(state)
        except DeepBowError as e:
            raise e.with_stage(name)
        elapsed = round(time.perf_counter() - start, 3)
        updates["timings"] = {**state.timings, name: elapsed}
        updates["current_step"] = name
        logger.info(f"Stage {name} finished in {elapsed:.1f}s")
        return updates
    return node


NODES: Dict[str, Callable[[PipelineState], dict]] = {
    "load_features": load_features_node,
    "load_data": load_data_node,
    "extract_patches": extract_patches_node,
    "train_autoencoders": train_autoencoders_node,
    "build_vocabulary": build_vocabulary_node,
    "featurize": featurize_node,
    "evaluate_cv": evaluate_cv_node,
    "evaluate_heldout": evaluate_heldout_node,
    "write_reports": write_reports_node,
}


def build_graph():
    workflow = StateGraph(PipelineState)
    workflow.add_node("stage_router", stage_router)
    for name in STAGES:
        workflow.add_node(name, _stage(name, NODES[name]))
        workflow.add_edge(name, "stage_router")

    workflow.add_conditional_edges(
        "stage_router",
        lambda state: state.current_step,
        {**{name: name for name in STAGES}, "END": END},
    )
    workflow.set_entry_point("stage_router")
    return workflow.compile()


def run_pipeline(config: PipelineConfig) -> PipelineState:
    initial_state = PipelineState(config=config, ledger=FitLedger())
    graph = build_graph()
    result = graph.invoke(initial_state, {"recursion_limit": 4 * len(STAGES) + 4})
    final_state = PipelineState(**result)
    logger.info(f"Run finished: {len(final_state.outputs)} files under {config.paths.out_dir}")
    return final_state
