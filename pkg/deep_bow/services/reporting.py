from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd
from pydantic import ValidationError

from deep_bow.configs.logging_config import setup_logging
from deep_bow.errors import UnreadableReport
from deep_bow.schemas.reports import CohortHistograms, CvReport, HeldoutReport
from deep_bow.services.ledger import FitLedger

setup_logging()
logger = logging.getLogger(__name__)

Report = Union[CvReport, HeldoutReport]


def _write_json(payload: dict, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.3f}"


def write_cv_report(report: CvReport, out_dir: str | Path) -> List[Path]:
    out_dir = Path(out_dir)
    written = [_write_json(report.model_dump(mode="json"), out_dir / "cv_report.json")]

    rows = [
        {
            "repeat": r.repeat,
            "seed": r.seed,
            "train_size": r.train_size,
            "validation_size": r.validation_size,
            "validation_positives": r.validation_positives,
            "tp": r.counts.tp,
            "fp": r.counts.fp,
            "tn": r.counts.tn,
            "fn": r.counts.fn,
            "accuracy": r.rates.accuracy,
            "sensitivity": r.rates.sensitivity,
            "specificity": r.rates.specificity,
            "C": r.C,
            "gamma": r.gamma,
            "converged": r.converged,
            "selected": ";".join(r.selected),
        }
        for r in report.repeats
    ]
    pd.DataFrame(rows).to_csv(out_dir / "cv_repeats.csv", index=False)
    written.append(out_dir / "cv_repeats.csv")

    pd.DataFrame([p.model_dump() for p in report.subset_curve]).to_csv(out_dir / "subset_curve.csv", index=False)
    written.append(out_dir / "subset_curve.csv")

    selection = [
        {"repeat": r.repeat, "step": step, "feature": name, "cv_accuracy": acc}
        for r in report.repeats
        for step, (name, acc) in enumerate(zip(r.selected, r.selection_curve), start=1)
    ]
    pd.DataFrame(selection, columns=["repeat", "step", "feature", "cv_accuracy"]).to_csv(
        out_dir / "selection_report.csv", index=False
    )
    written.append(out_dir / "selection_report.csv")
    return written


def write_heldout_report(report: HeldoutReport, out_dir: str | Path) -> Path:
    return _write_json(report.model_dump(mode="json"), Path(out_dir) / "heldout_report.json")


def write_cohort_histograms(histograms: CohortHistograms, out_dir: str | Path) -> Path:
    path = Path(out_dir) / "cohort_histograms.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({
        "feature": histograms.names,
        "positive_mean": histograms.positive_mean,
        "negative_mean": histograms.negative_mean,
        "difference": histograms.difference,
    }).to_csv(path, index=False)
    return path


def write_ledger(ledger: FitLedger, out_dir: str | Path) -> Path:
    path = Path(out_dir) / "fit_ledger.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(ledger.to_rows(), columns=["scope", "stage", "n_subjects", "subject_ids"]).to_csv(path, index=False)
    return path


def read_report(path: str | Path) -> Report:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise UnreadableReport(f"cannot read report {path}: {e}") from e
    kind = payload.get("kind") if isinstance(payload, dict) else None
    model = {"cv": CvReport, "heldout": HeldoutReport}.get(kind)
    if model is None:
        raise UnreadableReport(f"{path} is not a cv or heldout report")
    try:
        return model.model_validate(payload)
    except ValidationError as e:
        raise UnreadableReport(f"malformed report {path}: {e}") from e


def _companion_heldout(path: Path) -> Optional[HeldoutReport]:
    sibling = path.with_name("heldout_report.json")
    if path.name == "cv_report.json" and sibling.exists():
        report = read_report(sibling)
        return report if isinstance(report, HeldoutReport) else None
    return None


def compare_reports(paths: Sequence[str | Path]) -> pd.DataFrame:
    """One row per report, best CV accuracy first.

    A cv_report.json picks up a heldout_report.json sitting next to it.
    """
    if len(paths) < 2:
        raise UnreadableReport("compare needs at least two reports")
    rows: List[Dict[str, object]] = []
    for raw in paths:
        path = Path(raw)
        report = read_report(path)
        row: Dict[str, object] = {
            "report": str(path),
            "family": report.family,
            "scenario": report.scenario,
            "dimension": report.feature_dim,
            "image_dimension": report.image_dim,
            "cv_accuracy": None,
            "sensitivity": None,
            "specificity": None,
            "heldout_accuracy": None,
        }
        if isinstance(report, CvReport):
            row.update(
                cv_accuracy=report.accuracy.mean,
                sensitivity=report.sensitivity.mean,
                specificity=report.specificity.mean,
            )
            heldout = _companion_heldout(path)
            if heldout is not None:
                row["heldout_accuracy"] = heldout.mean_accuracy
        else:
            row["heldout_accuracy"] = report.mean_accuracy
        rows.append(row)
    frame = pd.DataFrame(rows)
    frame["_order"] = frame["cv_accuracy"].fillna(-1.0)
    frame = frame.sort_values("_order", ascending=False, kind="stable").drop(columns="_order")
    return frame.reset_index(drop=True)


def format_comparison(frame: pd.DataFrame) -> str:
    lines = ["=== Feature family comparison ===", ""]
    header = f"{'family':<12} {'scenario':<11} {'dim':>5} {'accuracy':>9} {'sens':>7} {'spec':>7} {'heldout':>8}"
    lines.append(header)
    lines.append("-" * len(header))
    for row in frame.itertuples(index=False):
        lines.append(
            f"{row.family:<12} {row.scenario:<11} {row.dimension:>5} {_fmt(_na(row.cv_accuracy)):>9} "
            f"{_fmt(_na(row.sensitivity)):>7} {_fmt(_na(row.specificity)):>7} {_fmt(_na(row.heldout_accuracy)):>8}"
        )
    return "\n".join(lines)


def _na(value: object) -> Optional[float]:
    return None if value is None or pd.isna(value) else float(value)


def write_comparison(frame: pd.DataFrame, out_dir: str | Path) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out_dir / "comparison.csv", index=False)
    (out_dir / "comparison.txt").write_text(format_comparison(frame) + "\n")
    return [out_dir / "comparison.csv", out_dir / "comparison.txt"]


def format_report(report: Report) -> str:
    lines = []
    lines.append(f"=== {report.family} ({report.scenario}) ===")
    lines.append(f"Subjects: {report.n_subjects}")
    lines.append(f"Feature dimension: {report.feature_dim} ({report.image_dim} imaging)")
    lines.append(f"Master seed: {report.master_seed}")
    lines.append("")

    if isinstance(report, CvReport):
        lines.append(f"Repeated-split CV ({len(report.repeats)} repeats, {report.validation_fraction:.0%} validation):")
        for name, summary in (
            ("accuracy", report.accuracy),
            ("sensitivity", report.sensitivity),
            ("specificity", report.specificity),
        ):
            lines.append(f"  - {name}: {_fmt(summary.mean)} +- {_fmt(summary.std)}")
        lines.append("")
        if report.subset_curve:
            lines.append("Accuracy by subset size:")
            for p in report.subset_curve:
                lines.append(
                    f"  {p.size:>2}: acc {_fmt(p.accuracy)}  sens {_fmt(p.sensitivity)}  spec {_fmt(p.specificity)}"
                )
            lines.append("")
        if report.feature_groups:
            lines.append("Most selected features:")
            # JSON round trips sort the keys, so reorder by count
            ranked = sorted(report.feature_groups.items(), key=lambda item: (-item[1], item[0]))
            for group, count in ranked[:10]:
                lines.append(f"  - {group} ({count})")
            lines.append("")
    else:
        lines.append(
            f"Held-out ensemble ({len(report.rounds)} rounds of {report.heldout_size}, "
            f"{report.ensemble_size} models):"
        )
        for rd in report.rounds:
            lines.append(
                f"  - round {rd.round + 1}: accuracy {_fmt(rd.rates.accuracy)} "
                f"(members' validation accuracy {_fmt(rd.member_validation_accuracy)})"
            )
        lines.append(f"  mean accuracy: {_fmt(report.mean_accuracy)}")
        lines.append("")

    return "\n".join(lines)
