import json

import pandas as pd
import pytest

from deep_bow.main import build_parser, main
from deep_bow.services.dataio import load_dataset, write_dataset

from tests.conftest import small_config

METRICS = ["AWF", "DA", "De_par", "FA", "MD", "AK", "MK", "RK"]


@pytest.fixture
def workspace(tmp_path, small_dataset):
    manifest = write_dataset(small_dataset, tmp_path / "data")
    out = tmp_path / "run"
    config = tmp_path / "config.json"
    config.write_text(small_config(paths={"out_dir": str(out)}).model_dump_json())
    return {"manifest": str(manifest), "out": out, "config": str(config)}


def _flags(ws, *extra):
    return ["--config", ws["config"], "--manifest", ws["manifest"], *extra]


def test_parser_knows_every_command():
    parser = build_parser()
    for command in ("extract", "train-cae", "build-vocab", "featurize", "evaluate", "holdout", "run"):
        args = parser.parse_args([command, "--seed", "5"])
        assert (args.command, args.seed) == (command, 5)
    with pytest.raises(SystemExit):
        parser.parse_args(["evaluate", "--family", "voxels"])


def test_synth_writes_a_loadable_cohort(tmp_path):
    code = main(["synth", "--subjects", "6", "--patients", "2", "--seed", "4", "--out", str(tmp_path / "d")])
    assert code == 0
    dataset = load_dataset(tmp_path / "d" / "manifest.json")
    assert dataset.class_counts() == (2, 4)


def test_synth_rejects_more_patients_than_subjects(tmp_path):
    assert main(["synth", "--subjects", "5", "--patients", "6", "--out", str(tmp_path / "d")]) == 2
    assert not (tmp_path / "d").exists()


def test_evaluate_without_data_is_a_config_error(tmp_path):
    assert main(["evaluate", "--family", "region-mean", "--out", str(tmp_path)]) == 2


def test_missing_manifest_is_a_data_error(tmp_path):
    code = main(["evaluate", "--family", "region-mean", "--manifest", str(tmp_path / "nope.json")])
    assert code == 3


def test_region_mean_evaluate_and_report(workspace, capsys):
    code = main(["evaluate", *_flags(workspace, "--family", "region-mean", "--repeats", "2")])
    assert code == 0
    assert "region-mean (per-metric)" in capsys.readouterr().out
    report_path = workspace["out"] / "cv_report.json"
    assert json.loads(report_path.read_text())["feature_dim"] == 19
    assert (workspace["out"] / "fit_ledger.csv").exists()

    assert main(["report", str(report_path)]) == 0
    assert "Repeated-split CV (2 repeats" in capsys.readouterr().out


def test_report_on_garbage_exits_with_data_error(tmp_path):
    path = tmp_path / "x.json"
    path.write_text("{}")
    assert main(["report", str(path)]) == 3


def test_staged_deep_bow_commands(workspace, capsys):
    out = workspace["out"]
    assert main(["extract", *_flags(workspace)]) == 0
    assert (out / "patches" / "patch_bank.json").exists()

    assert main(["featurize", *_flags(workspace)]) == 2  # codebooks missing
    assert main(["build-vocab", *_flags(workspace)]) == 2  # auto-encoders missing

    assert main(["train-cae", *_flags(workspace)]) == 0
    assert sorted(p.stem for p in (out / "artifacts" / "models").glob("*.json")) == sorted(METRICS)

    assert main(["build-vocab", *_flags(workspace)]) == 0
    assert len(list((out / "artifacts" / "codebooks").glob("*.json"))) == 13

    assert main(["featurize", *_flags(workspace)]) == 0
    features = pd.read_csv(out / "features.csv")
    assert features.shape == (12, 1 + 45 + 1)
    assert (out / "cohort_histograms.csv").exists()

    capsys.readouterr()
    code = main(["holdout", "--config", workspace["config"], "--features", str(out / "features.csv")])
    assert code == 0
    assert "Held-out ensemble" in capsys.readouterr().out
    assert json.loads((out / "heldout_report.json").read_text())["family"] == "precomputed"


def test_compare_two_runs(workspace, tmp_path, capsys):
    first = tmp_path / "a"
    second = tmp_path / "b"
    for out, repeats in ((first, "2"), (second, "1")):
        flags = _flags(workspace, "--family", "region-mean", "--repeats", repeats, "--out", str(out))
        assert main(["evaluate", *flags]) == 0
    capsys.readouterr()

    code = main(["compare", str(first / "cv_report.json"), str(second / "cv_report.json"), "--out", str(tmp_path)])
    assert code == 0
    assert "Feature family comparison" in capsys.readouterr().out
    assert len(pd.read_csv(tmp_path / "comparison.csv")) == 2


def test_featurize_without_autoencoders_is_a_config_error(workspace):
    assert main(["build-vocab", *_flags(workspace, "--family", "raw-bow")]) == 0
    assert main(["featurize", *_flags(workspace)]) == 2
