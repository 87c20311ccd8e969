import numpy as np
import pytest

from deep_bow.configs.pipeline_config import PatchConfig
from deep_bow.errors import DegenerateChannel, EmptyResult, OriginMismatch, PatchGeometryError, ShapeMismatch
from deep_bow.schemas.volume import MetricVolume
from deep_bow.services.patchex import (
    apply_norm,
    expand_channels,
    extract_dataset_patches,
    extract_patches,
    fit_norm,
    load_patch_bank,
    save_patch_bank,
    stack_metrics,
)


def _ramp(nx=6, ny=5, nz=2, mask=None):
    values = np.arange(nx * ny * nz, dtype=np.float32).reshape(nz, ny, nx)
    return MetricVolume.from_arrays(values, mask)


def test_lattice_order_and_contents():
    volume = _ramp()
    patches = extract_patches(volume, size=2, stride=2, coverage_min=1.0, subject_id="s", region="cc", metric="FA")
    # x in {0, 2, 4}, y in {0, 2}, z in {0, 1}
    assert len(patches) == 12
    assert patches.origins[:4].tolist() == [[0, 0, 0], [2, 0, 0], [4, 0, 0], [0, 2, 0]]
    assert patches.origins[6].tolist() == [0, 0, 1]
    x, y, z = patches.origins[4]
    np.testing.assert_array_equal(patches.values[4, 0], volume.values[z, y:y + 2, x:x + 2])
    assert patches[4].subject_id == "s"
    assert patches.group == "FA"


def test_every_patch_meets_coverage():
    values = np.ones((1, 8, 8), dtype=np.float32)
    mask = np.zeros((1, 8, 8), dtype=bool)
    mask[0, :4, :3] = True
    volume = MetricVolume.from_arrays(values, mask)
    patches = extract_patches(volume, size=4, stride=2, coverage_min=0.5)
    for x, y, z in patches.origins:
        assert mask[z, y:y + 4, x:x + 4].mean() >= 0.5
    assert patches.origins.tolist() == [[0, 0, 0]]


def test_no_window_reaches_coverage():
    mask = np.zeros((1, 8, 8), dtype=bool)
    mask[0, 0, 0] = True
    volume = MetricVolume.from_arrays(np.ones((1, 8, 8)), mask)
    with pytest.raises(EmptyResult):
        extract_patches(volume, size=4, stride=4, coverage_min=0.5)


@pytest.mark.parametrize("size,stride,coverage", [(7, 1, 0.5), (1, 1, 0.5), (2, 0, 0.5), (2, 1, 0.0), (2, 1, 1.5)])
def test_bad_geometry(size, stride, coverage):
    with pytest.raises(PatchGeometryError):
        extract_patches(_ramp(), size=size, stride=stride, coverage_min=coverage)


def test_stack_keeps_metric_order():
    a = extract_patches(_ramp(), 2, 2, 1.0, region="cc", metric="FA")
    b = extract_patches(_ramp(), 2, 2, 1.0, region="cc", metric="MD")
    stacked = stack_metrics([a, b])
    assert stacked.metrics == ("FA", "MD")
    assert stacked.channels == 2
    assert stacked.group == "stack"
    np.testing.assert_array_equal(stacked.values[:, 1], b.values[:, 0])


def test_stack_rejects_different_windows():
    a = extract_patches(_ramp(), 2, 2, 1.0, metric="FA")
    b = extract_patches(_ramp(), 2, 1, 1.0, metric="MD")
    with pytest.raises(OriginMismatch):
        stack_metrics([a, b])


def test_normalization_zero_mean_unit_std(rng):
    volume = MetricVolume.from_arrays(3.0 + 2.0 * rng.standard_normal((2, 10, 10)))
    patches = extract_patches(volume, 4, 2, 1.0, metric="FA")
    stats = fit_norm(patches)
    normed = apply_norm(patches, stats)
    assert normed.values.mean() == pytest.approx(0.0, abs=1e-9)
    assert normed.values.std() == pytest.approx(1.0, rel=1e-9)
    assert normed.norm_stats == stats


def test_constant_channel_is_degenerate():
    patches = extract_patches(MetricVolume.from_arrays(np.ones((1, 4, 4))), 2, 2, 1.0, metric="FA")
    with pytest.raises(DegenerateChannel):
        fit_norm(patches)


def test_normalizer_channel_count_must_match(rng):
    volume = MetricVolume.from_arrays(rng.standard_normal((1, 6, 6)))
    one = extract_patches(volume, 2, 2, 1.0, metric="FA")
    two = stack_metrics([one, extract_patches(volume, 2, 2, 1.0, metric="MD")])
    with pytest.raises(ShapeMismatch):
        apply_norm(two, fit_norm(one))


def test_expand_channels_zero_fills_absent_metrics(rng):
    volume = MetricVolume.from_arrays(rng.standard_normal((1, 6, 6)))
    fa = extract_patches(volume, 2, 2, 1.0, metric="FA")
    rk = extract_patches(volume, 2, 2, 1.0, metric="RK")
    wide = expand_channels(stack_metrics([fa, rk]), ["AWF", "FA", "MD", "RK"])
    assert wide.metrics == ("AWF", "FA", "MD", "RK")
    assert not wide.values[:, [0, 2]].any()
    np.testing.assert_array_equal(wide.values[:, 3], rk.values[:, 0])


def test_dataset_bank_scopes_and_round_trip(tmp_path, small_dataset):
    geometry = PatchConfig(size=8, stride=4, coverage_min=0.5)
    bank = extract_dataset_patches(small_dataset, geometry, "stacked")
    assert bank.scopes() == ["cc/stack", "thalamus/stack"]
    assert bank.sets["cc/stack"].channels == 8
    assert bank.sets["thalamus/stack"].channels == 5
    assert set(bank.sets["cc/stack"].subject_ids) == set(small_dataset.ids)

    loaded = load_patch_bank(save_patch_bank(bank, tmp_path / "patches"))
    assert loaded.scopes() == bank.scopes()
    np.testing.assert_array_equal(loaded.sets["cc/stack"].values, bank.sets["cc/stack"].values)
    assert loaded.sets["thalamus/stack"].metrics == bank.sets["thalamus/stack"].metrics

    subset = bank.select_subjects(small_dataset.ids[:2])
    assert set(subset.sets["cc/stack"].subject_ids) == set(small_dataset.ids[:2])


def test_per_metric_bank_has_one_scope_per_pair(small_dataset):
    bank = extract_dataset_patches(small_dataset, PatchConfig(size=8, stride=4), "per-metric")
    assert len(bank.scopes()) == 13
    assert bank.scopes()[0] == "cc/AWF"
    assert bank.scopes()[-1] == "thalamus/RK"
