import numpy as np
import pytest

from deep_bow.configs.pipeline_config import TrainConfig
from deep_bow.errors import EmptyPatchSet, InvalidArch, ShapeMismatch
from deep_bow.schemas.models import AutoEncoderModel, CaeArch, ConvLayer
from deep_bow.services import cae

EPS = 1e-4


def _shifted(model, layer, kind, index, delta):
    layers = [ConvLayer(weight=l.weight.copy(), bias=l.bias.copy()) for l in model.layers]
    getattr(layers[layer], kind)[index] += delta
    return AutoEncoderModel(arch=model.arch, layers=layers, seed=model.seed)


def _same_pattern(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


SHRUNKEN = [
    CaeArch(size=8, channels=1, widths=(2, 2, 4)),
    CaeArch(size=8, channels=2, widths=(3, 2)),
]


@pytest.mark.parametrize("arch", SHRUNKEN)
def test_gradients_match_central_differences(arch):
    _check_gradients(arch, seed=0)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
def test_gradients_over_many_draws(seed):
    _check_gradients(SHRUNKEN[seed % 2], seed=seed)


def _check_gradients(arch, seed):
    rng = np.random.default_rng(seed)
    model = cae.init_model(arch, seed=seed + 5, dtype=np.float64)
    # non-zero biases exercise the bias path
    model = AutoEncoderModel(
        arch=arch,
        layers=[ConvLayer(weight=l.weight, bias=0.05 * rng.standard_normal(l.bias.shape)) for l in model.layers],
    )
    batch = rng.standard_normal((3, arch.channels, arch.size, arch.size))
    grads = cae.backward(model, batch)
    base_pattern = cae.activation_pattern(model, batch)

    checked = 0
    for layer in range(len(model.layers)):
        for kind in ("weight", "bias"):
            values = getattr(model.layers[layer], kind)
            for flat in rng.choice(values.size, size=min(4, values.size), replace=False):
                index = np.unravel_index(flat, values.shape)
                plus = _shifted(model, layer, kind, index, EPS)
                minus = _shifted(model, layer, kind, index, -EPS)
                if not (
                    _same_pattern(base_pattern, cae.activation_pattern(plus, batch))
                    and _same_pattern(base_pattern, cae.activation_pattern(minus, batch))
                ):
                    continue
                numeric = (
                    cae.loss(cae.forward(plus, batch)[1], batch) - cae.loss(cae.forward(minus, batch)[1], batch)
                ) / (2 * EPS)
                analytic = getattr(grads.layers[layer], kind)[index]
                assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-8), (layer, kind, index)
                checked += 1
    assert checked >= len(model.layers)


def test_loss_is_mean_squared_error(rng):
    recon = rng.standard_normal((2, 1, 4, 4))
    batch = rng.standard_normal((2, 1, 4, 4))
    assert cae.loss(recon, batch) == pytest.approx(np.mean((recon - batch) ** 2))
    assert cae.loss(batch, batch) == 0.0


def test_backward_reports_the_forward_loss(rng):
    model = cae.init_model(CaeArch(size=8, channels=1, widths=(2, 2)), dtype=np.float64)
    batch = rng.standard_normal((4, 1, 8, 8))
    assert cae.backward(model, batch).loss == pytest.approx(cae.loss(cae.forward(model, batch)[1], batch))


def test_sgd_step_moves_against_the_gradient(rng):
    model = cae.init_model(CaeArch(size=4, channels=1, widths=(2,)), dtype=np.float64)
    grads = cae.backward(model, rng.standard_normal((2, 1, 4, 4)))
    stepped = cae.sgd_step(model, grads, 0.5)
    for before, after, g in zip(model.layers, stepped.layers, grads.layers):
        np.testing.assert_allclose(after.weight, before.weight - 0.5 * g.weight)
        np.testing.assert_allclose(after.bias, before.bias - 0.5 * g.bias)


def test_full_batch_training_lowers_the_loss(rng):
    arch = CaeArch(size=8, channels=1, widths=(4, 4))
    model = cae.init_model(arch, seed=1)
    patches = rng.standard_normal((32, 1, 8, 8)).astype(np.float32)
    config = TrainConfig(epochs=15, batch_size=32, learning_rate=0.05, seed=0)
    trained, trace = cae.train(model, patches, config)
    assert len(trace) == 15
    assert trace[-1] < trace[0]
    assert trained.dtype == np.float32


def test_training_is_seeded(rng):
    arch = CaeArch(size=4, channels=1, widths=(2,))
    patches = rng.standard_normal((10, 1, 4, 4))
    config = TrainConfig(epochs=2, batch_size=3, learning_rate=0.01, seed=4)
    a, trace_a = cae.train(cae.init_model(arch, seed=2), patches, config)
    b, trace_b = cae.train(cae.init_model(arch, seed=2), patches, config)
    assert trace_a == trace_b
    np.testing.assert_array_equal(a.layers[0].weight, b.layers[0].weight)


def test_encode_shapes_and_batching(rng):
    arch = CaeArch(size=8, channels=2, widths=(2, 3))
    model = cae.init_model(arch, seed=0)
    patches = rng.standard_normal((5, 2, 8, 8))
    latents = cae.encode_set(model, patches, batch_size=2)
    assert latents.shape == (5, arch.latent_dim) == (5, 12)
    np.testing.assert_allclose(latents[3], cae.encode(model, patches[3]), rtol=1e-5, atol=1e-6)
    assert np.all(latents >= 0)


def test_model_round_trip(tmp_path):
    model = cae.init_model(CaeArch(size=8, channels=1, widths=(2, 2)), seed=9)
    cae.save_model(model, tmp_path / "m.json")
    again = cae.load_model(tmp_path / "m.json")
    assert again.arch == model.arch
    for a, b in zip(model.layers, again.layers):
        np.testing.assert_array_equal(a.weight, b.weight)


def test_arch_and_batch_validation():
    with pytest.raises(InvalidArch):
        CaeArch(size=12, channels=1, widths=(2, 2, 2))
    model = cae.init_model(CaeArch(size=8, channels=1, widths=(2,)))
    with pytest.raises(ShapeMismatch):
        cae.forward(model, np.zeros((2, 1, 4, 4)))
    with pytest.raises(EmptyPatchSet):
        cae.train(model, np.zeros((0, 1, 8, 8)), TrainConfig())


def test_maxpool_ties_take_the_first_element():
    x = np.ones((1, 1, 2, 2))
    out, arg = cae.maxpool_forward(x)
    assert out[0, 0, 0, 0] == 1.0
    assert arg[0, 0, 0, 0] == 0
    grad = cae.maxpool_backward(np.full((1, 1, 1, 1), 3.0), arg, x.shape)
    assert grad[0, 0].tolist() == [[3.0, 0.0], [0.0, 0.0]]


@pytest.mark.slow
def test_default_training_descends_on_phantom_patches():
    from deep_bow.configs.pipeline_config import PipelineConfig
    from deep_bow.schemas.volume import PhantomSpec
    from deep_bow.services.patchex import apply_norm, extract_dataset_patches, fit_norm
    from deep_bow.services.phantom import generate_phantom_dataset

    config = PipelineConfig()
    bank = extract_dataset_patches(generate_phantom_dataset(PhantomSpec(seed=7)), config.patch)
    pool = np.concatenate([apply_norm(s, fit_norm(s)).values for s in bank.sets.values()])
    assert len(pool) >= 10_000
    patches = np.random.default_rng(0).permutation(pool)[:10_000]

    arch = CaeArch.build(size=config.patch.size, channels=1, hidden=config.cae.widths, latent=config.latent_dim())
    descended = 0
    for run in range(20):
        train_config = config.cae.train.model_copy(update={"seed": run})
        _, trace = cae.train(cae.init_model(arch, seed=run), patches, train_config)
        descended += trace[-1] < trace[0]
    assert descended >= 19
