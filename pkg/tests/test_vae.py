import numpy as np
import pytest
from scipy import stats as sps

from gradcheck import tensor_errors
from synthgen.dataset import Binary, ColumnSchema
from synthgen.errors import SchemaError
from synthgen.pretransform import PipelineConfig, fit_pipeline
from synthgen.vae import (
    VaeConfig, VaeModel, elbo_loss, embed, encode, decode, generate_from_latent,
    generate_prior, reparameterize, train,
)

FEATURES = (ColumnSchema("a"), ColumnSchema("b"), ColumnSchema("c", Binary), ColumnSchema("d", Binary))


def _batch(seed=0, n=6):
    rng = np.random.default_rng(seed)
    x = np.column_stack([rng.random((n, 2)), rng.integers(0, 2, (n, 2))]).astype(float)
    return x, rng.standard_normal((n, 2))


def _small(fusion="early", seed=3):
    return VaeModel(FEATURES, VaeConfig(fusion=fusion, encoder_hidden=(5, 4), decoder_hidden=(4, 3), seed=seed))


@pytest.mark.parametrize("fusion", ["early", "late"])
def test_loss_gradients(fusion):
    model = _small(fusion)
    x, noise = _batch()
    err = tensor_errors(model.parameters(), lambda: model.loss_graph(x, noise)[0])
    assert max(err.values()) < 1e-6


def test_late_fusion_builds_two_trunks():
    assert len(_small("late").trunks) == 2
    assert len(_small("early").trunks) == 1
    only_cont = VaeModel(FEATURES[:2], VaeConfig(fusion="late"))
    assert len(only_cont.trunks) == 1 and only_cont.pi_d is None


def test_loss_matches_scipy_densities():
    model = _small()
    x, noise = _batch(1)
    mu_e, sigma_e = encode(model, x)
    z = mu_e + sigma_e * noise
    mu_d, sigma_d, pi = decode(model, z)
    gauss = -sps.norm.logpdf(x[:, :2], mu_d, sigma_d).sum(axis=1)
    bern = -sps.bernoulli.logpmf(x[:, 2:], pi).sum(axis=1)
    # KL(N(mu, s^2) || N(0, 1)) in closed form
    kl = (0.5 * (mu_e**2 + sigma_e**2 - 1) - np.log(sigma_e)).sum(axis=1)
    parts = elbo_loss(model, x, noise)
    assert parts.reconstruction_continuous == pytest.approx(gauss.mean(), rel=1e-10)
    assert parts.reconstruction_binary == pytest.approx(bern.mean(), rel=1e-8)
    assert parts.kl == pytest.approx(kl.mean(), rel=1e-10)
    assert parts.total == pytest.approx(gauss.mean() + bern.mean() + kl.mean(), rel=1e-10)


def test_positive_scales():
    model = _small()
    x, _ = _batch(2, 50)
    _, sigma = encode(model, x)
    assert np.all(sigma >= model.config.sigma_floor)
    _, sd, pi = decode(model, np.random.default_rng(0).normal(size=(50, 2)) * 10)
    assert np.all(sd >= model.config.sigma_floor)
    assert np.all((pi >= 0) & (pi <= 1))


def test_reparameterize():
    mu, sd, eps = np.array([[1.0, 2.0]]), np.array([[0.5, 2.0]]), np.array([[2.0, -1.0]])
    assert np.array_equal(reparameterize(mu, sd, eps), [[2.0, 0.0]])
    with pytest.raises(ValueError):
        reparameterize(mu, sd, np.zeros((2, 2)))


def test_width_checked():
    model = _small()
    with pytest.raises(SchemaError):
        encode(model, np.zeros((3, 5)))


def test_config_json():
    cfg = VaeConfig(fusion="late", encoder_hidden=[8, 4])
    assert VaeConfig.from_json(cfg.to_json()) == cfg
    assert VaeConfig.from_json({"version": 1, "epochs": 3}).epochs == 3
    with pytest.raises(ValueError):
        VaeConfig.from_json({"epoch": 3})
    with pytest.raises(ValueError):
        VaeConfig(fusion="middle")


@pytest.fixture(scope="module")
def trained(bench_small):
    pipe = fit_pipeline(bench_small, PipelineConfig())
    model = train(bench_small, pipe, VaeConfig(epochs=15, seed=2))
    return bench_small, pipe, model


def test_training_reduces_loss_and_is_seeded(trained):
    data, pipe, model = trained
    curve = [b.total for b in model.training_curve]
    assert len(curve) == 15
    assert min(curve[-5:]) < curve[0]
    again = train(data, pipe, VaeConfig(epochs=15, seed=2))
    assert all(np.array_equal(a, b) for a, b in zip(model.state().values(), again.state().values()))


def test_training_uses_features_only(trained):
    data, _, model = trained
    assert "E" not in model.feature_names and "y" not in model.feature_names
    assert model.feature_names == data.features().names


def test_generation(trained):
    data, pipe, model = trained
    s1 = generate_prior(model, pipe, 300, seed=4)
    s2 = generate_prior(model, pipe, 300, seed=4)
    assert s1.names == data.features().names
    assert np.array_equal(s1.values, s2.values)
    for name in s1.names_where(kind=Binary):
        assert set(np.unique(s1.column(name))) <= {0.0, 1.0}
    z = np.zeros((10, 2))
    assert generate_from_latent(model, pipe, z, 1).n == 10
    assert embed(model, data).shape == (data.n, 2)


def test_mean_output_is_deterministic_in_continuous_columns(trained):
    data, pipe, model = trained
    model.config = VaeConfig(epochs=15, seed=2, mean_output=True)
    try:
        a = generate_from_latent(model, pipe, np.zeros((3, 2)), 1)
        b = generate_from_latent(model, pipe, np.zeros((3, 2)), 2)
        cont = a.names_where(kind="continuous")
        assert np.array_equal(a.select(cont).values, b.select(cont).values)
    finally:
        model.config = VaeConfig(epochs=15, seed=2)


def test_save_load_round_trip(tmp_path, trained):
    data, pipe, model = trained
    path = tmp_path / "m.bin"
    model.save(path)
    back = VaeModel.load(path)
    assert back.pipeline == pipe
    assert back.config == model.config
    assert len(back.training_curve) == len(model.training_curve)
    assert np.array_equal(generate_prior(back, None, 50, 9).values, generate_prior(model, pipe, 50, 9).values)
    (tmp_path / "junk.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        VaeModel.load(tmp_path / "junk.bin")
