import numpy as np
import pytest
from scipy import stats as sps

from synthgen import stats
from synthgen.benchmark import (
    CONFOUNDER, SimConfig, confounder_proxies, confounder_scenario, correlation_matrix,
    population_skewness, simulate, skew_scale, skewed_column,
)
from synthgen.dataset import Binary, Excluded, GroupLabel
from synthgen.errors import DataError

# scale solving skewness(max(1 + 0.2 s z, 0)^5) = target, from a 2e6-point
# trapezoid integration on [z0, 12] plus the clipped mass, root by brentq
TRAPZ_SCALE = {1.0: 0.4106434173313783, 2.0: 0.7965602366687929, 4.0: 1.5153623984731341}


@pytest.mark.parametrize("target", sorted(TRAPZ_SCALE))
def test_skew_scale_matches_trapezoid_oracle(target):
    assert skew_scale(target) == pytest.approx(TRAPZ_SCALE[target], abs=1e-6)
    assert population_skewness(skew_scale(target)) == pytest.approx(target, abs=1e-8)


def test_skewed_column_median_skewness():
    # sample skewness of heavy-tailed columns is biased low; the median over
    # repeated draws still lands near the population value for skew 1
    z = np.random.default_rng(0).standard_normal((200, 2500))
    sk = [stats.skewness(skewed_column(row, 1.0)) for row in z]
    assert np.median(sk) == pytest.approx(1.0, abs=0.05)
    assert np.all(skewed_column(z[0], 4.0) >= 0)


def test_default_layout():
    d = simulate(SimConfig(n=300, seed=1))
    names = d.names
    assert names[:12] == [f"bin{i:02d}" for i in range(1, 13)]
    assert names[12:20] == [f"skew{i:02d}" for i in range(1, 9)]
    assert names[20:] == ["bimodal", "E", "y"]
    assert d.group_label == "E"
    assert d.schema[-1].role == Excluded
    assert d.schema[-2].role == GroupLabel
    assert d.names_where(kind=Binary)[-2:] == ["E", "y"]


def test_seeded_and_distinct():
    a = simulate(SimConfig(n=200, seed=3))
    b = simulate(SimConfig(n=200, seed=3))
    c = simulate(SimConfig(n=200, seed=4))
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


@pytest.fixture(scope="module")
def big():
    return simulate(SimConfig(n=20000, seed=7))


def test_prevalences(big):
    assert big.column("E").mean() == pytest.approx(0.35, abs=0.015)
    assert big.column("y").mean() == pytest.approx(0.3, abs=0.015)
    for i, prev in enumerate([0.5, 0.3, 0.2, 0.4] * 3, start=1):
        assert big.column(f"bin{i:02d}").mean() == pytest.approx(prev, abs=0.015)


def test_rank_correlation_follows_latent_ar1(big):
    # adjacent latent coordinates have correlation 0.5; the rank correlation
    # of monotone transforms of them is (6 / pi) asin(0.25)
    rho = sps.spearmanr(big.column("skew01"), big.column("skew02")).statistic
    assert rho == pytest.approx(6 / np.pi * np.arcsin(0.25), abs=0.02)


def test_bimodal_column(big):
    E = big.column("E") == 1
    x = big.column("bimodal")
    assert x[E].mean() == pytest.approx(4.0, abs=0.05)
    assert x[~E].mean() == pytest.approx(0.0, abs=0.05)
    assert stats.count_modes(x) == 2


def test_exposure_effects_have_expected_signs(big):
    E = big.column("E") == 1
    assert big.column("bin01")[E].mean() > big.column("bin01")[~E].mean()
    assert big.column("bin02")[E].mean() < big.column("bin02")[~E].mean()


def test_group_shift_column():
    cfg = SimConfig(n=5000, seed=2, group_shift={"name": "age", "mean0": 60.0, "mean1": 50.0, "sd": 8.0})
    d = simulate(cfg)
    assert d.names[-4:] == ["bimodal", "age", "E", "y"]
    E = d.column("E") == 1
    assert d.column("age")[E].mean() == pytest.approx(50.0, abs=0.6)
    assert d.column("age")[~E].mean() == pytest.approx(60.0, abs=0.6)


def test_confounder_scenario():
    cfg = SimConfig(n=5000, seed=3)
    d = confounder_scenario(cfg)
    proxies = confounder_proxies(cfg)
    assert not set(proxies) & set(cfg.exposure_effects)
    assert CONFOUNDER in d.names
    X = np.column_stack([np.ones(d.n)] + [d.column(p) for p in proxies])
    x = d.column(CONFOUNDER)
    resid = x - X @ np.linalg.lstsq(X, x, rcond=None)[0]
    r2 = 1 - resid.var() / x.var()
    assert 0.85 < r2 < 0.93


def test_correlation_matrix_checks():
    assert np.allclose(np.diag(correlation_matrix(SimConfig())), 1.0)
    p = 20
    bad = np.eye(p)
    bad[0, 1] = 0.3
    with pytest.raises(DataError, match="symmetric"):
        correlation_matrix(SimConfig(correlation_matrix=bad.tolist()))
    ones = np.ones((p, p))
    ones[0, 1] = ones[1, 0] = -1
    with pytest.raises(DataError, match="positive definite"):
        correlation_matrix(SimConfig(correlation_matrix=ones.tolist()))
    with pytest.raises(DataError, match="20x20"):
        correlation_matrix(SimConfig(correlation_matrix=np.eye(3).tolist()))


def test_config_validation_and_json():
    with pytest.raises(ValueError):
        SimConfig(exposure_prevalence=1.0)
    with pytest.raises(ValueError):
        SimConfig.from_json({"rows": 10})
    cfg = SimConfig(n=10, skew_profile=(2.0,))
    assert SimConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(DataError, match="unknown column"):
        simulate(SimConfig(n=50, exposure_effects={"nope": 1.0}))
