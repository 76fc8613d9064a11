import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from synthgen import stats


def test_moments_match_scipy():
    x = np.random.default_rng(0).gamma(2.0, size=3000)
    assert stats.skewness(x) == pytest.approx(sps.skew(x), rel=1e-12)
    assert stats.kurtosis(x) == pytest.approx(sps.kurtosis(x, fisher=False), rel=1e-12)


def test_constant_moments_are_zero():
    assert stats.skewness(np.ones(5)) == 0.0
    assert stats.kurtosis(np.ones(5)) == 0.0


def test_silverman_matches_scipy_factor():
    x = np.random.default_rng(1).normal(size=500)
    # scipy's factor multiplies the sample sd
    factor = (500 * 3 / 4) ** (-1 / 5)
    assert stats.silverman_bandwidth(x) == pytest.approx(factor * x.std(ddof=1))


@pytest.mark.parametrize("sep,modes", [(0.0, 1), (1.0, 1), (6.0, 2)])
def test_mode_count(sep, modes):
    rng = np.random.default_rng(2)
    x = np.r_[rng.normal(0, 1, 1500), rng.normal(sep, 1, 1500)]
    assert stats.count_modes(x) == modes


def test_three_modes():
    rng = np.random.default_rng(3)
    x = np.r_[rng.normal(0, 1, 1000), rng.normal(8, 1, 1000), rng.normal(16, 1, 1000)]
    assert stats.count_modes(x) == 3


def test_edge_peak_is_counted():
    dens = np.array([3.0, 2.0, 1.0, 2.0, 1.0])
    peaks, prom = stats.density_peaks(dens)
    assert list(peaks) == [0, 3]


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 100), st.floats(-100, 100))
def test_mode_count_is_affine_invariant(scale, shift):
    x = np.random.default_rng(4).normal(size=400)
    x = np.r_[x, x + 5]
    assert stats.count_modes(x * scale + shift) == stats.count_modes(x)
