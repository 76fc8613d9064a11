"""Moment statistics and kernel-density helpers shared by several modules."""

from __future__ import annotations

import numpy as np
from scipy.signal import find_peaks
from scipy.stats import gaussian_kde

GRID_POINTS = 512
# Peaks whose topographic prominence is below this fraction of the global
# density maximum are treated as noise when counting modes.
MODE_PROMINENCE = 0.02


def skewness(x) -> float:
    """Moment skewness ``m3 / m2**1.5`` (biased estimator)."""
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    m2 = np.mean(d * d)
    if m2 == 0:
        return 0.0
    return float(np.mean(d**3) / m2**1.5)


def kurtosis(x) -> float:
    """Pearson (non-excess) kurtosis ``m4 / m2**2``."""
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    m2 = np.mean(d * d)
    if m2 == 0:
        return 0.0
    return float(np.mean(d**4) / m2**2)


def bimodality_coefficient(x) -> float:
    k = kurtosis(x)
    return (skewness(x) ** 2 + 1.0) / k if k > 0 else 0.0


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float)
    return float((len(x) * 3.0 / 4.0) ** (-1.0 / 5.0) * np.std(x, ddof=1))


def kde_curve(x, bandwidth=None, grid=None, points: int = GRID_POINTS):
    """Gaussian KDE of ``x`` on ``points`` equally spaced values spanning the data.

    ``bandwidth`` is an absolute kernel standard deviation; ``None`` means
    Silverman's rule.
    """
    x = np.asarray(x, dtype=float)
    if grid is None:
        grid = np.linspace(x.min(), x.max(), points)
    sd = np.std(x, ddof=1)
    if len(x) < 2 or sd == 0:
        dens = np.zeros_like(grid)
        dens[np.argmin(np.abs(grid - x[0]))] = 1.0
        return grid, dens
    if bandwidth is None:
        kde = gaussian_kde(x, bw_method="silverman")
    else:
        kde = gaussian_kde(x, bw_method=bandwidth / sd)
    return grid, kde(grid)


def density_peaks(density, min_prominence: float = 0.0):
    """Indices of interior local maxima and their prominences (absolute)."""
    peaks, props = find_peaks(density, prominence=0)
    prom = props["prominences"]
    # a maximum sitting on a grid edge is a peak too
    if len(density) > 1 and density[0] > density[1]:
        peaks = np.r_[0, peaks]
        prom = np.r_[density[0] - density[np.argmin(density)], prom]
    if len(density) > 1 and density[-1] > density[-2]:
        peaks = np.r_[peaks, len(density) - 1]
        prom = np.r_[prom, density[-1] - density[np.argmin(density)]]
    keep = prom >= min_prominence * density.max() if len(prom) else np.zeros(0, bool)
    return peaks[keep], prom[keep]


def count_modes(x, bandwidth=None, min_prominence: float = MODE_PROMINENCE) -> int:
    """Number of modes of the Silverman-bandwidth KDE on a 512-point grid."""
    x = np.asarray(x, dtype=float)
    if np.ptp(x) == 0:
        return 1
    _, dens = kde_curve(x, bandwidth)
    peaks, _ = density_peaks(dens, min_prominence)
    return max(1, len(peaks))
