"""Propensity-weighted grid over a 2-D latent space and rejection sampling from the prior.

Cells are half-open squares ``[lo, lo + d)``; the largest coordinate along
each axis is clamped into the last cell so every embedded point has a home.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import norm

from synthgen.errors import DataError, SamplingError

Common = "common"
GroupSpecific = "group-specific"
SCHEMES = (Common, GroupSpecific)

DEFAULT_CELL_SIZE = 0.25
PROPOSAL_BATCH = 4096
MIN_ACCEPTANCE = 1e-4
ACCEPTANCE_WINDOW = 1_000_000


@dataclass(frozen=True, eq=False)
class LatentGrid:
    cell_size: float
    origin: tuple  # (min z1, min z2)
    dims: tuple  # (N1, N2)
    cell_mean: np.ndarray  # N1 x N2, NaN where the cell is empty
    cell_count: np.ndarray  # N1 x N2 ints

    @property
    def n_cells(self) -> int:
        return self.dims[0] * self.dims[1]

    def edges(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.cell_size * np.arange(self.dims[axis] + 1, dtype=float)

    def locate(self, z, clamp_top: bool = False):
        """Cell indices ``(i, j)`` and an inside-the-grid mask for points ``z``.

        Points on or beyond the upper boundary count as outside unless
        ``clamp_top`` is set, which is how the embedded maximum is assigned.
        """
        z = np.asarray(z, dtype=float)
        idx, inside = [], np.ones(len(z), dtype=bool)
        for axis in (0, 1):
            x = z[:, axis]
            k = np.floor((x - self.origin[axis]) / self.cell_size).astype(np.int64)
            # the division can land one cell off near a boundary; settle
            # membership against the same edges the heatmap file reports
            lo = self.origin[axis] + self.cell_size * k
            k -= x < lo
            k += x >= self.origin[axis] + self.cell_size * (k + 1)
            top = self.dims[axis]
            if clamp_top:
                k = np.minimum(k, top - 1)
            inside &= (k >= 0) & (k < top)
            idx.append(np.clip(k, 0, top - 1))
        return idx[0], idx[1], inside


@dataclass(frozen=True, eq=False)
class WeightMap:
    scheme: str
    delta: float
    raw: np.ndarray
    normalized: np.ndarray
    target_group: int | None = None


def _axis_cells(lo: float, hi: float, d: float) -> int:
    return max(1, math.ceil((hi - lo) / d))


def build_grid(latent, propensities, d: float = DEFAULT_CELL_SIZE) -> LatentGrid:
    """Grid of side ``d`` over the bounding box of ``latent`` with per-cell mean propensity."""
    z = np.asarray(latent, dtype=float)
    ps = np.asarray(propensities, dtype=float)
    if z.ndim != 2 or z.shape[1] != 2:
        raise DataError(f"latent grid needs 2-D coordinates, got shape {z.shape}")
    if len(ps) != len(z):
        raise DataError("one propensity per latent point required")
    if len(z) == 0:
        raise DataError("no latent points")
    if not d > 0:
        raise ValueError("cell size must be positive")
    lo, hi = z.min(axis=0), z.max(axis=0)
    dims = (_axis_cells(lo[0], hi[0], d), _axis_cells(lo[1], hi[1], d))
    shell = LatentGrid(float(d), (float(lo[0]), float(lo[1])), dims, None, None)
    i, j, _ = shell.locate(z, clamp_top=True)
    flat = i * dims[1] + j
    count = np.bincount(flat, minlength=dims[0] * dims[1])
    total = np.bincount(flat, weights=ps, minlength=dims[0] * dims[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return LatentGrid(float(d), shell.origin, dims, mean.reshape(dims), count.reshape(dims))


def raw_weight(p: float, scheme: str, delta: float, target_group: int | None = None) -> float:
    """Un-normalized weight of a cell with mean propensity ``p`` (NaN = empty cell)."""
    if not np.isfinite(p):
        return 0.0
    if scheme == Common:
        if abs(p - 0.5) > delta:
            return 0.0
        if p > 0.5:
            return 1.0 / p
        if p < 0.5:
            return 1.0 / (1.0 - p)
        return 2.0
    if scheme == GroupSpecific:
        if target_group == 0:
            return 0.0 if p > 0.5 + delta else 1.0 / p
        if target_group == 1:
            return 0.0 if p < 0.5 - delta else 1.0 / (1.0 - p)
        raise ValueError("group-specific weights need target_group 0 or 1")
    raise ValueError(f"unknown weighting scheme {scheme!r}")


def compute_weights(grid: LatentGrid, scheme: str = Common, delta: float = 0.1,
                    target_group: int | None = None) -> WeightMap:
    if delta < 0:
        raise ValueError("delta must be non-negative")
    raw = np.array([raw_weight(p, scheme, delta, target_group) for p in grid.cell_mean.ravel()])
    raw = raw.reshape(grid.dims)
    total = raw.sum()
    if total <= 0:
        raise SamplingError(f"no admissible cell under scheme {scheme!r} with delta {delta}; try a larger delta")
    return WeightMap(scheme, float(delta), raw, raw / total, target_group)


def prior_cell_mass(grid: LatentGrid) -> np.ndarray:
    """Standard-normal probability of every cell."""
    px = np.diff(norm.cdf(grid.edges(0)))
    py = np.diff(norm.cdf(grid.edges(1)))
    return np.outer(px, py)


def expected_cell_frequencies(grid: LatentGrid, weights: WeightMap) -> np.ndarray:
    """Limit distribution of accepted draws over cells: ``w̄ · prior mass``, normalized."""
    f = weights.normalized * prior_cell_mass(grid)
    return f / f.sum()


def weighted_prior_sample(grid: LatentGrid, weights: WeightMap, n: int, seed=None,
                          return_stats: bool = False):
    """Rejection-sample ``n`` latent points from N(0, I) restricted and reweighted by the grid.

    A proposal is kept when it lands inside the grid and a Bernoulli flag with
    probability ``w̄ / max(w̄)`` of its cell comes up 1.
    """
    if weights.normalized.shape != grid.dims:
        raise DataError("weight map does not match the grid")
    accept_p = weights.normalized / weights.normalized.max()
    rng = np.random.default_rng(seed)
    chunks, got, proposed = [], 0, 0
    while got < n:
        z = rng.standard_normal((PROPOSAL_BATCH, 2))
        flags = rng.random(PROPOSAL_BATCH)
        i, j, inside = grid.locate(z)
        keep = inside & (flags < accept_p[i, j])
        keep &= accept_p[i, j] > 0
        kept = z[keep][: n - got]
        chunks.append(kept)
        got += len(kept)
        proposed += PROPOSAL_BATCH
        if proposed >= ACCEPTANCE_WINDOW and got / proposed < MIN_ACCEPTANCE:
            raise SamplingError(
                f"acceptance rate {got / proposed:.2e} after {proposed} proposals; "
                "weights are incompatible with the prior mass"
            )
    draws = np.concatenate(chunks) if chunks else np.zeros((0, 2))
    if return_stats:
        return draws, {"proposed": proposed, "accepted": got}
    return draws


# -- heatmap file ---------------------------------------------------------------

HEATMAP_COLUMNS = ["record", "i", "j", "cell_size", "x_lo", "x_hi", "y_lo", "y_hi", "count",
                   "p_bar", "w_raw", "w_bar", "z1", "z2", "group"]


def heatmap_frame(grid: LatentGrid, weights: WeightMap | None = None, latent=None,
                  group_labels=None) -> pd.DataFrame:
    rows = []
    xs, ys = grid.edges(0), grid.edges(1)
    for i in range(grid.dims[0]):
        for j in range(grid.dims[1]):
            p = grid.cell_mean[i, j]
            rows.append({
                "record": "cell", "i": i, "j": j, "cell_size": grid.cell_size,
                "x_lo": xs[i], "x_hi": xs[i + 1], "y_lo": ys[j], "y_hi": ys[j + 1],
                "count": int(grid.cell_count[i, j]),
                "p_bar": p if np.isfinite(p) else None,
                "w_raw": weights.raw[i, j] if weights is not None else None,
                "w_bar": weights.normalized[i, j] if weights is not None else None,
            })
    if latent is not None:
        latent = np.asarray(latent, dtype=float)
        labels = group_labels if group_labels is not None else [None] * len(latent)
        for (z1, z2), g in zip(latent, labels):
            rows.append({"record": "point", "z1": z1, "z2": z2, "group": None if g is None else int(g)})
    frame = pd.DataFrame(rows, columns=HEATMAP_COLUMNS)
    for c in ("i", "j", "count", "group"):
        frame[c] = frame[c].astype("Int64")
    return frame


def export_heatmap(path, grid: LatentGrid, weights: WeightMap | None = None, latent=None,
                   group_labels=None) -> int:
    """Write cell and point records as CSV; returns the record count."""
    frame = heatmap_frame(grid, weights, latent, group_labels)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return len(frame)


def read_heatmap(path):
    """Parse a heatmap file back into ``(grid, weights or None, points frame)``."""
    frame = pd.read_csv(path, float_precision="round_trip")
    cells = frame[frame["record"] == "cell"]
    if cells.empty:
        raise DataError(f"{path}: no cell records")
    dims = (int(cells["i"].max()) + 1, int(cells["j"].max()) + 1)
    if len(cells) != dims[0] * dims[1]:
        raise DataError(f"{path}: incomplete grid")
    ii, jj = cells["i"].astype(int).to_numpy(), cells["j"].astype(int).to_numpy()
    mean = np.full(dims, np.nan)
    count = np.zeros(dims, dtype=np.int64)
    mean[ii, jj] = cells["p_bar"].to_numpy(dtype=float)
    count[ii, jj] = cells["count"].astype(int).to_numpy()
    first = cells[(cells["i"] == 0) & (cells["j"] == 0)].iloc[0]
    grid = LatentGrid(float(first["cell_size"]), (float(first["x_lo"]), float(first["y_lo"])), dims, mean, count)
    weights = None
    if cells["w_bar"].notna().all():
        raw = np.zeros(dims)
        norm_w = np.zeros(dims)
        raw[ii, jj] = cells["w_raw"].to_numpy(dtype=float)
        norm_w[ii, jj] = cells["w_bar"].to_numpy(dtype=float)
        weights = WeightMap("file", float("nan"), raw, norm_w)
    points = frame[frame["record"] == "point"][["z1", "z2", "group"]].reset_index(drop=True)
    return grid, weights, points
