"""Invertible per-column pre-transformations.

Two parametric maps are fitted on the raw (unscaled) values of each
continuous column:

* Box-Cox, ``((x + l2)**l1 - 1) / l1`` (log at ``l1 == 0``), removes skew;
  ``l1`` maximizes the profile log-likelihood by gradient descent.
* sgn-power, ``sgn(u) |u|**rho`` with ``u = (x + alpha) / beta_sq`` and
  ``rho = 1 + pow**2``, pulls the two peaks of a bimodal column together;
  parameters minimize the 1-sigma criterion of the standardized output,
  starting from a kernel-density valley estimate.

Min-max scaling is always the last forward step.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from synthgen import stats
from synthgen.dataset import (
    Continuous,
    Dataset,
    Feature,
    ScalingParams,
    minmax_unscale,
)
from synthgen.errors import DataError, FitError, SchemaError

logger = logging.getLogger(__name__)

LOG_BRANCH = 1e-8
SERIES_BRANCH = 1e-2


@dataclass(frozen=True)
class BoxCoxParams:
    lambda1: float
    lambda2: float = 0.0
    epsilon: float = 1e-6


@dataclass(frozen=True)
class PowerParams:
    alpha: float = 0.0
    beta_sq: float = 1.0
    pow: float = 0.0

    def __post_init__(self):
        if not self.beta_sq > 0:
            raise ValueError("beta_sq must be strictly positive")

    @property
    def rho(self) -> float:
        return 1.0 + self.pow**2


@dataclass(frozen=True)
class OptimizerConfig:
    """Full-batch gradient descent with a fixed step and best-seen tracking.

    After the main pass, ``refine_passes`` further passes restart from the
    best point with the step divided by 10 each time.
    """

    step_size: float = 5e-2
    iterations: int = 500
    refine_passes: int = 2
    refine_iterations: int = 500


def gradient_descent(fun: Callable, theta0, config: OptimizerConfig = OptimizerConfig(),
                     project: Callable | None = None):
    """Minimize ``fun(theta) -> (value, grad)``; returns ``(best_theta, best_value, trace)``."""
    theta = np.array(theta0, dtype=float)
    best_theta, best_val = theta.copy(), math.inf
    trace = []
    schedule = [(config.step_size, config.iterations)]
    schedule += [
        (config.step_size / 10 ** (k + 1), config.refine_iterations)
        for k in range(config.refine_passes)
    ]
    for step, iters in schedule:
        theta = best_theta.copy()
        for _ in range(iters + 1):
            val, grad = fun(theta)
            if not math.isfinite(val) or not np.all(np.isfinite(grad)):
                if best_val == math.inf:
                    raise FitError("objective is not finite at the initial point")
                break
            trace.append(val)
            if val < best_val:
                best_val, best_theta = val, theta.copy()
            theta = theta - step * grad
            if project is not None:
                theta = project(theta)
    return best_theta, best_val, trace


# -- Box-Cox ---------------------------------------------------------------


def _boxcox_values(logs, lam):
    """Box-Cox of ``exp(logs)`` and its derivative with respect to ``lam``."""
    t = lam * logs
    if abs(lam) < LOG_BRANCH:
        return logs.copy(), 0.5 * logs**2
    y = np.expm1(t) / lam
    dy = (t * np.exp(t) - np.expm1(t)) / lam**2
    small = np.abs(t) < SERIES_BRANCH
    if np.any(small):
        ls, ts = logs[small], t[small]
        dy[small] = ls**2 * (0.5 + ts / 3.0 + ts**2 / 8.0 + ts**3 / 30.0)
    return y, dy


def boxcox_forward(x, params: BoxCoxParams):
    x = np.asarray(x, dtype=float)
    shifted = x + params.lambda2
    if np.any(shifted <= 0):
        raise DataError("Box-Cox input must satisfy x + lambda2 > 0")
    y, _ = _boxcox_values(np.log(shifted), params.lambda1)
    return y


def boxcox_inverse(y, params: BoxCoxParams):
    y = np.asarray(y, dtype=float)
    lam = params.lambda1
    if abs(lam) < LOG_BRANCH:
        return np.exp(y) - params.lambda2
    base = lam * y + 1.0
    if np.any(base <= 0):
        raise DataError("value outside the Box-Cox image (lambda1 * y + 1 <= 0)")
    return np.exp(np.log1p(lam * y) / lam) - params.lambda2


def boxcox_objective(lam: float, x, lambda2: float = 0.0, epsilon: float = 1e-6):
    """Negative profile log-likelihood per observation and its derivative in ``lam``.

    ``0.5 * log(var + eps) - (lam - 1) * mean(log(x + l2 + eps))``, with
    ``var`` the (ddof=0) variance of the transformed values.
    """
    x = np.asarray(x, dtype=float)
    y, dy = _boxcox_values(np.log(x + lambda2), lam)
    jac = np.mean(np.log(x + lambda2 + epsilon))
    centered = y - y.mean()
    var = np.mean(centered**2)
    dvar = 2.0 * np.mean(centered * dy)
    value = 0.5 * math.log(var + epsilon) - (lam - 1.0) * jac
    grad = 0.5 * dvar / (var + epsilon) - jac
    return float(value), float(grad)


def fit_boxcox(x, config: OptimizerConfig = OptimizerConfig(), epsilon: float = 1e-6) -> BoxCoxParams:
    x = np.asarray(x, dtype=float)
    if len(x) < 10:
        raise DataError("Box-Cox fit needs at least 10 values")
    lambda2 = max(0.0, epsilon - float(x.min()))
    # curvature in lambda grows with the spread of log(x); descending in
    # theta = lambda * sd(log x) makes one step size fit every column
    spread = float(np.std(np.log(x + lambda2)))
    if not spread > 0:
        raise DataError("Box-Cox fit on a constant column")

    def fun(theta):
        v, g = boxcox_objective(theta[0] / spread, x, lambda2, epsilon)
        return v, np.array([g / spread])

    theta, _, _ = gradient_descent(fun, [spread], config)
    return BoxCoxParams(float(theta[0] / spread), lambda2, epsilon)


# -- sgn-power --------------------------------------------------------------


def power_forward(x, params: PowerParams):
    u = (np.asarray(x, dtype=float) + params.alpha) / params.beta_sq
    return np.sign(u) * np.abs(u) ** params.rho


def power_inverse(y, params: PowerParams):
    y = np.asarray(y, dtype=float)
    return params.beta_sq * np.sign(y) * np.abs(y) ** (1.0 / params.rho) - params.alpha


def _quantile_weights(n: int, tau: float):
    h = (n - 1) * tau
    lo = int(math.floor(h))
    hi = min(lo + 1, n - 1)
    return lo, hi, h - lo


def one_sigma_criterion(x) -> float:
    """``|Q84 - Q50 - sd| + |Q50 - Q16 - sd|`` with linearly interpolated quantiles."""
    x = np.asarray(x, dtype=float)
    if len(x) < 10:
        raise DataError("1-sigma criterion needs at least 10 values")
    q16, q50, q84 = np.quantile(x, [0.16, 0.5, 0.84])
    sd = np.std(x, ddof=1)
    return float(abs(q84 - q50 - sd) + abs(q50 - q16 - sd))


def relative_sigma_objective(theta, z, order):
    """1-sigma criterion of the standardized sgn-power output and its gradient.

    ``theta = (a, b, p)`` acts on ``z`` as ``u = (z + a) / b``,
    ``y = sgn(u) |u|**(1 + p**2)``. ``order`` sorts ``z``; since the map is
    increasing it also sorts ``y``, so the interpolated quantiles are smooth
    in ``theta`` away from the kinks of the absolute values.
    """
    a, b, p = theta
    rho = 1.0 + p * p
    u = (z + a) / b
    au = np.abs(u)
    y = np.sign(u) * au**rho
    nz = au > 0
    dydu = np.zeros_like(u)
    dydu[nz] = rho * au[nz] ** (rho - 1.0)
    if rho == 1.0:
        dydu[~nz] = 1.0
    logu = np.zeros_like(u)
    logu[nz] = np.log(au[nz])
    jac = np.stack([dydu / b, -dydu * u / b, y * logu * 2.0 * p], axis=1)

    n = len(z)
    ys, js = y[order], jac[order]

    def quantile(tau):
        lo, hi, f = _quantile_weights(n, tau)
        return ys[lo] + f * (ys[hi] - ys[lo]), js[lo] + f * (js[hi] - js[lo])

    q16, g16 = quantile(0.16)
    q50, g50 = quantile(0.50)
    q84, g84 = quantile(0.84)
    centered = y - y.mean()
    sd = math.sqrt(float(centered @ centered) / (n - 1))
    if sd == 0:
        return math.inf, np.zeros(3)
    gsd = centered @ jac / ((n - 1) * sd)
    upper = q84 - q50 - sd
    lower = q50 - q16 - sd
    crit = abs(upper) + abs(lower)
    gcrit = np.sign(upper) * (g84 - g50 - gsd) + np.sign(lower) * (g50 - g16 - gsd)
    return crit / sd, gcrit / sd - crit * gsd / sd**2


def init_valley_kde(x, start: float = 0.05, growth: float = 1.2, max_peaks: int = 5,
                    points: int = stats.GRID_POINTS, max_rounds: int = 200) -> float:
    """Valley between the two dominant peaks of a coarsening Gaussian KDE.

    The bandwidth starts at ``start * sd`` and grows by ``growth`` until at
    most ``max_peaks`` local maxima remain. The two peaks with the largest
    prominence are kept and the lowest density point between them is
    returned. A unimodal final estimate returns the sample median.
    """
    x = np.asarray(x, dtype=float)
    if len(x) < 10:
        raise DataError("valley search needs at least 10 values")
    sd = float(np.std(x, ddof=1))
    if sd == 0:
        return float(np.median(x))
    grid = np.linspace(x.min(), x.max(), points)
    h = start * sd
    for _ in range(max_rounds):
        _, dens = stats.kde_curve(x, h, grid)
        peaks, prom = stats.density_peaks(dens)
        if len(peaks) <= max_peaks:
            break
        h *= growth
    if len(peaks) < 2:
        return float(np.median(x))
    top = np.argsort(-prom, kind="stable")[:2]
    lo, hi = sorted(peaks[top])
    return float(grid[lo + int(np.argmin(dens[lo : hi + 1]))])


# Gradient of the (a, b, p) objective is 2 p dC/drho, which vanishes at
# p = 0; descent therefore starts just off the identity.
POW_START = 0.1
# Non-identity fits must beat the identity's criterion by this margin.
MIN_IMPROVEMENT = 0.05


def fit_power(x, config: OptimizerConfig = OptimizerConfig(), pow_start: float = POW_START,
              min_improvement: float = MIN_IMPROVEMENT) -> PowerParams:
    """Fit sgn-power parameters that make ``x`` closer to unimodal.

    Optimization runs on the standardized column; the returned shift and
    scale are mapped back to the raw scale.
    """
    x = np.asarray(x, dtype=float)
    if len(x) < 10:
        raise DataError("power fit needs at least 10 values")
    mean, sd = float(np.mean(x)), float(np.std(x, ddof=1))
    if sd == 0:
        raise DataError("power fit on a constant column")
    z = (x - mean) / sd
    order = np.argsort(z, kind="stable")
    valley = (init_valley_kde(x) - mean) / sd

    def fun(theta):
        return relative_sigma_objective(theta, z, order)

    def project(theta):
        theta[1] = max(theta[1], 1e-6)
        return theta

    identity_val = fun(np.array([0.0, 1.0, 0.0]))[0]
    theta, best, _ = gradient_descent(fun, [-valley, 1.0, pow_start], config, project)
    if not math.isfinite(best):
        raise FitError("power fit diverged")
    if best > identity_val - min_improvement:
        return PowerParams(0.0, 1.0, 0.0)
    a, b, p = theta
    return PowerParams(alpha=sd * a - mean, beta_sq=sd * b, pow=abs(float(p)))


# -- pipeline ----------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    enabled: bool = True
    power: bool = True
    boxcox: bool = True
    skew_threshold: float = 0.5
    mode_threshold: int = 2
    epsilon: float = 1e-6
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    @classmethod
    def from_json(cls, raw: dict) -> "PipelineConfig":
        raw = dict(raw)
        opt = raw.pop("optimizer", {})
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown pretransform config keys {sorted(unknown)}")
        return cls(optimizer=OptimizerConfig(**opt), **raw)


def diagnostics(x) -> dict:
    x = np.asarray(x, dtype=float)
    return {
        "skewness": stats.skewness(x),
        "kurtosis": stats.kurtosis(x),
        "bimodality_coefficient": stats.bimodality_coefficient(x),
        "one_sigma": one_sigma_criterion(x) if len(x) >= 10 else float("nan"),
        "modes": stats.count_modes(x),
    }


@dataclass(frozen=True)
class ColumnTransform:
    name: str
    steps: tuple = ()
    before: dict = field(default_factory=dict)
    after: dict = field(default_factory=dict)

    def forward(self, x):
        for step in self.steps:
            if isinstance(step, PowerParams):
                x = power_forward(x, step)
            else:
                x = boxcox_forward(x, step)
        return x

    def inverse(self, y):
        """Undo the steps in reverse order, clamping values outside each image.

        Returns the values and the number of clamped entries.
        """
        clamped = 0
        for step in reversed(self.steps):
            if isinstance(step, PowerParams):
                y = power_inverse(y, step)
            else:
                y, k = _boxcox_inverse_clamped(y, step)
                clamped += k
        return y, clamped


def _boxcox_inverse_clamped(y, step: BoxCoxParams):
    lam = step.lambda1
    if abs(lam) < LOG_BRANCH:
        return boxcox_inverse(y, step), 0
    base = lam * np.asarray(y, dtype=float) + 1.0
    # lam > 0: the image boundary maps to x + l2 = 0; lam < 0: the boundary
    # is at infinity, so stop at base = epsilon
    floor = 0.0 if lam > 0 else step.epsilon
    bad = base <= floor
    base = np.where(bad, floor, base)
    with np.errstate(divide="ignore"):
        x = np.exp(np.log(base) / lam) - step.lambda2
    return x, int(bad.sum())


@dataclass(frozen=True)
class TransformPipeline:
    columns: tuple  # ColumnTransform per continuous feature column, schema order
    scaling: ScalingParams

    @property
    def names(self):
        return [c.name for c in self.columns]

    def column(self, name) -> ColumnTransform:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"pipeline has no column {name!r}")

    def to_json(self) -> dict:
        cols = []
        for c in self.columns:
            steps = []
            for s in c.steps:
                if isinstance(s, PowerParams):
                    steps.append({"type": "power", **asdict(s)})
                else:
                    steps.append({"type": "boxcox", **asdict(s)})
            cols.append({"name": c.name, "steps": steps, "before": c.before, "after": c.after})
        return {"version": 1, "columns": cols, "scaling": self.scaling.to_json()}

    @classmethod
    def from_json(cls, raw: dict) -> "TransformPipeline":
        cols = []
        for c in raw["columns"]:
            steps = []
            for s in c["steps"]:
                s = dict(s)
                kind = s.pop("type")
                steps.append(PowerParams(**s) if kind == "power" else BoxCoxParams(**s))
            cols.append(ColumnTransform(c["name"], tuple(steps), c.get("before", {}), c.get("after", {})))
        return cls(tuple(cols), ScalingParams.from_json(raw["scaling"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "TransformPipeline":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]


def fit_column(name: str, x, config: PipelineConfig) -> ColumnTransform:
    before = diagnostics(x)
    steps = []
    if config.enabled:
        current = np.asarray(x, dtype=float)
        try:
            if config.power and before["modes"] >= config.mode_threshold:
                params = fit_power(current, config.optimizer)
                if params.pow != 0.0:
                    steps.append(params)
                    current = power_forward(current, params)
            if config.boxcox and abs(stats.skewness(current)) > config.skew_threshold:
                params = fit_boxcox(current, config.optimizer, config.epsilon)
                steps.append(params)
                current = boxcox_forward(current, params)
        except (FitError, DataError) as exc:
            raise type(exc)(f"column {name!r}: {exc}") from exc
        after = diagnostics(current)
    else:
        after = dict(before)
    return ColumnTransform(name, tuple(steps), before, after)


def fit_pipeline(data: Dataset, config: PipelineConfig = PipelineConfig()) -> TransformPipeline:
    """Choose and fit transforms for each continuous feature column, then min-max bounds."""
    names = data.names_where(kind=Continuous, role=Feature)
    columns = tuple(fit_column(name, data.column(name), config) for name in names)
    bounds = {}
    for ct in columns:
        y = ct.forward(data.column(ct.name))
        lo, hi = float(y.min()), float(y.max())
        if not hi > lo:
            raise DataError(f"column {ct.name!r} is constant")
        bounds[ct.name] = (lo, hi)
    pipe = TransformPipeline(columns, ScalingParams(bounds))
    for ct in columns:
        logger.info("column %s: steps %s", ct.name, [type(s).__name__ for s in ct.steps])
    return pipe


def _check_columns(data: Dataset, pipeline: TransformPipeline):
    for name in pipeline.names:
        if name not in data.names:
            raise SchemaError(f"dataset lacks pipeline column {name!r}")
        if data.kind(name) != Continuous:
            raise SchemaError(f"pipeline column {name!r} is not continuous in the dataset")


def apply_pipeline(data: Dataset, pipeline: TransformPipeline) -> Dataset:
    _check_columns(data, pipeline)
    values = data.values.copy()
    for ct in pipeline.columns:
        j = data.index(ct.name)
        lo, hi = pipeline.scaling.bounds[ct.name]
        values[:, j] = (ct.forward(values[:, j]) - lo) / (hi - lo)
    return data.with_values(values)


def invert_pipeline(data: Dataset, pipeline: TransformPipeline) -> Dataset:
    """Unscale and undo the steps; clamp counts land in ``provenance["clamped"]``."""
    _check_columns(data, pipeline)
    unscaled = minmax_unscale(data, pipeline.scaling)
    values = unscaled.values.copy()
    clamped = {}
    for ct in pipeline.columns:
        j = data.index(ct.name)
        values[:, j], k = ct.inverse(values[:, j])
        if k:
            clamped[ct.name] = k
    out = data.with_values(values)
    out.provenance["clamped"] = clamped
    return out
