"""Seeded benchmark generator for correlated mixed binary/continuous data.

Rows come from a latent Gaussian with AR(1) correlation. Some latent
coordinates are thresholded into binaries and the others are pushed
through an inverse Box-Cox map calibrated to a target skewness. An
exposure ``E`` is drawn from a logistic model and keys a bimodal column
(N(0,1) for E=0, N(4,1) for E=1). A binary outcome ``y`` depends on
features and E.
"""

from __future__ import annotations

import functools
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.special import expit
from scipy.stats import norm

from synthgen.dataset import Binary, ColumnSchema, Continuous, Dataset, Excluded, GroupLabel
from synthgen.errors import DataError

# inverse Box-Cox exponent of the skewed columns: x = (1 + LAM * s * z)^(1/LAM)
SKEW_LAMBDA = 0.2


@dataclass(frozen=True)
class SimConfig:
    n: int = 2500
    n_binary: int = 12
    n_continuous: int = 9  # the last continuous column is the bimodal one
    skew_profile: tuple = (1.0, 2.0, 4.0)
    binary_prevalence: tuple = (0.5, 0.3, 0.2, 0.4)
    exposure_prevalence: float = 0.35
    outcome_prevalence: float = 0.3
    bimodal_spec: dict = field(default_factory=lambda: {"mean0": 0.0, "mean1": 4.0, "sd": 1.0})
    correlation: float = 0.5  # AR(1) coefficient of the latent Gaussian
    correlation_matrix: list | None = None  # overrides ``correlation`` when given
    exposure_effects: dict = field(default_factory=lambda: {"bin01": 0.8, "bin02": -0.6, "skew01": 0.7, "skew02": 0.5})
    outcome_effects: dict = field(default_factory=lambda: {"bin01": 0.5, "bin03": 0.7, "skew01": -0.4, "skew03": 0.6, "E": 0.8})
    group_shift: dict | None = None  # {"name", "mean0", "mean1", "sd"}: extra E-keyed normal column
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.exposure_prevalence < 1:
            raise ValueError("exposure_prevalence must lie in (0, 1)")
        if not 0 < self.outcome_prevalence < 1:
            raise ValueError("outcome_prevalence must lie in (0, 1)")
        if self.n < 1 or self.n_binary < 0 or self.n_continuous < 1:
            raise ValueError("need n >= 1 and at least the bimodal continuous column")
        object.__setattr__(self, "skew_profile", tuple(self.skew_profile))
        object.__setattr__(self, "binary_prevalence", tuple(self.binary_prevalence))

    @property
    def n_skewed(self) -> int:
        return self.n_continuous - 1

    @classmethod
    def from_json(cls, raw: dict) -> "SimConfig":
        raw = {k: v for k, v in raw.items() if k != "version"}
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown simulation config keys {sorted(unknown)}")
        return cls(**raw)

    def to_json(self) -> dict:
        d = asdict(self)
        d["skew_profile"] = list(self.skew_profile)
        d["binary_prevalence"] = list(self.binary_prevalence)
        return d


def binary_names(cfg: SimConfig):
    return [f"bin{i + 1:02d}" for i in range(cfg.n_binary)]


def skewed_names(cfg: SimConfig):
    return [f"skew{i + 1:02d}" for i in range(cfg.n_skewed)]


def skew_targets(cfg: SimConfig):
    return [cfg.skew_profile[i % len(cfg.skew_profile)] for i in range(cfg.n_skewed)]


def correlation_matrix(cfg: SimConfig) -> np.ndarray:
    p = cfg.n_binary + cfg.n_skewed
    if cfg.correlation_matrix is not None:
        R = np.asarray(cfg.correlation_matrix, dtype=float)
        if R.shape != (p, p):
            raise DataError(f"correlation matrix must be {p}x{p}")
    else:
        idx = np.arange(p)
        R = cfg.correlation ** np.abs(idx[:, None] - idx[None, :])
    if not np.allclose(R, R.T):
        raise DataError("correlation matrix is not symmetric")
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise DataError("correlation matrix is not positive definite") from None
    return R


def _expect(g, s: float, lam: float):
    z0 = -1.0 / (lam * s)
    lo = max(z0, -12.0)
    body = integrate.quad(lambda z: g((1.0 + lam * s * z) ** (1.0 / lam)) * norm.pdf(z), lo, 12.0, limit=200)[0]
    # draws below z0 are clipped to zero
    return body + norm.cdf(z0) * g(0.0)


def population_skewness(s: float, lam: float = SKEW_LAMBDA) -> float:
    """Skewness of ``max(1 + lam*s*z, 0)^(1/lam)`` for z ~ N(0,1), by quadrature."""
    m = _expect(lambda x: x, s, lam)
    m2 = _expect(lambda x: (x - m) ** 2, s, lam)
    m3 = _expect(lambda x: (x - m) ** 3, s, lam)
    return m3 / m2**1.5


@functools.lru_cache(maxsize=None)
def skew_scale(target: float, lam: float = SKEW_LAMBDA) -> float:
    """Scale ``s`` whose generated column has population skewness ``target``."""
    if target <= 0:
        raise ValueError("skewness targets must be positive")
    return optimize.brentq(lambda s: population_skewness(s, lam) - target, 0.01, 1.0 / lam)


def skewed_column(z, target: float):
    s = skew_scale(float(target))
    return np.maximum(1.0 + SKEW_LAMBDA * s * z, 0.0) ** (1.0 / SKEW_LAMBDA)


def _logistic_draw(rng, linpred, prevalence):
    """Draw Bernoulli labels with the intercept tuned to the target prevalence."""
    b0 = optimize.brentq(lambda b: expit(b + linpred).mean() - prevalence, -50, 50)
    return (rng.random(len(linpred)) < expit(b0 + linpred)).astype(float), b0


def _standardized(x):
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else x - x.mean()


def _linpred(columns: dict, effects: dict):
    n = len(next(iter(columns.values())))
    out = np.zeros(n)
    for name, coef in effects.items():
        if name not in columns:
            raise DataError(f"effect names unknown column {name!r}")
        out += coef * _standardized(columns[name])
    return out


def _assemble(cfg: SimConfig, rng, extra=None, extra_exposure=None, extra_outcome=None):
    R = correlation_matrix(cfg)
    latent = rng.standard_normal((cfg.n, R.shape[0])) @ np.linalg.cholesky(R).T
    cols = {}
    for i, name in enumerate(binary_names(cfg)):
        prev = cfg.binary_prevalence[i % len(cfg.binary_prevalence)]
        cols[name] = (latent[:, i] > norm.ppf(1.0 - prev)).astype(float)
    for i, (name, target) in enumerate(zip(skewed_names(cfg), skew_targets(cfg))):
        cols[name] = skewed_column(latent[:, cfg.n_binary + i], target)
    if extra is not None:
        cols.update(extra(cols, rng))
    exposure_effects = dict(cfg.exposure_effects, **(extra_exposure or {}))
    E, _ = _logistic_draw(rng, _linpred(cols, exposure_effects), cfg.exposure_prevalence)
    spec = cfg.bimodal_spec
    cols["bimodal"] = np.where(E == 1, spec["mean1"], spec["mean0"]) + spec["sd"] * rng.standard_normal(cfg.n)
    if cfg.group_shift is not None:
        g = cfg.group_shift
        cols[g["name"]] = np.where(E == 1, g["mean1"], g["mean0"]) + g["sd"] * rng.standard_normal(cfg.n)
    cols["E"] = E
    outcome_effects = dict(cfg.outcome_effects, **(extra_outcome or {}))
    y, _ = _logistic_draw(rng, _linpred(cols, outcome_effects), cfg.outcome_prevalence)
    cols["y"] = y

    schema = [ColumnSchema(n, Binary) for n in binary_names(cfg)]
    schema += [ColumnSchema(n, Continuous) for n in skewed_names(cfg)]
    if extra is not None:
        schema += [ColumnSchema(n, Continuous) for n in cols if n not in {c.name for c in schema} | {"bimodal", "E", "y"}
                   and (cfg.group_shift is None or n != cfg.group_shift["name"])]
    schema.append(ColumnSchema("bimodal", Continuous))
    if cfg.group_shift is not None:
        schema.append(ColumnSchema(cfg.group_shift["name"], Continuous))
    schema += [ColumnSchema("E", Binary, GroupLabel), ColumnSchema("y", Binary, Excluded)]
    values = np.column_stack([cols[c.name] for c in schema])
    return Dataset(tuple(schema), values, {"source": "simulate", "seed": cfg.seed})


def simulate(cfg: SimConfig = SimConfig()) -> Dataset:
    """Benchmark rows: features, group label ``E`` and excluded outcome ``y``."""
    return _assemble(cfg, np.random.default_rng(cfg.seed))


CONFOUNDER = "x_conf"


def confounder_scenario(cfg: SimConfig = SimConfig(), effect_exposure: float = 1.0,
                        effect_outcome: float = 1.0) -> Dataset:
    """Benchmark plus ``x_conf``: a near-linear function of features without a
    direct exposure effect, which itself drives both E and y."""
    proxies = confounder_proxies(cfg)
    if len(proxies) < 2:
        raise DataError("not enough columns to build a confounder")

    def extra(cols, rng):
        x = sum(_standardized(cols[p]) for p in proxies)
        x = _standardized(x)
        return {CONFOUNDER: x + 0.35 * rng.standard_normal(len(x))}

    return _assemble(cfg, np.random.default_rng(cfg.seed), extra,
                     {CONFOUNDER: effect_exposure}, {CONFOUNDER: effect_outcome})


def confounder_proxies(cfg: SimConfig = SimConfig()):
    """First four columns without a direct exposure effect."""
    direct = set(cfg.exposure_effects)
    return [n for n in binary_names(cfg) + skewed_names(cfg) if n not in direct][:4]
