"""Logistic-regression propensity model ``p(g=1 | x)`` with p-value variable selection."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from synthgen.dataset import Binary, Dataset, Feature
from synthgen.errors import FitError, SchemaError

logger = logging.getLogger(__name__)

All = "all"
ExposureOnly = "exposure-only"
ExposureAndOutcome = "exposure-and-outcome"
STRATEGIES = (All, ExposureOnly, ExposureAndOutcome)

TOLERANCE = 1e-8
MAX_ITER = 100
# a standardized coefficient this large means the likelihood has no finite maximum
PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class VariableReport:
    name: str
    coefficient: float
    std_error: float
    z: float
    p_value: float
    selected: bool = True
    outcome_p_value: float | None = None


@dataclass(frozen=True)
class SelectionReport:
    strategy: str
    alpha: float
    variables: tuple

    @property
    def selected(self):
        return [v.name for v in self.variables if v.selected]


@dataclass(frozen=True)
class PropensityModel:
    target: str
    intercept: float
    coefficients: dict  # name -> coefficient, selected variables only
    selection: str = ExposureOnly
    alpha: float = 0.05
    diagnostics: tuple = ()  # VariableReport per candidate
    iterations: int = 0

    @property
    def names(self):
        return list(self.coefficients)

    def to_json(self) -> dict:
        return {
            "version": 1,
            "target": self.target,
            "strategy": self.selection,
            "alpha": self.alpha,
            "intercept": self.intercept,
            "coefficients": dict(self.coefficients),
            "iterations": self.iterations,
            "diagnostics": [asdict(v) for v in self.diagnostics],
        }

    @classmethod
    def from_json(cls, raw: dict) -> "PropensityModel":
        return cls(
            target=raw["target"],
            intercept=float(raw["intercept"]),
            coefficients={k: float(v) for k, v in raw["coefficients"].items()},
            selection=raw.get("strategy", ExposureOnly),
            alpha=float(raw.get("alpha", 0.05)),
            diagnostics=tuple(VariableReport(**v) for v in raw.get("diagnostics", [])),
            iterations=int(raw.get("iterations", 0)),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PropensityModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def _design(data: Dataset, names):
    return np.column_stack([np.ones(data.n)] + [data.column(n) for n in names])


def _separating_variable(X, y, names):
    """First variable whose values alone split the two classes, else the one
    with the largest standardized coefficient is reported by the caller."""
    for j, name in enumerate(names, start=1):
        x0, x1 = X[y == 0, j], X[y == 1, j]
        if len(x0) and len(x1) and (x0.max() <= x1.min() or x1.max() <= x0.min()):
            return name
    return None


def irls(X, y, ridge: float = 0.0, tol: float = TOLERANCE, max_iter: int = MAX_ITER):
    """Newton/IRLS for logistic regression. Returns ``(beta, info, iterations, converged)``.

    ``info`` is the (penalized) observed information at the solution.
    """
    n, k = X.shape
    beta = np.zeros(k)
    penalty = ridge * np.eye(k)
    penalty[0, 0] = 0.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(X @ beta)
        w = p * (1.0 - p)
        info = (X * w[:, None]).T @ X + penalty
        score = X.T @ (y - p) - penalty @ beta
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            # weights collapse under separation; the caller diagnoses it
            break
        beta = beta + step
        if not np.all(np.isfinite(beta)):
            break
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    p = expit(X @ beta)
    info = (X * (p * (1.0 - p))[:, None]).T @ X + penalty
    return beta, info, it, converged


def fit_logistic(data: Dataset, target: str, features, ridge: float = 0.0,
                 selection: str = All, alpha: float = 0.05) -> PropensityModel:
    """Maximum-likelihood logistic regression of ``target`` on ``features`` (Wald inference)."""
    features = list(features)
    if data.kind(target) != Binary:
        raise SchemaError(f"target {target!r} must be binary")
    if target in features:
        raise SchemaError(f"target {target!r} cannot also be a feature")
    if data.n <= len(features) + 1:
        raise FitError(f"need more than {len(features) + 1} rows, got {data.n}")
    y = data.column(target)
    if y.min() == y.max():
        raise FitError(f"target {target!r} has a single class")
    X = _design(data, features)
    if ridge == 0 and np.linalg.matrix_rank(X) < X.shape[1]:
        raise FitError(f"singular information matrix in logistic fit of {target!r} (collinear design)")
    beta, info, iterations, converged = irls(X, y, ridge)
    sd = X[:, 1:].std(axis=0)
    scaled = np.abs(beta[1:]) * sd if features else np.zeros(0)
    # separation shows up as coefficients that keep growing: no convergence
    if not converged or not np.all(np.isfinite(beta)):
        culprit = _separating_variable(X, y, features)
        if culprit is None and len(scaled) and np.all(np.isfinite(scaled)):
            culprit = features[int(np.argmax(scaled))]
        raise FitError(f"perfect separation in logistic fit of {target!r} (variable {culprit!r})")
    cond = np.linalg.cond(info)
    if not np.isfinite(cond) or cond > 1e14:
        raise FitError(f"singular information matrix in logistic fit of {target!r}")
    se = np.sqrt(np.diag(np.linalg.inv(info)))
    z = beta / se
    pvals = 2.0 * norm.sf(np.abs(z))
    reports = tuple(
        VariableReport(name, float(beta[j + 1]), float(se[j + 1]), float(z[j + 1]), float(pvals[j + 1]))
        for j, name in enumerate(features)
    )
    return PropensityModel(target, float(beta[0]), {n: float(b) for n, b in zip(features, beta[1:])},
                           selection, alpha, reports, iterations)


def candidate_features(data: Dataset, exclude=()):
    return [n for n in data.names_where(role=Feature) if n not in exclude]


def select_variables(data: Dataset, exposure: str, outcome: str | None = None,
                     strategy: str = ExposureOnly, alpha: float = 0.05, features=None,
                     ridge: float = 0.0) -> SelectionReport:
    """Screen candidate features by Wald p-value of one full logistic fit per target.

    ``ExposureAndOutcome`` keeps the variables significant for the exposure
    and for the outcome; the outcome model also adjusts for the exposure.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    features = candidate_features(data, (exposure, outcome)) if features is None else list(features)
    full = fit_logistic(data, exposure, features, ridge)
    if strategy == All:
        return SelectionReport(strategy, alpha, tuple(v for v in full.diagnostics))
    keep = {v.name: v.p_value < alpha for v in full.diagnostics}
    outcome_p = {}
    if strategy == ExposureAndOutcome:
        if outcome is None:
            raise SchemaError("strategy exposure-and-outcome needs an outcome column")
        if data.kind(outcome) != Binary:
            raise SchemaError(f"outcome {outcome!r} must be binary")
        out = fit_logistic(data, outcome, features + [exposure], ridge)
        outcome_p = {v.name: v.p_value for v in out.diagnostics}
        keep = {n: k and outcome_p[n] < alpha for n, k in keep.items()}
    variables = tuple(
        VariableReport(v.name, v.coefficient, v.std_error, v.z, v.p_value, keep[v.name], outcome_p.get(v.name))
        for v in full.diagnostics
    )
    return SelectionReport(strategy, alpha, variables)


def fit_propensity(data: Dataset, group: str | None = None, outcome: str | None = None,
                   strategy: str = ExposureOnly, alpha: float = 0.05, features=None,
                   ridge: float = 0.0) -> PropensityModel:
    """Select variables for ``group`` then refit the logistic model on them."""
    group = group or data.group_label
    if group is None:
        raise SchemaError("no group label column given or declared in the schema")
    report = select_variables(data, group, outcome, strategy, alpha, features, ridge)
    chosen = report.selected
    model = fit_logistic(data, group, chosen, ridge, strategy, alpha)
    logger.info("propensity model for %s uses %d of %d variables", group, len(chosen), len(report.variables))
    return PropensityModel(group, model.intercept, model.coefficients, strategy, alpha,
                           report.variables, model.iterations)


def predict_propensity(model: PropensityModel, data: Dataset) -> np.ndarray:
    missing = [n for n in model.names if n not in data.names]
    if missing:
        raise SchemaError(f"dataset lacks propensity variables {missing}")
    eta = np.full(data.n, model.intercept)
    # fixed summation order so a reloaded model predicts bit-identically
    for name in sorted(model.coefficients):
        eta = eta + model.coefficients[name] * data.column(name)
    return np.clip(expit(eta), PROB_CLAMP, 1.0 - PROB_CLAMP)
