"""Utility metrics: CART-based pMSE, its permutation null and marginal summaries."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from synthgen import stats
from synthgen.dataset import Binary, Dataset
from synthgen.errors import DataError, SchemaError


@dataclass(frozen=True)
class CartParams:
    min_leaf: int = 20
    max_depth: int = 25


@dataclass(frozen=True, eq=False)
class CartTree:
    """Array-encoded binary tree. Node 0 is the root; ``feature == -1`` marks a leaf.

    Rows with ``x[feature] <= threshold`` go to ``left``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # leaf probability (label mean)
    n_samples: np.ndarray
    depth: np.ndarray
    train_leaf: np.ndarray  # leaf id of every training row
    params: CartParams = CartParams()

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def leaves(self):
        return np.flatnonzero(self.feature < 0)

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def predict_train(self) -> np.ndarray:
        return self.value[self.train_leaf]


def midpoint(lo: float, hi: float) -> float:
    """Split threshold between two distinct sorted values; always in ``[lo, hi)``."""
    t = lo + (hi - lo) / 2.0
    return t if t < hi else lo


def _exact_key(aL, bL, nL, aR, bR, nR):
    """Weighted child impurity ``aL*bL/nL + aR*bR/nR`` as an exact fraction ``(num, den)``."""
    aL, bL, nL, aR, bR, nR = (int(v) for v in (aL, bL, nL, aR, bR, nR))
    return aL * bL * nR + aR * bR * nL, nL * nR


def _less(k1, k2) -> bool:
    return k1[0] * k2[1] < k2[0] * k1[1]


def presort(X) -> np.ndarray:
    """Stable column-wise argsort, shape ``(p, n)``; reusable across label permutations."""
    return np.argsort(np.asarray(X, dtype=float), axis=0, kind="stable").T.copy()


def _best_split(Xs, ys, n_pos, min_leaf):
    """Best split of one node.

    ``Xs`` and ``ys`` are ``(p, m)`` feature values and labels with each row
    sorted by that feature. Returns ``(column, position, key)`` or ``None``.
    """
    p, m = Xs.shape
    cum = np.cumsum(ys, axis=1)[:, :-1]  # positives left of each cut
    nL = np.arange(1, m, dtype=float)
    nR = m - nL
    aL = cum
    bL = nL - aL
    aR = n_pos - aL
    bR = nR - aR
    with np.errstate(invalid="ignore", divide="ignore"):
        score = aL * bL / nL + aR * bR / nR
    valid = Xs[:, 1:] > Xs[:, :-1]
    valid &= (nL >= min_leaf) & (nR >= min_leaf)
    if not valid.any():
        return None
    score = np.where(valid, score, np.inf)
    best = score.min()
    cols, pos = np.nonzero(score <= best + 1e-12 * best)
    key = None
    choice = None
    # np.nonzero yields (column, position) in lexicographic order, so the first
    # exact minimum is the lowest column and then the smallest threshold
    for c, k in zip(cols, pos):
        cand = _exact_key(aL[c, k], bL[c, k], k + 1, aR[c, k], bR[c, k], m - k - 1)
        if key is None or _less(cand, key):
            key, choice = cand, (int(c), int(k))
    return choice[0], choice[1], key


def fit_cart(X, y, min_leaf: int = 20, max_depth: int = 25, order=None) -> CartTree:
    """Greedy Gini CART for a binary label.

    Splits are searched over every column and every midpoint between distinct
    sorted values, keeping both children at ``min_leaf`` rows or more. A node
    is split only if the weighted child impurity is strictly below the
    parent's; ties go to the lowest column, then the smallest threshold.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if len(y) != n:
        raise DataError("labels and features differ in length")
    if min_leaf < 1 or max_depth < 0:
        raise ValueError("min_leaf must be >= 1 and max_depth >= 0")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0/1")
    order = presort(X) if order is None else order
    ycol = y.astype(np.int64)
    XT = X.T
    feature, threshold, left, right, value, n_samples, depth = [], [], [], [], [], [], []
    train_leaf = np.zeros(n, dtype=np.int64)

    def new_node(rows_sorted, d):
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        m = rows_sorted.shape[1]
        value.append(float(ycol[rows_sorted[0]].sum()) / m)
        n_samples.append(m)
        depth.append(d)
        return len(feature) - 1

    stack = [(new_node(order, 0), order)]
    while stack:
        node, idx = stack.pop()
        m = idx.shape[1]
        n_pos = int(ycol[idx[0]].sum())
        d = depth[node]
        split = None
        if d < max_depth and m >= 2 * min_leaf and 0 < n_pos < m:
            Xs = XT[np.arange(p)[:, None], idx]
            ys = ycol[idx]
            split = _best_split(Xs, ys, n_pos, min_leaf)
            if split is not None:
                c, k, key = split
                parent = (n_pos * (m - n_pos), m)  # a*b/n
                if not _less(key, parent):
                    split = None
        if split is None:
            train_leaf[idx[0]] = node
            continue
        c, k, _ = split
        thr = midpoint(Xs[c, k], Xs[c, k + 1])
        goes_left = np.zeros(n, dtype=bool)
        goes_left[idx[c, : k + 1]] = True
        mask = goes_left[idx]
        n_left = k + 1
        left_idx = idx[mask].reshape(p, n_left)
        right_idx = idx[~mask].reshape(p, m - n_left)
        feature[node] = c
        threshold[node] = thr
        li = new_node(left_idx, d + 1)
        ri = new_node(right_idx, d + 1)
        left[node], right[node] = li, ri
        stack.append((ri, right_idx))
        stack.append((li, left_idx))

    return CartTree(
        np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64), np.array(value), np.array(n_samples, dtype=np.int64),
        np.array(depth, dtype=np.int64), train_leaf, CartParams(min_leaf, max_depth),
    )


# -- pMSE ------------------------------------------------------------------------


def stack_datasets(original: Dataset, synthetic: Dataset, columns=None):
    """Rows of both datasets over the shared columns, with label 1 for synthetic rows."""
    columns = list(columns) if columns is not None else original.names
    for name in columns:
        if name not in synthetic.names:
            raise SchemaError(f"synthetic data lacks column {name!r}")
        if synthetic.kind(name) != original.kind(name):
            raise SchemaError(f"column {name!r} kind differs between datasets")
    X = np.vstack([original.select(columns).values, synthetic.select(columns).values])
    y = np.r_[np.zeros(original.n), np.ones(synthetic.n)]
    return X, y


def pmse_from_labels(X, y, params: CartParams = CartParams(), order=None) -> float:
    tree = fit_cart(X, y, params.min_leaf, params.max_depth, order)
    c = float(y.mean())
    return float(np.mean((tree.predict_train() - c) ** 2))


def pmse(original: Dataset, synthetic: Dataset, params: CartParams = CartParams(), columns=None) -> float:
    """ψ: mean squared deviation of in-sample CART membership probabilities from ``c``."""
    X, y = stack_datasets(original, synthetic, columns)
    return pmse_from_labels(X, y, params)


@dataclass(frozen=True)
class UtilityReport:
    psi: float
    psi_bar: float
    psi_ratio: float
    n_perm: int
    c: float
    n_original: int
    n_synthetic: int
    permutation_psi: tuple
    min_leaf: int = 20
    max_depth: int = 25
    seed: int | None = None

    def to_json(self) -> dict:
        d = asdict(self)
        d["permutation_psi"] = list(self.permutation_psi)
        return d

    @classmethod
    def from_json(cls, raw: dict) -> "UtilityReport":
        raw = dict(raw)
        raw["permutation_psi"] = tuple(raw["permutation_psi"])
        return cls(**raw)


def worker_count() -> int:
    env = os.environ.get("SYNTHGEN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"SYNTHGEN_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def pmse_ratio(original: Dataset, synthetic: Dataset, n_perm: int = 100, seed=None,
               params: CartParams = CartParams(), columns=None, workers: int | None = None) -> UtilityReport:
    """ψ, the mean ψ̄ over ``n_perm`` label permutations, and ψ/ψ̄.

    Permutations are drawn up front from one seeded generator, so the result
    does not depend on how refits are spread over workers.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    X, y = stack_datasets(original, synthetic, columns)
    order = presort(X)
    psi = pmse_from_labels(X, y, params, order)
    rng = np.random.default_rng(seed)
    labels = [rng.permutation(y) for _ in range(n_perm)]
    workers = min(workers or worker_count(), n_perm)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            perm = list(pool.map(lambda yp: pmse_from_labels(X, yp, params, order), labels))
    else:
        perm = [pmse_from_labels(X, yp, params, order) for yp in labels]
    psi_bar = float(np.mean(perm))
    if psi_bar == 0:
        raise DataError("degenerate permutation null: every permuted tree is a single leaf (psi_bar = 0)")
    return UtilityReport(psi, psi_bar, psi / psi_bar, n_perm, float(y.mean()), original.n, synthetic.n,
                         tuple(perm), params.min_leaf, params.max_depth, None if seed is None else int(seed))


# -- marginal summaries ------------------------------------------------------------

SUMMARY_COLUMNS = ["column", "kind", "statistic", "coordinate", "value"]


def marginal_summary(data: Dataset, bins: int = 20, label: str | None = None) -> pd.DataFrame:
    """Long-format marginal description of every column.

    Continuous: histogram counts (coordinate = left bin edge), KDE on a
    512-point grid, skewness, kurtosis and mode count. Binary: counts of 0 and 1.
    """
    rows = []
    for col in data.schema:
        x = data.column(col.name)
        if col.kind == Binary:
            for v in (0, 1):
                rows.append((col.name, col.kind, "frequency", float(v), float(np.sum(x == v))))
            continue
        counts, edges = np.histogram(x, bins=bins)
        rows += [(col.name, col.kind, "histogram", float(e), float(c)) for e, c in zip(edges[:-1], counts)]
        if len(x) > 1 and np.ptp(x) > 0:
            grid, dens = stats.kde_curve(x)
            rows += [(col.name, col.kind, "kde", float(g), float(v)) for g, v in zip(grid, dens)]
        rows += [
            (col.name, col.kind, "mean", np.nan, float(np.mean(x)) if len(x) else np.nan),
            (col.name, col.kind, "skewness", np.nan, stats.skewness(x) if len(x) else np.nan),
            (col.name, col.kind, "kurtosis", np.nan, stats.kurtosis(x) if len(x) else np.nan),
            (col.name, col.kind, "modes", np.nan, float(stats.count_modes(x)) if len(x) > 1 else np.nan),
        ]
    frame = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
    if label is not None:
        frame.insert(0, "dataset", label)
    return frame


def write_summary(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
