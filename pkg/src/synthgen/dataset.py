"""Column-typed tables: ingestion, validation, min-max scaling and export."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from synthgen.errors import DataError, SchemaError

logger = logging.getLogger(__name__)

Continuous = "continuous"
Binary = "binary"
KINDS = (Continuous, Binary)

Feature = "feature"
GroupLabel = "group"
Excluded = "excluded"
ROLES = (Feature, GroupLabel, Excluded)

MISSING_TOKENS = ["", "NA"]


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str = Continuous
    role: str = Feature

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"column {self.name!r}: unknown role {self.role!r}")

    def to_dict(self):
        return {"name": self.name, "kind": self.kind, "role": self.role}


def validate_schema(schema: Sequence[ColumnSchema]) -> tuple[ColumnSchema, ...]:
    schema = tuple(schema)
    names = [c.name for c in schema]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise SchemaError(f"duplicate column names: {dupes}")
    groups = [c.name for c in schema if c.role == GroupLabel]
    if len(groups) > 1:
        raise SchemaError(f"at most one group label column allowed, got {groups}")
    for c in schema:
        if c.role == GroupLabel and c.kind != Binary:
            raise SchemaError(f"group label {c.name!r} must be binary")
    return schema


def load_schema(path) -> tuple[ColumnSchema, ...]:
    """Read a JSON schema sidecar: a list of ``{name, kind, role}`` records
    or an object with a ``columns`` list."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return schema_from_json(raw)


def schema_from_json(raw) -> tuple[ColumnSchema, ...]:
    if isinstance(raw, dict):
        raw = raw.get("columns")
    if not isinstance(raw, list):
        raise SchemaError("schema must be a list of column records")
    cols = []
    for rec in raw:
        unknown = set(rec) - {"name", "kind", "role"}
        if unknown:
            raise SchemaError(f"unknown schema keys {sorted(unknown)}")
        cols.append(ColumnSchema(rec["name"], rec.get("kind", Continuous), rec.get("role", Feature)))
    return validate_schema(cols)


def schema_to_json(schema: Iterable[ColumnSchema]) -> dict:
    return {"version": 1, "columns": [c.to_dict() for c in schema]}


def save_schema(schema, path) -> None:
    Path(path).write_text(json.dumps(schema_to_json(schema), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of real values with a typed schema.

    ``values`` is an ``(n, p)`` float array whose columns follow ``schema``.
    """

    schema: tuple[ColumnSchema, ...]
    values: np.ndarray
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        schema = validate_schema(self.schema)
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1 and len(schema) == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[1] != len(schema):
            raise SchemaError(
                f"values shape {values.shape} does not match {len(schema)} schema columns"
            )
        if not np.all(np.isfinite(values)):
            raise DataError("dataset contains missing or non-finite values")
        for j, col in enumerate(schema):
            if col.kind == Binary and not np.all((values[:, j] == 0) | (values[:, j] == 1)):
                bad = values[~((values[:, j] == 0) | (values[:, j] == 1)), j][0]
                raise DataError(f"binary column {col.name!r} contains value {bad:g}")
        values.setflags(write=False)
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.schema]

    def index(self, name: str) -> int:
        for j, c in enumerate(self.schema):
            if c.name == name:
                return j
        raise SchemaError(f"no column named {name!r}")

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.index(name)]

    def kind(self, name: str) -> str:
        return self.schema[self.index(name)].kind

    def names_where(self, kind=None, role=None) -> list[str]:
        return [
            c.name
            for c in self.schema
            if (kind is None or c.kind == kind) and (role is None or c.role == role)
        ]

    @property
    def group_label(self) -> str | None:
        found = self.names_where(role=GroupLabel)
        return found[0] if found else None

    def select(self, names: Sequence[str]) -> "Dataset":
        idx = [self.index(n) for n in names]
        return Dataset(tuple(self.schema[i] for i in idx), self.values[:, idx], dict(self.provenance))

    def features(self) -> "Dataset":
        return self.select(self.names_where(role=Feature))

    def with_values(self, values) -> "Dataset":
        return Dataset(self.schema, values, dict(self.provenance))

    def rows(self, idx) -> "Dataset":
        return Dataset(self.schema, self.values[idx], dict(self.provenance))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=self.names)

    @classmethod
    def empty(cls, schema) -> "Dataset":
        return cls(tuple(schema), np.zeros((0, len(schema))))


def ingest_csv(path, schema: Sequence[ColumnSchema], missing_policy: str = "reject") -> Dataset:
    """Read a CSV file with a header row into a validated :class:`Dataset`.

    Missing cells are empty strings or ``NA``. With ``missing_policy="drop"``
    incomplete rows are removed and the count is stored in
    ``dataset.provenance["dropped_rows"]``.
    """
    schema = validate_schema(schema)
    if missing_policy not in ("reject", "drop"):
        raise ValueError(f"missing_policy must be 'reject' or 'drop', not {missing_policy!r}")
    frame = pd.read_csv(
        path, dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8"
    )
    header = list(frame.columns)
    expected = [c.name for c in schema]
    if sorted(header) != sorted(expected):
        missing = [n for n in expected if n not in header]
        extra = [n for n in header if n not in expected]
        raise SchemaError(f"header mismatch: missing {missing}, unexpected {extra}")
    frame = frame[expected]
    is_missing = frame.isin(MISSING_TOKENS)
    row_missing = is_missing.any(axis=1).to_numpy()
    dropped = int(row_missing.sum())
    if dropped and missing_policy == "reject":
        first = int(np.flatnonzero(row_missing)[0])
        raise DataError(f"{dropped} rows contain missing cells (first at data row {first + 1})")
    frame = frame.loc[~row_missing]
    if dropped:
        logger.warning("dropped %d rows with missing cells from %s", dropped, path)
    if len(frame) == 0:
        raise DataError("no rows left after removing missing values")
    try:
        values = frame.to_numpy().astype(float)
    except ValueError as exc:
        raise DataError(f"non-numeric cell in {path}: {exc}") from None
    data = Dataset(schema, values, {"source": str(path), "dropped_rows": dropped})
    check_not_constant(data)
    return data


def check_not_constant(data: Dataset) -> None:
    for j, col in enumerate(data.schema):
        if col.role == Feature and data.n > 1 and np.ptp(data.values[:, j]) == 0:
            raise DataError(f"column {col.name!r} is constant")


def write_csv(data: Dataset, path) -> None:
    """Write ``data`` in the ingestion dialect; binary columns as integers."""
    frame = data.to_frame()
    for c in data.schema:
        if c.kind == Binary:
            frame[c.name] = frame[c.name].astype(int)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


@dataclass(frozen=True)
class ScalingParams:
    """Per-column ``(min, max)`` used by min-max scaling, keyed by column name."""

    bounds: dict

    def to_json(self) -> dict:
        return {k: [float(lo), float(hi)] for k, (lo, hi) in self.bounds.items()}

    @classmethod
    def from_json(cls, raw: dict) -> "ScalingParams":
        return cls({k: (float(v[0]), float(v[1])) for k, v in raw.items()})


def minmax_scale(data: Dataset) -> tuple[Dataset, ScalingParams]:
    """Map every continuous column onto ``[0, 1]``; binary columns pass through."""
    values = data.values.copy()
    bounds = {}
    for j, col in enumerate(data.schema):
        if col.kind != Continuous:
            continue
        lo, hi = float(values[:, j].min()), float(values[:, j].max())
        if not hi > lo:
            raise DataError(f"cannot scale constant column {col.name!r}")
        bounds[col.name] = (lo, hi)
        values[:, j] = (values[:, j] - lo) / (hi - lo)
    return data.with_values(values), ScalingParams(bounds)


def minmax_unscale(data: Dataset, params: ScalingParams) -> Dataset:
    values = data.values.copy()
    for name, (lo, hi) in params.bounds.items():
        try:
            j = data.index(name)
        except SchemaError:
            raise SchemaError(f"scaled column {name!r} missing from dataset") from None
        if data.schema[j].kind != Continuous:
            raise SchemaError(f"column {name!r} is not continuous")
        values[:, j] = values[:, j] * (hi - lo) + lo
    return data.with_values(values)
