"""CSV/JSON readers and writers, plus simple missing-value preprocessing.

Matrix CSV: one header row of column names, ``NA`` for a missing entry,
plain decimals otherwise. Column loss kinds live in a JSON sidecar mapping
column name to ``"gaussian"``, ``"bernoulli"`` or ``"poisson"``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .losses import ObservedMatrix, infer_loss, loss_from_name

NA_TOKEN = "NA"
TWINS_COLUMNS = ("pair_id", "gestat10", "weight_lighter", "weight_heavier",
                 "mortality_lighter", "mortality_heavier")


class IngestError(ValueError):
    pass


def _fmt(v: float) -> str:
    return NA_TOKEN if math.isnan(v) else repr(float(v))


def _read_rows(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise IngestError(f"{path}: file is empty")
    return rows[0], rows[1:]


def _parse(tok, path, line):
    tok = tok.strip()
    if tok == NA_TOKEN:
        return math.nan
    try:
        return float(tok)
    except ValueError:
        raise IngestError(f"{path}:{line}: cannot parse {tok!r}") from None


def read_dense_csv(path):
    """Return ``(array, column_names)``; ``NA`` cells become ``NaN``."""
    header, body = _read_rows(path)
    names = [h.strip() for h in header]
    if not body:
        raise IngestError(f"{path}: no data rows")
    out = np.empty((len(body), len(names)))
    for i, row in enumerate(body):
        if len(row) != len(names):
            raise IngestError(f"{path}:{i + 2}: expected {len(names)} fields, got {len(row)}")
        out[i] = [_parse(tok, path, i + 2) for tok in row]
    return out, names


def write_dense_csv(path, array, names=None):
    array = np.asarray(array, dtype=float)
    if array.ndim == 1:
        array = array[:, None]
    names = list(names) if names is not None else [f"x{j}" for j in range(array.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in array:
            w.writerow([_fmt(v) for v in row])


def read_schema(path) -> dict:
    with open(path) as fh:
        schema = json.load(fh)
    if not isinstance(schema, dict):
        raise IngestError(f"{path}: schema must be a JSON object")
    return schema


def write_schema(path, obs: ObservedMatrix):
    schema = {name: kind.name for name, kind in zip(obs.col_names, obs.col_losses)}
    with open(path, "w") as fh:
        json.dump(schema, fh, indent=2)


def read_csv_matrix(path, schema=None, loss: str = "auto") -> ObservedMatrix:
    """Read a matrix CSV into an :class:`ObservedMatrix`.

    ``schema`` is a mapping (or path to a JSON file) from column name to loss
    name. Columns absent from the schema use ``loss``; ``"auto"`` infers
    bernoulli for +-1 columns and gaussian otherwise.
    """
    x, names = read_dense_csv(path)
    if isinstance(schema, (str, Path)):
        schema = read_schema(schema)
    schema = schema or {}
    unknown = set(schema) - set(names)
    if unknown:
        raise IngestError(f"schema names columns not in the file: {sorted(unknown)}")
    losses = []
    for j, name in enumerate(names):
        kind = schema.get(name, loss)
        losses.append(infer_loss(x[:, j]) if kind == "auto" else loss_from_name(kind))
    return ObservedMatrix.from_dense(x, tuple(losses), names)


def write_csv_matrix(path, obs: ObservedMatrix):
    write_dense_csv(path, obs.to_dense(), obs.col_names)


def mode_impute(obs: ObservedMatrix) -> np.ndarray:
    """Fill each missing cell with its column's most frequent observed value.

    Ties go to the smallest value.
    """
    x = obs.to_dense()
    for j in range(obs.n_cols):
        col = x[:, j]
        seen = col[~np.isnan(col)]
        if seen.size == 0:
            raise IngestError(f"column {obs.col_names[j]!r} has no observed entries")
        vals, counts = np.unique(seen, return_counts=True)
        col[np.isnan(col)] = vals[np.argmax(counts)]
    return x


class Imputer(Protocol):
    """Preprocessor turning a partially observed matrix into a dense one."""

    def fit_transform(self, obs: ObservedMatrix) -> np.ndarray: ...


class ModeImputer:
    def fit_transform(self, obs: ObservedMatrix) -> np.ndarray:
        return mode_impute(obs)


class MiceImputer:
    """Slot for a multiple-imputation backend; none is bundled."""

    def __init__(self, n_imputations: int = 5):
        self.n_imputations = n_imputations

    def fit_transform(self, obs: ObservedMatrix) -> np.ndarray:
        raise NotImplementedError(
            "multiple imputation is not bundled; pass an Imputer implementation instead")


@dataclass(frozen=True)
class TwinsRecords:
    """Per-pair twin records: confounder and both twins' weights and outcomes."""

    pair_id: np.ndarray
    gestat10: np.ndarray
    weight_lighter: np.ndarray
    weight_heavier: np.ndarray
    mortality_lighter: np.ndarray
    mortality_heavier: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gestat10, dtype=float)
        if not np.all((g == np.round(g)) & (g >= 0) & (g <= 9)):
            raise IngestError("gestat10 must be an integer in 0..9")
        for name in ("mortality_lighter", "mortality_heavier"):
            m = np.asarray(getattr(self, name), dtype=float)
            if not np.all((m == 0) | (m == 1)):
                raise IngestError(f"{name} must be 0/1")
        n = g.size
        for name in TWINS_COLUMNS:
            arr = np.asarray(getattr(self, name))
            if arr.shape != (n,):
                raise IngestError(f"{name} has shape {arr.shape}, expected ({n},)")
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.gestat10.size


def read_twins_csv(path) -> TwinsRecords:
    x, names = read_dense_csv(path)
    missing = set(TWINS_COLUMNS) - set(names)
    if missing:
        raise IngestError(f"{path}: missing twins columns {sorted(missing)}")
    cols = {n: x[:, names.index(n)] for n in TWINS_COLUMNS}
    if any(np.isnan(v).any() for v in cols.values()):
        raise IngestError(f"{path}: twins records may not contain NA")
    cols["pair_id"] = cols["pair_id"].astype(np.int64)
    return TwinsRecords(**cols)


def write_twins_csv(path, records: TwinsRecords):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TWINS_COLUMNS)
        for i in range(len(records)):
            w.writerow([int(records.pair_id[i]), int(records.gestat10[i]),
                        _fmt(records.weight_lighter[i]), _fmt(records.weight_heavier[i]),
                        int(records.mortality_lighter[i]), int(records.mortality_heavier[i])])


def read_dataset_csv(path) -> dict:
    """Read treatment/outcome columns (and optional ``y0``, ``y1``) as arrays."""
    x, names = read_dense_csv(path)
    for req in ("treatment", "outcome"):
        if req not in names:
            raise IngestError(f"{path}: missing column {req!r}")
    return {n: x[:, j] for j, n in enumerate(names)}
