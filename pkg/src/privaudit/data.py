"""Tabular dataset model.

Schema-typed ingestion, canonical [0,1]/one-hot encoding, neighboring-dataset
construction, and target-record selection. Datasets are immutable after
construction and safe to share across concurrent shadow runs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SchemaError",
    "DataError",
    "NumericColumn",
    "CategoricalColumn",
    "Schema",
    "Dataset",
    "EncodedMatrix",
    "load_csv",
    "make_neighbors",
    "encode",
    "decode",
    "encode_record",
    "decode_row",
    "select_targets",
]

Record = tuple  # ordered values matching the schema


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class NumericColumn:
    name: str
    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo < self.hi):
            raise SchemaError(f"column {self.name!r}: need min < max, got [{self.lo}, {self.hi}]")

    kind = "numeric"


@dataclass(frozen=True)
class CategoricalColumn:
    name: str
    levels: tuple[str, ...]

    def __post_init__(self):
        if not self.levels:
            raise SchemaError(f"column {self.name!r}: levels must be non-empty")
        if len(set(self.levels)) != len(self.levels):
            raise SchemaError(f"column {self.name!r}: duplicate levels")

    kind = "categorical"


Column = NumericColumn | CategoricalColumn


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column names in {names}")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"no column named {name!r}")

    def validate_record(self, values, row: int | None = None) -> Record:
        where = "" if row is None else f" (row {row})"
        if len(values) != len(self.columns):
            raise DataError(
                f"record has {len(values)} values, schema has {len(self.columns)} columns{where}"
            )
        out = []
        for col, v in zip(self.columns, values):
            if isinstance(col, NumericColumn):
                v = float(v)
                if not (col.lo <= v <= col.hi) or not math.isfinite(v):
                    raise DataError(
                        f"column {col.name!r}: value {v} outside [{col.lo}, {col.hi}]{where}"
                    )
                out.append(v)
            else:
                i = int(v)
                if not (0 <= i < len(col.levels)):
                    raise DataError(
                        f"column {col.name!r}: level index {i} out of range{where}"
                    )
                out.append(i)
        return tuple(out)

    # -- encoded geometry ---------------------------------------------------

    @property
    def encoded_width(self) -> int:
        return sum(1 if isinstance(c, NumericColumn) else len(c.levels) for c in self.columns)

    def encoded_spans(self) -> list[tuple[int, int]]:
        """Half-open (start, stop) slice per column in the encoded matrix."""
        spans, at = [], 0
        for c in self.columns:
            w = 1 if isinstance(c, NumericColumn) else len(c.levels)
            spans.append((at, at + w))
            at += w
        return spans

    # -- JSON wire format ---------------------------------------------------

    def to_json_dict(self) -> dict:
        cols = []
        for c in self.columns:
            if isinstance(c, NumericColumn):
                cols.append({"name": c.name, "kind": "numeric", "min": c.lo, "max": c.hi})
            else:
                cols.append({"name": c.name, "kind": "categorical", "levels": list(c.levels)})
        return {"columns": cols}

    @staticmethod
    def from_json_dict(doc: dict) -> "Schema":
        if "columns" not in doc:
            raise SchemaError("schema document missing 'columns'")
        cols: list[Column] = []
        for i, c in enumerate(doc["columns"]):
            try:
                kind = c["kind"]
                if kind == "numeric":
                    cols.append(NumericColumn(c["name"], float(c["min"]), float(c["max"])))
                elif kind == "categorical":
                    cols.append(CategoricalColumn(c["name"], tuple(c["levels"])))
                else:
                    raise SchemaError(f"columns[{i}]: unknown kind {kind!r}")
            except KeyError as e:
                raise SchemaError(f"columns[{i}]: missing field {e}") from None
        return Schema(tuple(cols))

    @staticmethod
    def from_json_file(path) -> "Schema":
        with open(path, "r", encoding="utf-8") as f:
            return Schema.from_json_dict(json.load(f))


@dataclass(frozen=True)
class Dataset:
    schema: Schema
    rows: tuple[Record, ...]
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.rows)

    @staticmethod
    def from_rows(schema: Schema, rows, provenance: str = "") -> "Dataset":
        validated = tuple(schema.validate_record(r, row=i) for i, r in enumerate(rows))
        return Dataset(schema=schema, rows=validated, provenance=provenance)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.schema.names)
            for r in self.rows:
                out = []
                for col, v in zip(self.schema.columns, r):
                    out.append(repr(v) if isinstance(col, NumericColumn) else col.levels[v])
                w.writerow(out)


@dataclass(frozen=True)
class EncodedMatrix:
    matrix: np.ndarray  # (n_rows, encoded_width) float64
    schema: Schema
    spans: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        if not self.spans:
            object.__setattr__(self, "spans", tuple(self.schema.encoded_spans()))


def load_csv(path, schema: Schema) -> Dataset:
    """Read a CSV with a header row matching the schema column order."""
    try:
        f = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    with f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        if header != schema.names:
            raise DataError(f"{path}: header {header} does not match schema {schema.names}")
        rows = []
        for rownum, raw in enumerate(reader):
            if len(raw) != len(schema.columns):
                raise DataError(f"{path}: row {rownum} has {len(raw)} fields, expected {len(schema.columns)}")
            values = []
            for col, cell in zip(schema.columns, raw):
                if isinstance(col, NumericColumn):
                    try:
                        values.append(float(cell))
                    except ValueError:
                        raise DataError(
                            f"{path}: row {rownum}, column {col.name!r}: not a number: {cell!r}"
                        ) from None
                else:
                    if cell not in col.levels:
                        raise DataError(
                            f"{path}: row {rownum}, column {col.name!r}: unknown level {cell!r}"
                        )
                    values.append(col.levels.index(cell))
            rows.append(schema.validate_record(values, row=rownum))
    return Dataset(schema=schema, rows=tuple(rows), provenance=str(path))


def encode_record(schema: Schema, record: Record) -> np.ndarray:
    out = np.zeros(schema.encoded_width, dtype=np.float64)
    for (a, b), col, v in zip(schema.encoded_spans(), schema.columns, record):
        if isinstance(col, NumericColumn):
            out[a] = (v - col.lo) / (col.hi - col.lo)
        else:
            out[a + int(v)] = 1.0
    return out


def encode(ds: Dataset) -> EncodedMatrix:
    """Numeric columns scaled to [0,1] by schema bounds; categoricals one-hot."""
    m = np.zeros((len(ds), ds.schema.encoded_width), dtype=np.float64)
    for i, r in enumerate(ds.rows):
        m[i] = encode_record(ds.schema, r)
    return EncodedMatrix(matrix=m, schema=ds.schema)


def decode_row(schema: Schema, vec: np.ndarray) -> Record:
    values = []
    for (a, b), col in zip(schema.encoded_spans(), schema.columns):
        if isinstance(col, NumericColumn):
            x = float(np.clip(vec[a], 0.0, 1.0))
            values.append(col.lo + x * (col.hi - col.lo))
        else:
            values.append(int(np.argmax(vec[a:b])))
    return tuple(values)


def decode(em: EncodedMatrix, provenance: str = "") -> Dataset:
    rows = tuple(decode_row(em.schema, em.matrix[i]) for i in range(em.matrix.shape[0]))
    return Dataset(schema=em.schema, rows=rows, provenance=provenance)


def _record_key(schema: Schema, record: Record) -> bytes:
    # canonical encoded representation, used for exact-match duplicate checks
    return encode_record(schema, record).tobytes()


def make_neighbors(base: Dataset, target: Record) -> tuple[Dataset, Dataset]:
    """Return (D, D') where D' is D with the target appended."""
    target = base.schema.validate_record(target)
    tkey = _record_key(base.schema, target)
    if any(_record_key(base.schema, r) == tkey for r in base.rows):
        raise DataError("target record already present in base dataset")
    dprime = Dataset(
        schema=base.schema,
        rows=base.rows + (target,),
        provenance=base.provenance,
    )
    return base, dprime


def _marginal_outlier_scores(ds: Dataset, bins: int = 10) -> np.ndarray:
    """Sum over columns of -log empirical marginal frequency.

    Numeric columns use `bins` equal-width histogram bins over the schema
    bounds. A record in rare cells scores high. This is a heuristic: records
    vulnerable only on learned joint dimensions may not be marginal outliers.
    """
    n = len(ds)
    scores = np.zeros(n, dtype=np.float64)
    for ci, col in enumerate(ds.schema.columns):
        vals = [r[ci] for r in ds.rows]
        if isinstance(col, NumericColumn):
            width = (col.hi - col.lo) / bins
            idx = np.minimum(((np.asarray(vals) - col.lo) / width).astype(int), bins - 1)
            counts = np.bincount(idx, minlength=bins)
            freq = counts[idx] / n
        else:
            idx = np.asarray(vals, dtype=int)
            counts = np.bincount(idx, minlength=len(col.levels))
            freq = counts[idx] / n
        scores += -np.log(freq)
    return scores


def select_targets(ds: Dataset, strategy: str, k: int, seed: int) -> list[Record]:
    """Pick k target records, either uniformly or by marginal-outlier score."""
    if k > len(ds):
        raise DataError(f"k={k} exceeds dataset size {len(ds)}")
    if strategy == "random":
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(ds), size=k, replace=False)
        return [ds.rows[i] for i in idx]
    if strategy == "marginal_outlier":
        scores = _marginal_outlier_scores(ds)
        # descending by score, ties broken by ascending row index
        order = sorted(range(len(ds)), key=lambda i: (-scores[i], i))
        return [ds.rows[i] for i in order[:k]]
    raise DataError(f"unknown strategy {strategy!r}")
