"""Typed, immutable columnar tables with CSV ingestion and deterministic sampling.

Representation choices (pinned):

* continuous cells are float64; missing is NaN; infinities are rejected at
  ingestion so downstream finiteness checks stay meaningful;
* categorical/ordinal cells are int64 codes into a per-column label list,
  interned in first-appearance order at load; missing is code -1;
* the CSV dialect is comma-separated, double-quote escaped, UTF-8, header
  required, ``\\n`` line endings.

Tables are immutable after construction (arrays are marked read-only) and
safe to share across threads.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TableError
from .rng import permutation, sample_indices

KINDS = ("continuous", "categorical", "ordinal")
MISSING_CODE = -1


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    allow_missing: bool = True

    def __post_init__(self):
        if not self.name:
            raise TableError("column name must be non-empty")
        if self.kind not in KINDS:
            raise TableError(f"unknown column kind {self.kind!r}")


@dataclass(frozen=True)
class Schema:
    columns: tuple[ColumnSpec, ...]
    target: str | None = None
    target_kind: str = "continuous"

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise TableError("duplicate column names in schema")
        if self.target is not None and self.target not in names:
            raise TableError(f"target {self.target!r} is not a schema column")
        if self.target_kind not in ("categorical", "continuous"):
            raise TableError(f"bad target_kind {self.target_kind!r}")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def spec(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise TableError(f"no column named {name!r}")

    def drop(self, name: str) -> Schema:
        cols = tuple(c for c in self.columns if c.name != name)
        target = self.target if self.target != name else None
        return Schema(cols, target, self.target_kind)

    def to_json(self) -> str:
        doc = {
            "columns": [
                {"name": c.name, "kind": c.kind, "allow_missing": c.allow_missing}
                for c in self.columns
            ],
            "target": self.target,
            "target_kind": self.target_kind,
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> Schema:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise TableError(f"malformed schema JSON: {exc}") from exc
        if not isinstance(doc, dict) or "columns" not in doc:
            raise TableError("schema JSON must be an object with a 'columns' list")
        cols = []
        for entry in doc["columns"]:
            try:
                cols.append(
                    ColumnSpec(
                        entry["name"], entry["kind"], bool(entry.get("allow_missing", True))
                    )
                )
            except (KeyError, TypeError) as exc:
                raise TableError(f"bad schema column entry {entry!r}") from exc
        return cls(tuple(cols), doc.get("target"), doc.get("target_kind") or "continuous")


@dataclass(frozen=True)
class Column:
    """One named column; the unit of data that flows through transformer steps."""

    name: str
    kind: str
    values: np.ndarray
    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind == "continuous":
            if self.values.dtype != np.float64:
                object.__setattr__(self, "values", self.values.astype(np.float64))
        else:
            if self.categories is None:
                raise TableError(f"column {self.name!r}: coded column needs categories")
            if self.values.dtype != np.int64:
                object.__setattr__(self, "values", self.values.astype(np.int64))
        self.values.flags.writeable = False

    def __len__(self) -> int:
        return len(self.values)

    @property
    def missing_mask(self) -> np.ndarray:
        if self.kind == "continuous":
            return np.isnan(self.values)
        return self.values == MISSING_CODE

    def numeric(self) -> np.ndarray:
        """Float view: codes as floats, missing as NaN."""
        if self.kind == "continuous":
            return self.values
        out = self.values.astype(np.float64)
        out[self.values == MISSING_CODE] = np.nan
        return out

    def decoded(self) -> list:
        """Python values: floats/None for continuous, labels/None for coded."""
        if self.kind == "continuous":
            return [None if math.isnan(v) else float(v) for v in self.values]
        return [None if c == MISSING_CODE else self.categories[c] for c in self.values]

    def take(self, indices) -> Column:
        return Column(self.name, self.kind, self.values[np.asarray(indices)], self.categories)


@dataclass(frozen=True)
class Table:
    schema: Schema
    columns: tuple[Column, ...] = field(repr=False)

    def __post_init__(self):
        if [c.name for c in self.columns] != self.schema.names:
            raise TableError("table columns do not match schema order")
        lengths = {len(c) for c in self.columns}
        if len(lengths) > 1:
            raise TableError("ragged table: columns differ in length")
        for col, spec in zip(self.columns, self.schema.columns):
            if col.kind != spec.kind:
                raise TableError(f"column {col.name!r} kind mismatch")
            if col.kind == "continuous" and np.isinf(col.values).any():
                raise TableError(f"column {col.name!r} contains non-finite values")

    @property
    def row_count(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise TableError(f"no column named {name!r}")

    def take(self, indices) -> Table:
        return Table(self.schema, tuple(c.take(indices) for c in self.columns))

    def equals(self, other: Table) -> bool:
        """Value identity: same schema and same decoded cell values."""
        if self.schema != other.schema or self.row_count != other.row_count:
            return False
        return all(
            a.decoded() == b.decoded() for a, b in zip(self.columns, other.columns)
        )

    @property
    def target_column(self) -> Column:
        if self.schema.target is None:
            raise TableError("schema declares no target")
        return self.column(self.schema.target)


@dataclass(frozen=True)
class SplitPair:
    development: Table
    holdout: Table
    seed: int


def _intern(cells: list[str]) -> tuple[np.ndarray, tuple[str, ...]]:
    codes = np.empty(len(cells), dtype=np.int64)
    labels: dict[str, int] = {}
    for i, cell in enumerate(cells):
        if cell == "":
            codes[i] = MISSING_CODE
        else:
            codes[i] = labels.setdefault(cell, len(labels))
    return codes, tuple(labels)


def _parse_continuous(cells: list[str], name: str) -> np.ndarray:
    out = np.empty(len(cells), dtype=np.float64)
    for i, cell in enumerate(cells):
        if cell == "":
            out[i] = np.nan
            continue
        try:
            v = float(cell)
        except ValueError as exc:
            raise TableError(f"column {name!r} row {i}: unparseable value {cell!r}") from exc
        if math.isinf(v) or math.isnan(v):
            raise TableError(f"column {name!r} row {i}: non-finite literal {cell!r}")
        out[i] = v
    return out


def load_table(csv_source: bytes | str, schema: Schema) -> Table:
    """Parse CSV bytes/text against an explicit schema.

    The header must cover every schema column (extra columns are ignored);
    empty cells become missing.
    """
    text = csv_source.decode("utf-8") if isinstance(csv_source, bytes) else csv_source
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise TableError("empty CSV: header row required") from None
    positions = {}
    for name in schema.names:
        hits = [i for i, h in enumerate(header) if h == name]
        if not hits:
            raise TableError(f"CSV header missing schema column {name!r}")
        if len(hits) > 1:
            raise TableError(f"CSV header repeats column {name!r}")
        positions[name] = hits[0]

    rows = []
    for rownum, row in enumerate(reader):
        if len(row) != len(header):
            raise TableError(f"row {rownum}: expected {len(header)} fields, got {len(row)}")
        rows.append(row)

    columns = []
    for spec in schema.columns:
        cells = [r[positions[spec.name]] for r in rows]
        if spec.kind == "continuous":
            values = _parse_continuous(cells, spec.name)
            col = Column(spec.name, spec.kind, values)
        else:
            codes, labels = _intern(cells)
            col = Column(spec.name, spec.kind, codes, labels)
        if not spec.allow_missing and col.missing_mask.any():
            where = int(np.flatnonzero(col.missing_mask)[0])
            raise TableError(f"column {spec.name!r} row {where}: missing value not allowed")
        columns.append(col)
    return Table(schema, tuple(columns))


def _format_cell(col: Column, i: int) -> str:
    if col.kind == "continuous":
        v = col.values[i]
        return "" if math.isnan(v) else repr(float(v))
    code = col.values[i]
    return "" if code == MISSING_CODE else col.categories[code]


def serialize_table(table: Table) -> str:
    """Canonical CSV; load_table(serialize_table(t), t.schema) is value-identical."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.schema.names)
    for i in range(table.row_count):
        writer.writerow([_format_cell(c, i) for c in table.columns])
    return buf.getvalue()


def split(table: Table, dev_fraction: float, seed: int) -> SplitPair:
    """Seeded uniform partition; dev size = round(dev_fraction * rows).

    Rounding is floor(x + 0.5) so the result does not depend on the host's
    round-half-to-even behaviour. Rows keep their original relative order.
    """
    n = table.row_count
    if n < 2:
        raise TableError("split needs at least 2 rows")
    if not 0.0 < dev_fraction < 1.0:
        raise TableError(f"dev_fraction must be in (0,1), got {dev_fraction}")
    k = int(math.floor(dev_fraction * n + 0.5))
    order = permutation(n, seed)
    dev_idx = sorted(order[:k])
    hold_idx = sorted(order[k:])
    return SplitPair(table.take(dev_idx), table.take(hold_idx), seed)


def subsample(table: Table, n: int, seed: int) -> Table:
    """Seeded sample of n rows without replacement, in draw order."""
    if not 1 <= n <= table.row_count:
        raise TableError(f"subsample size {n} out of range 1..{table.row_count}")
    return table.take(sample_indices(table.row_count, n, seed))
