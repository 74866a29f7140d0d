"""Columnar data model and CSV ingestion.

Numeric columns hold float64 values with NaN as the missing marker.
Categorical and ordinal columns hold int32 level codes with ``MISSING``
(-1) for missing entries; level codes follow first appearance for
categorical columns and the declared order for ordinal ones.
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np

MISSING = -1
DEFAULT_NA = ("", "NA", "NaN", "?")


class DataError(ValueError):
    """Malformed input table or schema."""


class ColumnKind(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"
    ORDINAL = "ordinal"


@dataclass(frozen=True)
class ColumnSpec:
    kind: ColumnKind
    levels: tuple[str, ...] | None = None


@dataclass(frozen=True, eq=False)
class Column:
    name: str
    kind: ColumnKind
    values: np.ndarray
    levels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        self.values.setflags(write=False)

    @property
    def is_numeric(self) -> bool:
        return self.kind is ColumnKind.NUMERIC

    @property
    def is_ordered(self) -> bool:
        """True when the column is split with thresholds rather than subsets."""
        return self.kind is not ColumnKind.CATEGORICAL

    @property
    def missing(self) -> np.ndarray:
        if self.is_numeric:
            return np.isnan(self.values)
        return self.values == MISSING

    def __len__(self) -> int:
        return len(self.values)

    def format_value(self, i: int) -> str:
        v = self.values[i]
        if self.is_numeric:
            return "" if math.isnan(v) else repr(float(v))
        return "" if v == MISSING else self.levels[v]


class Dataset:
    """Immutable ordered collection of equally long columns."""

    def __init__(self, columns: Sequence[Column], row_ids: Sequence[str] | None = None):
        columns = tuple(columns)
        names = [c.name for c in columns]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise DataError(f"duplicate column names: {dupes}")
        n = len(columns[0]) if columns else (len(row_ids) if row_ids is not None else 0)
        for c in columns:
            if len(c) != n:
                raise DataError(f"column {c.name!r} has {len(c)} rows, expected {n}")
        if row_ids is None:
            row_ids = [str(i + 1) for i in range(n)]
        elif len(row_ids) != n:
            raise DataError(f"{len(row_ids)} row ids for {n} rows")
        self._columns = columns
        self._by_name = {c.name: c for c in columns}
        self.row_ids: tuple[str, ...] = tuple(str(r) for r in row_ids)
        self.n_rows = n

    @property
    def columns(self) -> tuple[Column, ...]:
        return self._columns

    @property
    def names(self) -> list[str]:
        return [c.name for c in self._columns]

    def __getitem__(self, name: str) -> Column:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"no column named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def reorder(self, names: Sequence[str]) -> Dataset:
        """Same data with columns in the given order."""
        if sorted(names) != sorted(self.names):
            raise DataError("reorder needs a permutation of the column names")
        return Dataset([self[n] for n in names], self.row_ids)

    def replace(self, column: Column) -> Dataset:
        cols = [column if c.name == column.name else c for c in self._columns]
        return Dataset(cols, self.row_ids)

    def row_fingerprint_tokens(self, i: int) -> list[str]:
        return [c.format_value(i) for c in self._columns]


def is_missing_token(token: str, na_values: Iterable[str] = DEFAULT_NA) -> bool:
    t = token.strip().upper()
    return any(t == na.upper() for na in na_values)


def _parse_real(token: str) -> float | None:
    """Float value of ``token`` or None if it is not a real literal."""
    t = token.strip()
    if "_" in t:
        return None
    try:
        return float(t)
    except ValueError:
        return None


def infer_schema(tokens: Sequence[str], na_values: Iterable[str] = DEFAULT_NA) -> ColumnKind:
    """Numeric iff every non-missing token is a real literal, else categorical."""
    na_values = tuple(na_values)
    present = [t for t in tokens if not is_missing_token(t, na_values)]
    if not present:
        raise DataError("column has no non-missing values")
    if all(_parse_real(t) is not None for t in present):
        return ColumnKind.NUMERIC
    return ColumnKind.CATEGORICAL


def _numeric_column(name: str, tokens: Sequence[str], na_values, first_line: int) -> Column:
    out = np.empty(len(tokens), dtype=np.float64)
    for i, t in enumerate(tokens):
        if is_missing_token(t, na_values):
            out[i] = np.nan
            continue
        v = _parse_real(t)
        if v is None:
            raise DataError(f"line {first_line + i}: column {name!r}: {t!r} is not numeric")
        if not math.isfinite(v):
            raise DataError(f"line {first_line + i}: column {name!r}: non-finite value {t!r}")
        out[i] = v
    return Column(name, ColumnKind.NUMERIC, out)


def _coded_column(name: str, kind: ColumnKind, tokens: Sequence[str], na_values,
                  levels: Sequence[str] | None, first_line: int) -> Column:
    codes = np.empty(len(tokens), dtype=np.int32)
    fixed = levels is not None
    lookup: dict[str, int] = {lv: k for k, lv in enumerate(levels)} if fixed else {}
    for i, t in enumerate(tokens):
        if is_missing_token(t, na_values):
            codes[i] = MISSING
            continue
        t = t.strip()
        k = lookup.get(t)
        if k is None:
            if fixed:
                raise DataError(
                    f"line {first_line + i}: column {name!r}: level {t!r} not in declared order"
                )
            k = lookup[t] = len(lookup)
        codes[i] = k
    names = tuple(levels) if fixed else tuple(sorted(lookup, key=lookup.__getitem__))
    return Column(name, kind, codes, names)


def parse_csv(
    data: bytes | str,
    schema: Mapping[str, ColumnSpec | ColumnKind] | None = None,
    na_values: Iterable[str] = DEFAULT_NA,
    id_column: str | None = None,
) -> Dataset:
    """Parse a headered CSV into a typed :class:`Dataset`.

    Args:
        data: CSV content; bytes are decoded as UTF-8 (a BOM is stripped).
        schema: optional explicit kinds per column name; other columns are
            inferred. Ordinal columns must carry their level order.
        na_values: tokens (case-insensitive, whitespace-trimmed) read as missing.
        id_column: optional column whose tokens become row labels instead of
            1-based row numbers; it is not kept as a data column.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8-sig")
    na_values = tuple(na_values)
    rows = list(csv.reader(io.StringIO(data)))
    while rows and not any(cell.strip() for cell in rows[-1]):
        rows.pop()
    if not rows:
        raise DataError("no header row")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise DataError("no data rows")
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(
                f"line {lineno}: expected {len(header)} fields, found {len(row)}"
            )
    schema = {k: (v if isinstance(v, ColumnSpec) else ColumnSpec(ColumnKind(v)))
              for k, v in (schema or {}).items()}
    unknown = sorted(set(schema) - set(header))
    if unknown:
        raise DataError(f"schema names unknown columns: {unknown}")
    if id_column is not None and id_column not in header:
        raise DataError(f"id column {id_column!r} not in header")

    row_ids = None
    columns = []
    for j, name in enumerate(header):
        tokens = [row[j] for row in body]
        if name == id_column:
            row_ids = [t.strip() for t in tokens]
            continue
        spec = schema.get(name)
        if spec is None:
            try:
                spec = ColumnSpec(infer_schema(tokens, na_values))
            except DataError as e:
                raise DataError(f"column {name!r}: {e}") from None
        if spec.kind is ColumnKind.NUMERIC:
            columns.append(_numeric_column(name, tokens, na_values, 2))
        else:
            if spec.kind is ColumnKind.ORDINAL and not spec.levels:
                raise DataError(f"ordinal column {name!r} needs an explicit level order")
            columns.append(_coded_column(name, spec.kind, tokens, na_values, spec.levels, 2))
    return Dataset(columns, row_ids)


def read_schema(text: str) -> dict[str, ColumnSpec]:
    """Parse ``name:kind[:level1<level2<...]`` lines (``#`` starts a comment)."""
    out: dict[str, ColumnSpec] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(":", 2)]
        if len(parts) < 2:
            raise DataError(f"schema line {lineno}: expected name:kind")
        name, kind_s = parts[0], parts[1].lower()
        try:
            kind = ColumnKind(kind_s)
        except ValueError:
            raise DataError(f"schema line {lineno}: unknown kind {parts[1]!r}") from None
        levels = None
        if len(parts) == 3:
            levels = tuple(lv.strip() for lv in parts[2].split("<"))
            if kind is not ColumnKind.ORDINAL:
                raise DataError(f"schema line {lineno}: only ordinal columns take levels")
            if len(set(levels)) != len(levels) or "" in levels:
                raise DataError(f"schema line {lineno}: bad level order {parts[2]!r}")
        elif kind is ColumnKind.ORDINAL:
            raise DataError(f"schema line {lineno}: ordinal column {name!r} needs levels")
        if name in out:
            raise DataError(f"schema line {lineno}: column {name!r} declared twice")
        out[name] = ColumnSpec(kind, levels)
    return out


def write_csv(dataset: Dataset) -> str:
    """Canonical CSV rendering; missing values become empty fields."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(dataset.names)
    for i in range(dataset.n_rows):
        w.writerow(dataset.row_fingerprint_tokens(i))
    return buf.getvalue()
