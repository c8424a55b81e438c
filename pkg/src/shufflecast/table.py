"""Columnar tables: named, typed numpy columns of equal length.

Supported column kinds:

* ``int64``  -- 64-bit integers (keys, counts, quantities)
* ``float64`` -- doubles (prices, discounts; decimals are loaded as floats)
* ``date32`` -- days since 1970-01-01 as int32
* ``dict``   -- dictionary-encoded strings: int32 codes plus a shared
  tuple-of-str dictionary.  Only the fixed-width codes ever move during an
  exchange; dictionaries ride along by reference.

Tables are value-like: operations return new tables, columns are never
mutated in place.  No null semantics.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

_EPOCH = date(1970, 1, 1)

NUMPY_DTYPES = {
    "int64": np.int64,
    "float64": np.float64,
    "date32": np.int32,
    "dict": np.int32,  # codes
}


class SchemaError(ValueError):
    """Column/type mismatches."""


def date_to_days(iso: str) -> int:
    y, m, d = iso.split("-")
    return (date(int(y), int(m), int(d)) - _EPOCH).days


def days_to_date(days: int) -> str:
    return (_EPOCH + timedelta(days=int(days))).isoformat()


@dataclass(frozen=True)
class Column:
    kind: str
    values: np.ndarray
    dictionary: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in NUMPY_DTYPES:
            raise SchemaError(f"unknown column kind {self.kind!r}")
        expected = NUMPY_DTYPES[self.kind]
        if self.values.dtype != expected:
            object.__setattr__(self, "values", self.values.astype(expected))
        if self.kind == "dict":
            if self.dictionary is None:
                raise SchemaError("dict column requires a dictionary")
            if self.values.size and (
                self.values.min() < 0 or self.values.max() >= len(self.dictionary)
            ):
                raise SchemaError("dictionary codes out of range")
        elif self.dictionary is not None:
            raise SchemaError(f"{self.kind} column must not carry a dictionary")

    @property
    def nbytes(self) -> int:
        return int(self.values.nbytes)

    @property
    def itemsize(self) -> int:
        return int(self.values.itemsize)

    def take(self, idx: np.ndarray) -> "Column":
        return Column(self.kind, self.values[idx], self.dictionary)

    def decoded(self) -> np.ndarray:
        """Strings for dict columns, ISO dates for date32, values otherwise."""
        if self.kind == "dict":
            return np.asarray(self.dictionary, dtype=object)[self.values]
        if self.kind == "date32":
            return np.asarray([days_to_date(d) for d in self.values], dtype=object)
        return self.values


def int64_col(values) -> Column:
    return Column("int64", np.asarray(values, dtype=np.int64))


def float64_col(values) -> Column:
    return Column("float64", np.asarray(values, dtype=np.float64))


def date32_col(values) -> Column:
    return Column("date32", np.asarray(values, dtype=np.int32))


def dict_col(codes, dictionary: tuple[str, ...]) -> Column:
    return Column("dict", np.asarray(codes, dtype=np.int32), tuple(dictionary))


def dict_col_from_strings(strings) -> Column:
    """Encode a string sequence, building the dictionary in first-seen order."""
    dictionary: list[str] = []
    index: dict[str, int] = {}
    codes = np.empty(len(strings), dtype=np.int32)
    for i, s in enumerate(strings):
        code = index.get(s)
        if code is None:
            code = len(dictionary)
            index[s] = code
            dictionary.append(s)
        codes[i] = code
    return Column("dict", codes, tuple(dictionary))


class ColumnTable:
    """An immutable bag of equal-length named columns."""

    def __init__(self, columns: dict[str, Column]):
        lengths = {len(c.values) for c in columns.values()}
        if len(lengths) > 1:
            raise SchemaError(f"ragged columns: { {n: len(c.values) for n, c in columns.items()} }")
        self._columns = dict(columns)
        self._rows = lengths.pop() if lengths else 0

    @property
    def row_count(self) -> int:
        return self._rows

    @property
    def column_names(self) -> list[str]:
        return list(self._columns)

    @property
    def columns(self) -> dict[str, Column]:
        return self._columns

    @property
    def nbytes(self) -> int:
        return sum(c.nbytes for c in self._columns.values())

    def column(self, name: str) -> Column:
        try:
            return self._columns[name]
        except KeyError:
            raise SchemaError(f"unknown column {name!r}; have {self.column_names}") from None

    def __getitem__(self, name: str) -> np.ndarray:
        return self.column(name).values

    def __contains__(self, name: str) -> bool:
        return name in self._columns

    def schema(self) -> dict[str, str]:
        return {n: c.kind for n, c in self._columns.items()}

    def select(self, names: list[str]) -> "ColumnTable":
        return ColumnTable({n: self.column(n) for n in names})

    def with_column(self, name: str, col: Column) -> "ColumnTable":
        cols = dict(self._columns)
        cols[name] = col
        return ColumnTable(cols)

    def rename(self, mapping: dict[str, str]) -> "ColumnTable":
        return ColumnTable({mapping.get(n, n): c for n, c in self._columns.items()})

    def take(self, idx: np.ndarray) -> "ColumnTable":
        return ColumnTable({n: c.take(idx) for n, c in self._columns.items()})

    def filter(self, mask: np.ndarray) -> "ColumnTable":
        if mask.dtype != np.bool_ or len(mask) != self._rows:
            raise SchemaError("filter mask must be boolean and row-aligned")
        return self.take(np.flatnonzero(mask))

    def head(self, n: int) -> "ColumnTable":
        return self.take(np.arange(min(n, self._rows)))

    def empty_like(self) -> "ColumnTable":
        return self.take(np.empty(0, dtype=np.int64))

    def isin(self, name: str, values: list[str]) -> np.ndarray:
        """Boolean mask for dict-column membership in a set of strings."""
        col = self.column(name)
        if col.kind != "dict":
            raise SchemaError(f"isin expects a dict column, {name} is {col.kind}")
        wanted = {s for s in values}
        codes = [i for i, s in enumerate(col.dictionary) if s in wanted]
        return np.isin(col.values, np.asarray(codes, dtype=np.int32))

    def decode_rows(self) -> list[tuple]:
        cols = [c.decoded() for c in self._columns.values()]
        return [tuple(col[i] for col in cols) for i in range(self._rows)]

    def sort_by(self, names: list[str], descending: set[str] | None = None) -> "ColumnTable":
        """Stable sort by decoded column values; dict columns sort as strings."""
        descending = descending or set()
        keys = []
        for name in reversed(names):  # lexsort: last key is primary
            col = self.column(name)
            if col.kind == "dict":
                rank = np.empty(len(col.dictionary), dtype=np.int64)
                rank[np.argsort(np.asarray(col.dictionary, dtype=object))] = np.arange(
                    len(col.dictionary)
                )
                key = rank[col.values]
            else:
                key = col.values
            keys.append(-key if name in descending else key)
        idx = np.lexsort(keys) if keys else np.arange(self._rows)
        return self.take(idx)

    def __repr__(self) -> str:
        return f"ColumnTable({self.schema()}, rows={self._rows})"


def concat_tables(tables: list[ColumnTable]) -> ColumnTable:
    """Concatenate row-wise; schemas (and dict dictionaries) must agree."""
    tables = [t for t in tables]
    if not tables:
        raise SchemaError("cannot concatenate zero tables")
    first = tables[0]
    for t in tables[1:]:
        if t.schema() != first.schema():
            raise SchemaError(f"schema mismatch: {t.schema()} vs {first.schema()}")
    out = {}
    for name, col in first.columns.items():
        parts = [t.column(name) for t in tables]
        if col.kind == "dict":
            dicts = {p.dictionary for p in parts}
            if len(dicts) > 1:
                raise SchemaError(f"column {name!r} has diverging dictionaries")
        out[name] = Column(
            col.kind, np.concatenate([p.values for p in parts]), col.dictionary
        )
    return ColumnTable(out)


def tables_equal(a: ColumnTable, b: ColumnTable) -> bool:
    if a.schema() != b.schema() or a.row_count != b.row_count:
        return False
    for name, col in a.columns.items():
        other = b.column(name)
        if col.kind == "dict" and col.dictionary != other.dictionary:
            return False
        if not np.array_equal(col.values, other.values):
            return False
    return True
