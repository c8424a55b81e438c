"""Desk-scale TPC-H-like data: generation, partitioning, CSV round trip.

The generator produces the eight benchmark tables with only the columns
the supported queries touch, at a fractional scale factor (sf=1 is about
6M lineitem rows; desk-scale runs use sf=0.01 or so).  Text fields draw
from the benchmark's small value domains and are dictionary-encoded with
canonical dictionaries shared by every table and partition.

Skew is a Zipf exponent applied to foreign-key draws (orderkey frequency
inside lineitem, partkey, custkey).  skew=0 reproduces the benchmark's
near-uniform key frequencies; larger exponents concentrate lines on hot
keys, which is what drives partition imbalance and long-tailed shuffle
messages.

Partitioning schemes:

* ``default_keys`` -- hash each table on its conventional key (lineitem
  by l_orderkey, partsupp by ps_partkey, the rest by primary key) so the
  frequent lineitem-orders join is co-partitioned.
* ``unpartitioned`` -- contiguous row ranges, for plan-variant studies.
* ``round_robin`` -- row i to worker i mod N.
"""

from __future__ import annotations

import csv
import itertools
import json
import os
from dataclasses import dataclass

import numpy as np

from .exchange import hash_partition
from .table import (
    Column,
    ColumnTable,
    date32_col,
    date_to_days,
    dict_col,
    float64_col,
    int64_col,
)

PARTITION_SCHEMES = ("default_keys", "unpartitioned", "round_robin")

DEFAULT_PARTITION_KEYS = {
    "lineitem": "l_orderkey",
    "orders": "o_orderkey",
    "customer": "c_custkey",
    "part": "p_partkey",
    "partsupp": "ps_partkey",
    "supplier": "s_suppkey",
    "nation": "n_nationkey",
    "region": "r_regionkey",
}

RETURN_FLAGS = ("R", "A", "N")
LINE_STATUSES = ("O", "F")
SHIP_INSTRUCTS = ("DELIVER IN PERSON", "COLLECT COD", "NONE", "TAKE BACK RETURN")
SHIP_MODES = ("REG AIR", "AIR", "RAIL", "SHIP", "TRUCK", "MAIL", "FOB")
ORDER_PRIORITIES = ("1-URGENT", "2-HIGH", "3-MEDIUM", "4-NOT SPECIFIED", "5-LOW")
MARKET_SEGMENTS = ("AUTOMOBILE", "BUILDING", "FURNITURE", "MACHINERY", "HOUSEHOLD")
BRANDS = tuple(f"Brand#{m}{n}" for m in range(1, 6) for n in range(1, 6))
TYPES = tuple(
    " ".join(parts)
    for parts in itertools.product(
        ("STANDARD", "SMALL", "MEDIUM", "LARGE", "ECONOMY", "PROMO"),
        ("ANODIZED", "BURNISHED", "PLATED", "POLISHED", "BRUSHED"),
        ("TIN", "NICKEL", "BRASS", "STEEL", "COPPER"),
    )
)
CONTAINERS = tuple(
    " ".join(parts)
    for parts in itertools.product(
        ("SM", "MED", "LG", "JUMBO", "WRAP"),
        ("CASE", "BOX", "BAG", "JAR", "PKG", "PACK", "CAN", "DRUM"),
    )
)
NATION_NAMES = tuple(f"NATION_{i:02d}" for i in range(25))
REGION_NAMES = ("AFRICA", "AMERICA", "ASIA", "EUROPE", "MIDDLE EAST")

# table -> ordered (column, kind); dict columns also name their canonical domain
SCHEMAS: dict[str, list[tuple[str, str]]] = {
    "lineitem": [
        ("l_orderkey", "int64"), ("l_partkey", "int64"), ("l_quantity", "int64"),
        ("l_extendedprice", "float64"), ("l_discount", "float64"), ("l_tax", "float64"),
        ("l_returnflag", "dict"), ("l_linestatus", "dict"),
        ("l_shipdate", "date32"), ("l_commitdate", "date32"), ("l_receiptdate", "date32"),
        ("l_shipinstruct", "dict"), ("l_shipmode", "dict"),
    ],
    "orders": [
        ("o_orderkey", "int64"), ("o_custkey", "int64"), ("o_orderdate", "date32"),
        ("o_orderpriority", "dict"), ("o_shippriority", "int64"),
    ],
    "customer": [("c_custkey", "int64"), ("c_mktsegment", "dict"), ("c_nationkey", "int64")],
    "part": [
        ("p_partkey", "int64"), ("p_brand", "dict"), ("p_type", "dict"),
        ("p_size", "int64"), ("p_container", "dict"),
    ],
    "partsupp": [("ps_partkey", "int64"), ("ps_suppkey", "int64"), ("ps_supplycost", "float64")],
    "supplier": [("s_suppkey", "int64"), ("s_nationkey", "int64")],
    "nation": [("n_nationkey", "int64"), ("n_name", "dict"), ("n_regionkey", "int64")],
    "region": [("r_regionkey", "int64"), ("r_name", "dict")],
}

DICTIONARIES: dict[str, tuple[str, ...]] = {
    "l_returnflag": RETURN_FLAGS,
    "l_linestatus": LINE_STATUSES,
    "l_shipinstruct": SHIP_INSTRUCTS,
    "l_shipmode": SHIP_MODES,
    "o_orderpriority": ORDER_PRIORITIES,
    "c_mktsegment": MARKET_SEGMENTS,
    "p_brand": BRANDS,
    "p_type": TYPES,
    "p_container": CONTAINERS,
    "n_name": NATION_NAMES,
    "r_name": REGION_NAMES,
}

_MIN_ORDERDATE = date_to_days("1992-01-01")
_MAX_ORDERDATE = date_to_days("1998-08-02")
_CUTOFF_LINESTATUS = date_to_days("1995-06-17")


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    """The eight tables plus the knobs that produced them."""

    tables: dict[str, ColumnTable]
    sf: float | None = None
    skew: float = 0.0
    seed: int | None = None

    def table(self, name: str) -> ColumnTable:
        return self.tables[name]

    def row_counts(self) -> dict[str, int]:
        return {name: t.row_count for name, t in self.tables.items()}

    def manifest(self) -> dict:
        return {
            "sf": self.sf,
            "skew": self.skew,
            "seed": self.seed,
            "row_counts": self.row_counts(),
        }


def _zipf_draw(rng: np.random.Generator, n_items: int, s: float, size: int) -> np.ndarray:
    """Zipf(s) draws over keys 1..n_items (rank 1 is the hottest)."""
    p = np.arange(1, n_items + 1, dtype=np.float64) ** (-s)
    p /= p.sum()
    return rng.choice(n_items, size=size, p=p).astype(np.int64) + 1


def generate(sf: float, skew: float = 0.0, seed: int = 0) -> Dataset:
    """Deterministically generate a dataset for (sf, skew, seed)."""
    if sf <= 0:
        raise DataError(f"scale factor must be positive, got {sf}")
    if skew < 0:
        raise DataError(f"skew exponent must be >= 0, got {skew}")
    rng = np.random.default_rng(seed)
    n_orders = max(1, round(1_500_000 * sf))
    n_customers = max(1, round(150_000 * sf))
    n_parts = max(1, round(200_000 * sf))
    n_suppliers = max(1, round(10_000 * sf))

    # orders
    orderkeys = np.arange(1, n_orders + 1, dtype=np.int64)
    if skew > 0:
        custkeys = _zipf_draw(rng, n_customers, skew, n_orders)
    else:
        custkeys = rng.integers(1, n_customers + 1, size=n_orders, dtype=np.int64)
    orderdates = rng.integers(
        _MIN_ORDERDATE, _MAX_ORDERDATE + 1, size=n_orders, dtype=np.int64
    )
    orders = ColumnTable({
        "o_orderkey": int64_col(orderkeys),
        "o_custkey": int64_col(custkeys),
        "o_orderdate": date32_col(orderdates),
        "o_orderpriority": dict_col(
            rng.integers(0, len(ORDER_PRIORITIES), size=n_orders), ORDER_PRIORITIES
        ),
        "o_shippriority": int64_col(np.zeros(n_orders, dtype=np.int64)),
    })

    # lineitem: order multiplicity is uniform 1..7 when skew=0, Zipf otherwise
    if skew > 0:
        n_lines = max(1, round(6_000_000 * sf))
        l_orderkey = np.sort(_zipf_draw(rng, n_orders, skew, n_lines))
    else:
        per_order = rng.integers(1, 8, size=n_orders, dtype=np.int64)
        l_orderkey = np.repeat(orderkeys, per_order)
        n_lines = len(l_orderkey)
    if skew > 0:
        l_partkey = _zipf_draw(rng, n_parts, skew, n_lines)
    else:
        l_partkey = rng.integers(1, n_parts + 1, size=n_lines, dtype=np.int64)
    quantity = rng.integers(1, 51, size=n_lines, dtype=np.int64)
    retail = 900.0 + (l_partkey % 1000).astype(np.float64)
    odate_of_line = orderdates[l_orderkey - 1]
    shipdate = odate_of_line + rng.integers(1, 122, size=n_lines)
    commitdate = odate_of_line + rng.integers(30, 91, size=n_lines)
    receiptdate = shipdate + rng.integers(1, 31, size=n_lines)
    lineitem = ColumnTable({
        "l_orderkey": int64_col(l_orderkey),
        "l_partkey": int64_col(l_partkey),
        "l_quantity": int64_col(quantity),
        "l_extendedprice": float64_col(quantity.astype(np.float64) * retail),
        "l_discount": float64_col(rng.integers(0, 11, size=n_lines) / 100.0),
        "l_tax": float64_col(rng.integers(0, 9, size=n_lines) / 100.0),
        "l_returnflag": dict_col(rng.integers(0, len(RETURN_FLAGS), size=n_lines), RETURN_FLAGS),
        "l_linestatus": dict_col((shipdate <= _CUTOFF_LINESTATUS).astype(np.int32), LINE_STATUSES),
        "l_shipdate": date32_col(shipdate),
        "l_commitdate": date32_col(commitdate),
        "l_receiptdate": date32_col(receiptdate),
        "l_shipinstruct": dict_col(
            rng.integers(0, len(SHIP_INSTRUCTS), size=n_lines), SHIP_INSTRUCTS
        ),
        "l_shipmode": dict_col(rng.integers(0, len(SHIP_MODES), size=n_lines), SHIP_MODES),
    })

    customer = ColumnTable({
        "c_custkey": int64_col(np.arange(1, n_customers + 1)),
        "c_mktsegment": dict_col(
            rng.integers(0, len(MARKET_SEGMENTS), size=n_customers), MARKET_SEGMENTS
        ),
        "c_nationkey": int64_col(rng.integers(0, 25, size=n_customers)),
    })
    part = ColumnTable({
        "p_partkey": int64_col(np.arange(1, n_parts + 1)),
        "p_brand": dict_col(rng.integers(0, len(BRANDS), size=n_parts), BRANDS),
        "p_type": dict_col(rng.integers(0, len(TYPES), size=n_parts), TYPES),
        "p_size": int64_col(rng.integers(1, 51, size=n_parts)),
        "p_container": dict_col(rng.integers(0, len(CONTAINERS), size=n_parts), CONTAINERS),
    })
    partsupp = ColumnTable({
        "ps_partkey": int64_col(np.repeat(np.arange(1, n_parts + 1), 4)),
        "ps_suppkey": int64_col(rng.integers(1, n_suppliers + 1, size=4 * n_parts)),
        "ps_supplycost": float64_col(rng.uniform(1.0, 1000.0, size=4 * n_parts).round(2)),
    })
    supplier = ColumnTable({
        "s_suppkey": int64_col(np.arange(1, n_suppliers + 1)),
        "s_nationkey": int64_col(rng.integers(0, 25, size=n_suppliers)),
    })
    nation = ColumnTable({
        "n_nationkey": int64_col(np.arange(25)),
        "n_name": dict_col(np.arange(25), NATION_NAMES),
        "n_regionkey": int64_col(np.arange(25) % 5),
    })
    region = ColumnTable({
        "r_regionkey": int64_col(np.arange(5)),
        "r_name": dict_col(np.arange(5), REGION_NAMES),
    })

    return Dataset(
        tables={
            "lineitem": lineitem, "orders": orders, "customer": customer,
            "part": part, "partsupp": partsupp, "supplier": supplier,
            "nation": nation, "region": region,
        },
        sf=sf, skew=skew, seed=seed,
    )


@dataclass
class PartitionedDataset:
    """Per-worker table sets produced by one partitioning scheme."""

    scheme: str
    n_workers: int
    workers: list[dict[str, ColumnTable]]
    source: Dataset

    def worker_tables(self, rank: int) -> dict[str, ColumnTable]:
        return self.workers[rank]


def partition_dataset(ds: Dataset, n_workers: int, scheme: str = "default_keys") -> PartitionedDataset:
    """Assign every row of every table to exactly one worker."""
    if n_workers < 1:
        raise DataError(f"need at least one worker, got {n_workers}")
    if scheme not in PARTITION_SCHEMES:
        raise DataError(f"unknown partitioning scheme {scheme!r}; choose from {PARTITION_SCHEMES}")
    workers: list[dict[str, ColumnTable]] = [{} for _ in range(n_workers)]
    for name, table in ds.tables.items():
        if scheme == "default_keys":
            parts = hash_partition(table, [DEFAULT_PARTITION_KEYS[name]], n_workers)
        elif scheme == "unpartitioned":
            bounds = np.linspace(0, table.row_count, n_workers + 1).astype(np.int64)
            parts = [table.take(np.arange(bounds[i], bounds[i + 1])) for i in range(n_workers)]
        else:  # round_robin
            idx = np.arange(table.row_count)
            parts = [table.take(idx[idx % n_workers == r]) for r in range(n_workers)]
        for rank in range(n_workers):
            workers[rank][name] = parts[rank]
    return PartitionedDataset(scheme, n_workers, workers, ds)


# -- CSV ---------------------------------------------------------------------


def write_csv(ds: Dataset, out_dir: str) -> None:
    """One RFC-4180 CSV per table plus a manifest.json."""
    os.makedirs(out_dir, exist_ok=True)
    for name, table in ds.tables.items():
        path = os.path.join(out_dir, f"{name}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(table.column_names)
            decoded = [table.column(c).decoded() for c in table.column_names]
            kinds = [table.column(c).kind for c in table.column_names]
            for i in range(table.row_count):
                writer.writerow([
                    repr(col[i]) if kind == "float64" else col[i]
                    for col, kind in zip(decoded, kinds)
                ])
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(ds.manifest(), fh, indent=2)


def _parse_column(name: str, kind: str, raw: list[str], path: str, header_offset: int) -> Column:
    def fail(row_idx: int, msg: str):
        raise DataError(f"{path}:{row_idx + header_offset + 1}: column {name!r}: {msg}")

    if kind == "int64":
        out = np.empty(len(raw), dtype=np.int64)
        for i, cell in enumerate(raw):
            try:
                out[i] = int(cell)
            except ValueError:
                fail(i, f"bad integer {cell!r}")
        return Column("int64", out)
    if kind == "float64":
        out = np.empty(len(raw), dtype=np.float64)
        for i, cell in enumerate(raw):
            try:
                out[i] = float(cell)
            except ValueError:
                fail(i, f"bad float {cell!r}")
        return Column("float64", out)
    if kind == "date32":
        out = np.empty(len(raw), dtype=np.int32)
        for i, cell in enumerate(raw):
            try:
                out[i] = date_to_days(cell)
            except Exception:
                fail(i, f"bad date {cell!r} (want YYYY-MM-DD)")
        return Column("date32", out)
    # dict: start from the canonical dictionary, extend with unseen values
    base = DICTIONARIES.get(name, ())
    index = {s: i for i, s in enumerate(base)}
    extra: list[str] = []
    codes = np.empty(len(raw), dtype=np.int32)
    for i, cell in enumerate(raw):
        code = index.get(cell)
        if code is None:
            code = len(base) + len(extra)
            index[cell] = code
            extra.append(cell)
        codes[i] = code
    return Column("dict", codes, tuple(base) + tuple(extra))


def load_csv(paths: dict[str, str]) -> Dataset:
    """Load tables from CSV files with headers; types come from the schema registry.

    ``paths`` maps table names to file paths.  Malformed cells are
    reported with their file and line number.
    """
    tables: dict[str, ColumnTable] = {}
    for name, path in paths.items():
        if name not in SCHEMAS:
            raise DataError(f"unknown table {name!r}; registry has {sorted(SCHEMAS)}")
        schema = dict(SCHEMAS[name])
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}:1: empty file, expected a header row") from None
            missing = [c for c in schema if c not in header]
            if missing:
                raise DataError(f"{path}:1: missing required columns {missing}")
            rows = list(reader)
        for lineno, row in enumerate(rows, start=2):
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
        col_raw = {
            col: [row[i] for row in rows]
            for i, col in enumerate(header) if col in schema
        }
        tables[name] = ColumnTable({
            col: _parse_column(col, kind, col_raw[col], path, 1)
            for col, kind in SCHEMAS[name]
        })
    return Dataset(tables=tables)


def load_csv_dir(directory: str) -> Dataset:
    """Load every registry table that has a CSV file in ``directory``."""
    paths = {
        name: os.path.join(directory, f"{name}.csv")
        for name in SCHEMAS
        if os.path.exists(os.path.join(directory, f"{name}.csv"))
    }
    if not paths:
        raise DataError(f"no recognized table CSVs in {directory}")
    ds = load_csv(paths)
    manifest = os.path.join(directory, "manifest.json")
    if os.path.exists(manifest):
        with open(manifest) as fh:
            meta = json.load(fh)
        ds.sf = meta.get("sf")
        ds.skew = meta.get("skew", 0.0)
        ds.seed = meta.get("seed")
    return ds
