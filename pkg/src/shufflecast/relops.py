"""Local relational primitives: filter, hash join, grouped aggregation.

These run entirely within one worker; the exchange operators are the only
cross-worker machinery.  Aggregation output is canonically sorted by the
group keys so results compare deterministically across workers, modes,
and the single-context reference.
"""

from __future__ import annotations

import numpy as np

from .table import Column, ColumnTable, SchemaError

AGG_OPS = ("sum", "count", "min", "max", "avg")

_KEY_KINDS = ("int64", "date32", "dict")


def filter_table(table: ColumnTable, predicate: np.ndarray) -> ColumnTable:
    """Keep the rows where the boolean predicate mask is True."""
    return table.filter(np.asarray(predicate, dtype=np.bool_))


def _key_values(table: ColumnTable, name: str) -> np.ndarray:
    col = table.column(name)
    if col.kind not in _KEY_KINDS:
        raise SchemaError(f"column {name!r} of kind {col.kind} cannot be a key")
    return col.values.astype(np.int64)


def _join_codes(
    left: ColumnTable, right: ColumnTable, on: list[tuple[str, str]]
) -> tuple[np.ndarray, np.ndarray]:
    """Dense int64 codes for the join keys, consistent across both sides."""
    if not on:
        raise SchemaError("join requires at least one key pair")
    lcodes = rcodes = None
    for lname, rname in on:
        lcol, rcol = left.column(lname), right.column(rname)
        if lcol.kind != rcol.kind:
            raise SchemaError(
                f"join key type mismatch: {lname} is {lcol.kind}, {rname} is {rcol.kind}"
            )
        if lcol.kind == "dict" and lcol.dictionary != rcol.dictionary:
            raise SchemaError(f"join keys {lname}/{rname} have different dictionaries")
        lv, rv = _key_values(left, lname), _key_values(right, rname)
        uniq, codes = np.unique(np.concatenate([lv, rv]), return_inverse=True)
        lc, rc = codes[: len(lv)], codes[len(lv):]
        if lcodes is None:
            lcodes, rcodes = lc, rc
        else:
            base = len(uniq)
            lcodes = lcodes * base + lc
            rcodes = rcodes * base + rc
    return lcodes.astype(np.int64), rcodes.astype(np.int64)


def local_hash_join(
    left: ColumnTable,
    right: ColumnTable,
    on: list[tuple[str, str]],
    how: str = "inner",
) -> ColumnTable:
    """Join two local tables on equal keys.

    ``inner`` returns all left columns followed by all right columns
    (names must not collide); ``semi``/``anti`` return the left rows that
    do / do not have a match, with left columns only.
    """
    if how not in ("inner", "semi", "anti"):
        raise SchemaError(f"unknown join type {how!r}")
    lcodes, rcodes = _join_codes(left, right, on)
    if how in ("semi", "anti"):
        mask = np.isin(lcodes, rcodes)
        return left.filter(mask if how == "semi" else ~mask)

    overlap = set(left.column_names) & set(right.column_names)
    if overlap:
        raise SchemaError(f"inner join would duplicate columns: {sorted(overlap)}")
    order = np.argsort(rcodes, kind="stable")
    rsorted = rcodes[order]
    lo = np.searchsorted(rsorted, lcodes, side="left")
    hi = np.searchsorted(rsorted, lcodes, side="right")
    counts = hi - lo
    total = int(counts.sum())
    lidx = np.repeat(np.arange(len(lcodes)), counts)
    starts = np.repeat(lo, counts)
    within = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    ridx = order[starts + within]

    cols = {n: left.column(n).take(lidx) for n in left.column_names}
    cols.update({n: right.column(n).take(ridx) for n in right.column_names})
    return ColumnTable(cols)


def group_aggregate(
    table: ColumnTable,
    group_keys: list[str],
    aggs: dict[str, tuple[str, str | None]],
) -> ColumnTable:
    """Aggregate per group: ``aggs`` maps output name to (op, column).

    Ops are sum, count, min, max, avg; count ignores its column.  Output
    rows are canonically sorted by the group keys.
    """
    for out, (op, colname) in aggs.items():
        if op not in AGG_OPS:
            raise SchemaError(f"unknown aggregate {op!r} for {out!r}")
        if op != "count" and colname is None:
            raise SchemaError(f"aggregate {out!r} ({op}) needs a column")

    if group_keys:
        codes = None
        for name in group_keys:
            vals = _key_values(table, name)
            uniq, c = np.unique(vals, return_inverse=True)
            codes = c if codes is None else codes * len(uniq) + c
        uniq_codes, first_idx, inv = np.unique(
            codes, return_index=True, return_inverse=True
        )
        n_groups = len(uniq_codes)
        out_cols = {name: table.column(name).take(first_idx) for name in group_keys}
    else:
        n_groups = 1
        inv = np.zeros(table.row_count, dtype=np.int64)
        out_cols = {}

    counts = np.bincount(inv, minlength=n_groups).astype(np.int64)
    for out, (op, colname) in aggs.items():
        if op == "count":
            out_cols[out] = Column("int64", counts)
            continue
        col = table.column(colname)
        if col.kind == "dict" and op != "count":
            raise SchemaError(f"{op} not supported on dict column {colname!r}")
        vals = col.values
        if op == "sum" and col.kind != "float64":
            acc = np.zeros(n_groups, dtype=np.int64)
            np.add.at(acc, inv, vals.astype(np.int64))
            out_cols[out] = Column("int64", acc)
        elif op in ("sum", "avg"):
            acc = np.zeros(n_groups, dtype=np.float64)
            np.add.at(acc, inv, vals.astype(np.float64))
            if op == "avg":
                acc = acc / np.maximum(counts, 1)
            out_cols[out] = Column("float64", acc)
        elif op in ("min", "max"):
            if np.issubdtype(vals.dtype, np.floating):
                init = np.inf if op == "min" else -np.inf
            else:
                info = np.iinfo(vals.dtype)
                init = info.max if op == "min" else info.min
            acc = np.full(n_groups, init, dtype=vals.dtype)
            (np.minimum if op == "min" else np.maximum).at(acc, inv, vals)
            out_cols[out] = Column(
                "float64" if np.issubdtype(vals.dtype, np.floating) else col.kind, acc
            )
    result = ColumnTable(out_cols)
    return result.sort_by(group_keys) if group_keys else result
