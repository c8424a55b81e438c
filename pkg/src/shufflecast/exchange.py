"""Table-level shuffle and broadcast exchange operators.

Shuffle repartitions a distributed table so every row lands on the worker
chosen by a hash of its key columns; the global multiset of rows is
conserved.  Broadcast replicates every worker's partition to all workers,
yielding the full table everywhere in rank order.

Both operators move one column at a time.  A zero-cost size-exchange
phase first announces per-sender row counts so receivers can build each
incoming column contiguously, writing every sender's slice at its
exclusive-prefix offset.  Zero-length sends are still posted to keep
group matching uniform across workers.

Partitioning uses 64-bit Fibonacci (multiplicative) hashing with a fixed
constant so that every worker routes identical keys identically; the
partitioning function must agree across the cluster or co-location breaks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .collectives import GroupOp, group_execute
from .table import Column, ColumnTable, SchemaError
from .transport import Endpoint, ProtocolError

# 2^64 / golden ratio, the usual Fibonacci hashing multiplier.
_FIB64 = np.uint64(0x9E3779B97F4A7C15)

_HASHABLE_KINDS = ("int64", "date32", "dict")


def hash_keys(table: ColumnTable, key_columns: list[str]) -> np.ndarray:
    """Deterministic 64-bit hash of one or more integer-backed key columns."""
    if not key_columns:
        raise SchemaError("at least one key column is required")
    acc = np.zeros(table.row_count, dtype=np.uint64)
    for name in key_columns:
        col = table.column(name)
        if col.kind not in _HASHABLE_KINDS:
            raise SchemaError(
                f"column {name!r} of kind {col.kind} is not hashable; "
                f"keys must be one of {_HASHABLE_KINDS}"
            )
        vals = col.values.astype(np.uint64)
        acc = (acc ^ (vals * _FIB64)) * _FIB64
    return acc


def partition_indices(buckets: np.ndarray, n_parts: int) -> list[np.ndarray]:
    """Row indices per bucket, preserving input order within each part."""
    order = np.argsort(buckets, kind="stable")
    bounds = np.searchsorted(buckets[order], np.arange(n_parts + 1, dtype=buckets.dtype))
    return [order[bounds[i]:bounds[i + 1]] for i in range(n_parts)]


def hash_partition(
    table: ColumnTable, key_columns: list[str], n_parts: int
) -> list[ColumnTable]:
    """Split a table into ``n_parts`` by hash of the key columns.

    Row r goes to part hash(keys[r]) mod n_parts; concatenating the parts
    is a permutation of the input.  Identical on every worker.
    """
    if n_parts < 1:
        raise ValueError("n_parts must be >= 1")
    buckets = hash_keys(table, key_columns) % np.uint64(n_parts)
    return [table.take(idx) for idx in partition_indices(buckets, n_parts)]


def size_exchange(ep: Endpoint, my_row) -> tuple[np.ndarray, np.ndarray]:
    """All-to-all announcement of outgoing sizes; returns what will arrive.

    ``my_row[j]`` is the size (rows or bytes) this worker sends to rank j.
    Returns ``(incoming, offsets)`` where ``incoming[i]`` is what rank i
    will send here and ``offsets`` is its exclusive prefix sum, ready for
    contiguous assembly.  Metadata only: charged zero simulated time.
    """
    row = np.asarray(my_row, dtype=np.int64)

    def commit(slots: list[np.ndarray]) -> np.ndarray:
        n = len(slots)
        for rank, s in enumerate(slots):
            if s.shape != (n,):
                raise ProtocolError(
                    f"size exchange shape mismatch at rank {rank}: "
                    f"{s.shape} for a {n}-worker cluster"
                )
        return np.vstack(slots)  # the N x N size matrix

    matrix = ep.cluster.rendezvous(ep.rank, "size_exchange", row, commit)
    incoming = matrix[:, ep.rank].copy()
    offsets = np.zeros(len(incoming), dtype=np.int64)
    np.cumsum(incoming[:-1], out=offsets[1:])
    return incoming, offsets


@dataclass
class ExchangeStats:
    """What one worker contributed to an exchange, for instrumentation.

    ``messages`` holds per-destination per-column payload bytes actually
    sent to other GPUs (self-transfers and empty sends excluded);
    ``table_bytes`` is this worker's full partition size including the
    part that stays local, which is what the analytical models call S.
    """

    messages: list[int] = field(default_factory=list)
    table_bytes: int = 0


def _schema_signature(table: ColumnTable) -> tuple:
    return tuple(
        (name, col.kind, col.dictionary) for name, col in table.columns.items()
    )


def _check_same_schema(ep: Endpoint, table: ColumnTable, label: str) -> None:
    sig = _schema_signature(table)

    def commit(slots):
        if len(set(slots)) > 1:
            raise SchemaError(f"{label}: schema mismatch across workers")
        return None

    ep.cluster.rendezvous(ep.rank, f"schema:{label}", sig, commit)


def shuffle_table(
    ep: Endpoint,
    table: ColumnTable,
    key_columns: list[str],
    stats: ExchangeStats | None = None,
) -> ColumnTable:
    """Redistribute rows so worker j holds exactly hash(key) mod N == j.

    One group of N sends and N receives (self-transfer included) per
    column, assembled contiguously at the offsets announced by the size
    exchange.
    """
    n = ep.n
    _check_same_schema(ep, table, "shuffle")
    buckets = hash_keys(table, key_columns) % np.uint64(n)
    parts = partition_indices(buckets, n)
    out_rows = np.asarray([len(p) for p in parts], dtype=np.int64)
    in_rows, _ = size_exchange(ep, out_rows)
    total_in = int(in_rows.sum())

    out_cols: dict[str, Column] = {}
    for name in table.column_names:
        col = table.column(name)
        slices = [np.ascontiguousarray(col.values[idx]) for idx in parts]
        ops = [GroupOp("send", dst, payload=slices[dst]) for dst in range(n)]
        ops += [
            GroupOp("recv", src, nbytes=int(in_rows[src]) * col.itemsize)
            for src in range(n)
        ]
        received = group_execute(ep, ops)[n:]
        merged = np.empty(total_in, dtype=col.values.dtype)
        off = 0
        for src in range(n):
            cnt = int(in_rows[src])
            merged[off:off + cnt] = received[src]
            off += cnt
        out_cols[name] = Column(col.kind, merged, col.dictionary)
        if stats is not None:
            stats.messages.extend(
                s.nbytes for dst, s in enumerate(slices)
                if dst != ep.rank and s.nbytes > 0
            )
            stats.table_bytes += col.nbytes
    return ColumnTable(out_cols)


def _union_dictionaries(dicts: list[tuple[str, ...]]) -> tuple[tuple[str, ...], list[np.ndarray]]:
    """Merged dictionary (rank order, first seen wins) plus per-rank code remaps."""
    union: list[str] = []
    index: dict[str, int] = {}
    remaps = []
    for d in dicts:
        remap = np.empty(len(d), dtype=np.int32)
        for i, s in enumerate(d):
            code = index.get(s)
            if code is None:
                code = len(union)
                index[s] = code
                union.append(s)
            remap[i] = code
        remaps.append(remap)
    return tuple(union), remaps


def broadcast_table(
    ep: Endpoint,
    table: ColumnTable,
    stats: ExchangeStats | None = None,
    use_p2p: bool = False,
) -> ColumnTable:
    """Replicate every worker's partition to all workers, rank-ordered.

    Implemented as N collective broadcasts (one per root) inside one group
    per column; per-worker row counts may differ.  Dictionary-encoded
    columns concatenate their codes; dictionaries are reconciled once per
    root up front, and only when they actually differ.

    With ``use_p2p`` each root instead issues N-1 grouped point-to-point
    sends, which ships the same bytes over the network once per remote GPU
    rather than once per remote node.  Functionally identical; kept to
    quantify that cost.
    """
    n = ep.n
    names = table.column_names
    kinds = tuple((name, table.column(name).kind) for name in names)

    def commit_schemas(slots):
        if len({s[0] for s in slots}) > 1:
            raise SchemaError("broadcast: schema mismatch across workers")
        merged: dict[str, tuple] = {}
        for name, kind in slots[0][0]:
            if kind != "dict":
                continue
            dicts = [s[1][name] for s in slots]
            if len(set(dicts)) == 1:
                merged[name] = (dicts[0], None)
            else:
                merged[name] = _union_dictionaries(dicts)
        return merged

    own_dicts = {
        name: table.column(name).dictionary
        for name in names
        if table.column(name).kind == "dict"
    }
    merged_dicts = ep.cluster.rendezvous(
        ep.rank, "broadcast_dicts", (kinds, own_dicts), commit_schemas
    )

    all_rows, _ = size_exchange(ep, np.full(n, table.row_count, dtype=np.int64))
    counts = [int(all_rows[r]) for r in range(n)]

    out_cols: dict[str, Column] = {}
    for name in names:
        col = table.column(name)
        own = np.ascontiguousarray(col.values)
        dictionary = col.dictionary
        if col.kind == "dict":
            dictionary, remaps = merged_dicts[name]
            if remaps is not None:
                own = remaps[ep.rank][own]
        if use_p2p:
            ops = [GroupOp("send", dst, payload=own) for dst in range(n) if dst != ep.rank]
            ops += [
                GroupOp("recv", src, nbytes=counts[src] * col.itemsize)
                for src in range(n) if src != ep.rank
            ]
            results = group_execute(ep, ops)
            received = {src: results[n - 1 + i] for i, src in
                        enumerate(s for s in range(n) if s != ep.rank)}
            received[ep.rank] = own
            received = [received[root] for root in range(n)]
        else:
            ops = [
                GroupOp(
                    "bcast",
                    root,
                    payload=own if root == ep.rank else None,
                    nbytes=None if root == ep.rank else counts[root] * col.itemsize,
                )
                for root in range(n)
            ]
            received = group_execute(ep, ops)
        merged = np.concatenate(
            [np.asarray(received[root], dtype=col.values.dtype) for root in range(n)]
        )
        out_cols[name] = Column(col.kind, merged, dictionary)
        if stats is not None:
            # Each worker records what it sent as root, so the union over
            # workers lists every broadcast message exactly once.
            if own.nbytes > 0:
                copies = (n - 1) if use_p2p else (1 if n > 1 else 0)
                stats.messages.extend([own.nbytes] * copies)
            stats.table_bytes += col.nbytes
    return ColumnTable(out_cols)
