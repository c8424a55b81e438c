"""SPMD query executor, reference oracle, and run instrumentation.

Every worker runs the same plan function over its own partition,
coordinating only through the exchange operators and collectives
(`WorkerContext`).  The same plan function also runs in a single context
over the unpartitioned dataset (`LocalContext`), where every exchange is
the identity; that execution is the correctness oracle.

Instrumentation follows the barrier method: barriers bracket the whole
query and every exchange operator, so the run time splits exactly into
compute, shuffle, and broadcast (compute is the remainder).  In simulated
mode only exchanges advance the clock, so compute_s is zero and the
breakdown is exact by construction.  Exchange counts exclude the final
gather and any all-reduce used for final aggregation.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
import weakref
from dataclasses import dataclass, field

import numpy as np

from .collectives import all_reduce, barrier
from .data import DEFAULT_PARTITION_KEYS, Dataset, PartitionedDataset, partition_dataset
from .exchange import ExchangeStats, broadcast_table, shuffle_table
from .queries import PLAN_FUNCTIONS, SUPPORTED_QUERIES
from .relops import filter_table, group_aggregate, local_hash_join
from .table import Column, ColumnTable
from .transport import MODE_SIMULATED, Cluster, Endpoint, run_workers


class PlanError(ValueError):
    """Unsupported query/variant or a plan-vs-partitioning mismatch."""


@dataclass(frozen=True)
class ExchangePlan:
    """Declarative shape of one query plan variant.

    ``steps`` use a small vocabulary: ``scan:<table>``, ``filter``,
    ``shuffle:<key>``, ``broadcast:<side>``, ``local_hash_join:<prep>``
    (prep names how the join inputs were aligned), ``group_aggregate``,
    ``final_gather``.  ``requires_co_partition`` lists (table, key) pairs
    that must already hold in the input partitioning; they are what makes
    a plan reject mismatched data instead of silently answering wrong.
    """

    query_id: str
    variant: str
    steps: tuple[str, ...]
    expected_exchanges: tuple[int, int]  # (shuffles, broadcasts)
    requires_co_partition: tuple[tuple[str, str], ...] = ()

    def validate(self) -> None:
        gathers = [s for s in self.steps if s == "final_gather"]
        if len(gathers) != 1 or self.steps[-1] != "final_gather":
            raise PlanError(f"{self.query_id}/{self.variant}: need exactly one final_gather, last")
        for step in self.steps:
            if step.startswith("local_hash_join:"):
                prep = step.split(":", 1)[1]
                if prep not in ("co_partitioned", "shuffle", "broadcast"):
                    raise PlanError(f"{self.query_id}: join without a valid alignment: {prep}")
                if prep == "co_partitioned" and not self.requires_co_partition:
                    raise PlanError(
                        f"{self.query_id}/{self.variant}: co-partitioned join "
                        "must state its partitioning requirement"
                    )


EXCHANGE_PLANS: dict[tuple[str, str], ExchangePlan] = {}


def _register(plan: ExchangePlan) -> None:
    plan.validate()
    EXCHANGE_PLANS[(plan.query_id, plan.variant)] = plan


_register(ExchangePlan(
    "Q1", "default",
    ("scan:lineitem", "filter", "group_aggregate", "final_gather"),
    (0, 0),
))
_register(ExchangePlan(
    "Q3", "default",
    ("scan:customer", "filter", "broadcast:customer", "scan:orders", "filter",
     "local_hash_join:broadcast", "scan:lineitem", "filter",
     "local_hash_join:co_partitioned", "group_aggregate", "final_gather"),
    (0, 1),
    requires_co_partition=(("lineitem", "l_orderkey"), ("orders", "o_orderkey")),
))
_register(ExchangePlan(
    "Q6", "default",
    ("scan:lineitem", "filter", "group_aggregate", "final_gather"),
    (0, 0),
))
_register(ExchangePlan(
    "Q12", "default",
    ("scan:lineitem", "filter", "scan:orders", "local_hash_join:co_partitioned",
     "group_aggregate", "final_gather"),
    (0, 0),
    requires_co_partition=(("lineitem", "l_orderkey"), ("orders", "o_orderkey")),
))
_register(ExchangePlan(
    "Q12", "pa",
    ("scan:lineitem", "filter", "shuffle:l_orderkey", "scan:orders",
     "shuffle:o_orderkey", "local_hash_join:shuffle", "group_aggregate",
     "final_gather"),
    (2, 0),
))
_register(ExchangePlan(
    "Q12", "pb",
    ("scan:lineitem", "filter", "broadcast:lineitem", "scan:orders",
     "local_hash_join:broadcast", "group_aggregate", "final_gather"),
    (0, 1),
))
_register(ExchangePlan(
    "Q14", "default",
    ("scan:lineitem", "filter", "shuffle:l_partkey", "scan:part",
     "local_hash_join:shuffle", "group_aggregate", "final_gather"),
    (1, 0),
    requires_co_partition=(("part", "p_partkey"),),
))
_register(ExchangePlan(
    "Q19", "default",
    ("scan:part", "filter", "broadcast:part", "scan:lineitem", "filter",
     "local_hash_join:broadcast", "filter", "group_aggregate", "final_gather"),
    (0, 1),
))


def get_plan(qid: str, variant: str) -> ExchangePlan:
    plan = EXCHANGE_PLANS.get((qid, variant))
    if plan is None:
        known = sorted({q for q, _ in EXCHANGE_PLANS})
        raise PlanError(f"no plan for query {qid!r} variant {variant!r}; queries: {known}")
    return plan


@dataclass
class RunReport:
    """Per-query instrumentation; to_json() emits exactly the typed fields."""

    query_id: str
    variant: str
    mode: str
    compute_s: float
    shuffle_s: float
    broadcast_s: float
    shuffle_msgs: list[int]
    broadcast_msgs: list[int]
    peak_bytes: list[int]
    result_digest: str
    exchange_counts: tuple[int, int]
    shuffle_bytes: int = 0  # model-facing totals (S_s, S_b), incl. local shares
    broadcast_bytes: int = 0

    @property
    def total_s(self) -> float:
        return self.compute_s + self.shuffle_s + self.broadcast_s

    def to_json(self) -> str:
        return json.dumps(
            {
                "compute_s": self.compute_s,
                "shuffle_s": self.shuffle_s,
                "broadcast_s": self.broadcast_s,
                "shuffle_msgs": self.shuffle_msgs,
                "broadcast_msgs": self.broadcast_msgs,
                "peak_bytes": self.peak_bytes,
                "result_digest": self.result_digest,
                "exchange_counts": list(self.exchange_counts),
            },
            indent=2,
        )


def result_digest(table: ColumnTable | None) -> str:
    """Order-insensitive hash of result rows; floats at 9 significant digits."""
    if table is None:
        return "empty"
    lines = []
    decoded = [table.column(n).decoded() for n in table.column_names]
    kinds = [table.column(n).kind for n in table.column_names]
    for i in range(table.row_count):
        cells = [
            f"{col[i]:.9e}" if kind == "float64" else str(col[i])
            for col, kind in zip(decoded, kinds)
        ]
        lines.append("|".join(cells))
    lines.sort()
    payload = "\n".join([",".join(table.column_names)] + lines)
    return hashlib.sha256(payload.encode()).hexdigest()


class _MemoryMeter:
    """High-water mark of live tracked table bytes, via GC finalizers."""

    def __init__(self) -> None:
        self.live = 0
        self.peak = 0
        self._lock = threading.Lock()

    def track(self, table: ColumnTable) -> ColumnTable:
        nbytes = table.nbytes
        with self._lock:
            self.live += nbytes
            self.peak = max(self.peak, self.live)
        weakref.finalize(table, self._release, nbytes)
        return table

    def _release(self, nbytes: int) -> None:
        with self._lock:
            self.live -= nbytes


class LocalContext:
    """Single-context execution over full tables; exchanges are identity."""

    is_root = True

    def __init__(self, tables: dict[str, ColumnTable], variant: str = "default"):
        self.tables = tables
        self.variant = variant

    def table(self, name: str) -> ColumnTable:
        return self.tables[name]

    def filter(self, t, mask):
        return filter_table(t, mask)

    def join(self, left, right, on, how="inner"):
        return local_hash_join(left, right, on, how)

    def group(self, t, keys, aggs):
        return group_aggregate(t, keys, aggs)

    def add_column(self, t, name, col: Column):
        return t.with_column(name, col)

    def shuffle(self, t, keys):
        return t

    def broadcast(self, t):
        return t

    def all_reduce_sum(self, vec: np.ndarray) -> np.ndarray:
        return np.asarray(vec, dtype=np.float64)

    def gather(self, t):
        return t

    def require_co_partitioned(self, *tables) -> None:
        pass  # a single context is trivially co-located


class WorkerContext:
    """One worker's view: its partition, exchanges, and instrumentation."""

    def __init__(
        self,
        ep: Endpoint,
        tables: dict[str, ColumnTable],
        variant: str,
        scheme: str,
        p2p_broadcast: bool = False,
    ):
        self.ep = ep
        self.tables = tables
        self.variant = variant
        self.scheme = scheme
        self.p2p_broadcast = p2p_broadcast
        self.meter = _MemoryMeter()
        for t in tables.values():
            self.meter.track(t)
        self.shuffle_s = 0.0
        self.broadcast_s = 0.0
        self.shuffle_msgs: list[int] = []
        self.broadcast_msgs: list[int] = []
        self.shuffle_bytes = 0
        self.broadcast_bytes = 0
        self.n_shuffles = 0
        self.n_broadcasts = 0

    @property
    def is_root(self) -> bool:
        return self.ep.rank == 0

    def now(self) -> float:
        return self.ep.clock if self.ep.simulated else time.perf_counter()

    def table(self, name: str) -> ColumnTable:
        return self.tables[name]

    def filter(self, t, mask):
        return self.meter.track(filter_table(t, mask))

    def join(self, left, right, on, how="inner"):
        return self.meter.track(local_hash_join(left, right, on, how))

    def group(self, t, keys, aggs):
        return self.meter.track(group_aggregate(t, keys, aggs))

    def add_column(self, t, name, col: Column):
        return self.meter.track(t.with_column(name, col))

    def require_co_partitioned(self, *tables) -> None:
        if self.scheme != "default_keys":
            raise PlanError(
                f"plan needs co-partitioned {tables}, but data is partitioned "
                f"as {self.scheme!r}"
            )

    def shuffle(self, t: ColumnTable, keys: list[str]) -> ColumnTable:
        barrier(self.ep)
        t0 = self.now()
        stats = ExchangeStats()
        out = shuffle_table(self.ep, t, keys, stats)
        barrier(self.ep)
        self.shuffle_s += self.now() - t0
        self.shuffle_msgs.extend(stats.messages)
        self.shuffle_bytes += stats.table_bytes
        self.n_shuffles += 1
        return self.meter.track(out)

    def broadcast(self, t: ColumnTable) -> ColumnTable:
        barrier(self.ep)
        t0 = self.now()
        stats = ExchangeStats()
        out = broadcast_table(self.ep, t, stats, use_p2p=self.p2p_broadcast)
        barrier(self.ep)
        self.broadcast_s += self.now() - t0
        self.broadcast_msgs.extend(stats.messages)
        self.broadcast_bytes += stats.table_bytes
        self.n_broadcasts += 1
        return self.meter.track(out)

    def all_reduce_sum(self, vec: np.ndarray) -> np.ndarray:
        return all_reduce(self.ep, np.asarray(vec, dtype=np.float64), "sum")

    def gather(self, t: ColumnTable) -> ColumnTable | None:
        """Collect partials at rank 0; charged as plain (zero-cost) sends."""
        n = self.ep.n
        if n == 1:
            return t
        names = t.column_names
        if self.ep.rank != 0:
            for name in names:
                self.ep.send(0, np.ascontiguousarray(t.column(name).values), tag=1)
            return None
        parts = [t]
        for src in range(1, n):
            cols = {}
            for name in names:
                ref = t.column(name)
                arr = np.asarray(self.ep.recv(src, tag=1), dtype=ref.values.dtype)
                cols[name] = Column(ref.kind, arr, ref.dictionary)
            parts.append(ColumnTable(cols))
        from .table import concat_tables

        return self.meter.track(concat_tables(parts))


@dataclass
class _WorkerOutcome:
    result: ColumnTable | None
    total_s: float
    shuffle_s: float
    broadcast_s: float
    shuffle_msgs: list[int]
    broadcast_msgs: list[int]
    shuffle_bytes: int
    broadcast_bytes: int
    peak_bytes: int
    counts: tuple[int, int]


def run_query(
    qid: str,
    variant: str,
    cluster: Cluster,
    dataset: PartitionedDataset,
    p2p_broadcast: bool = False,
) -> tuple[ColumnTable, RunReport]:
    """Execute one query on the cluster; returns (result, report).

    The result is rank 0's finished table.  Plan/partitioning mismatches
    raise PlanError before any worker starts.
    """
    plan = get_plan(qid, variant)
    if cluster.n != dataset.n_workers:
        raise PlanError(
            f"cluster has {cluster.n} endpoints but dataset is partitioned "
            f"for {dataset.n_workers}"
        )
    if plan.requires_co_partition and dataset.scheme != "default_keys":
        needs = ", ".join(f"{t} on {k}" for t, k in plan.requires_co_partition)
        raise PlanError(
            f"{qid}/{variant} requires co-partitioned inputs ({needs}); "
            f"got scheme {dataset.scheme!r}"
        )
    fn = PLAN_FUNCTIONS[qid]

    def worker(ep: Endpoint) -> _WorkerOutcome:
        ctx = WorkerContext(
            ep, dataset.worker_tables(ep.rank), variant, dataset.scheme, p2p_broadcast
        )
        barrier(ep)
        t_start = ctx.now()
        result = fn(ctx)
        barrier(ep)
        total = ctx.now() - t_start
        return _WorkerOutcome(
            result=result,
            total_s=total,
            shuffle_s=ctx.shuffle_s,
            broadcast_s=ctx.broadcast_s,
            shuffle_msgs=ctx.shuffle_msgs,
            broadcast_msgs=ctx.broadcast_msgs,
            shuffle_bytes=ctx.shuffle_bytes,
            broadcast_bytes=ctx.broadcast_bytes,
            peak_bytes=ctx.meter.peak,
            counts=(ctx.n_shuffles, ctx.n_broadcasts),
        )

    outcomes = run_workers(cluster, worker)
    root = outcomes[0]
    counts = root.counts
    if any(o.counts != counts for o in outcomes):
        raise PlanError(f"{qid}/{variant}: workers disagree on exchange counts")
    if counts != plan.expected_exchanges:
        raise PlanError(
            f"{qid}/{variant}: plan declares exchanges {plan.expected_exchanges}, "
            f"run produced {counts}"
        )
    shuffle_msgs: list[int] = []
    broadcast_msgs: list[int] = []
    for o in outcomes:
        shuffle_msgs.extend(o.shuffle_msgs)
        broadcast_msgs.extend(o.broadcast_msgs)
    report = RunReport(
        query_id=qid,
        variant=variant,
        mode=cluster.mode,
        compute_s=root.total_s - root.shuffle_s - root.broadcast_s,
        shuffle_s=root.shuffle_s,
        broadcast_s=root.broadcast_s,
        shuffle_msgs=shuffle_msgs,
        broadcast_msgs=broadcast_msgs,
        peak_bytes=[o.peak_bytes for o in outcomes],
        result_digest=result_digest(root.result),
        exchange_counts=counts,
        shuffle_bytes=sum(o.shuffle_bytes for o in outcomes),
        broadcast_bytes=sum(o.broadcast_bytes for o in outcomes),
    )
    return root.result, report


def reference_run(qid: str, tables: dict[str, ColumnTable] | Dataset, variant: str = "default") -> ColumnTable:
    """Single-context ground truth for a query over the full dataset."""
    if qid not in PLAN_FUNCTIONS:
        raise PlanError(f"unsupported query {qid!r}; supported: {SUPPORTED_QUERIES}")
    if isinstance(tables, Dataset):
        tables = tables.tables
    return PLAN_FUNCTIONS[qid](LocalContext(tables, variant))


def q12_variants(cluster: Cluster, dataset: Dataset) -> dict[str, RunReport]:
    """Q12 under its three plans: default, Pa (shuffle), Pb (broadcast).

    The default plan gets key-partitioned inputs; Pa and Pb run on
    unpartitioned (row-range) inputs.  All three must produce identical
    result digests; their simulated times are what differs.
    """
    if cluster.mode != MODE_SIMULATED:
        raise PlanError("q12_variants compares virtual times; use a simulated cluster")
    by_key = partition_dataset(dataset, cluster.n, "default_keys")
    by_range = partition_dataset(dataset, cluster.n, "unpartitioned")
    reports = {}
    _, reports["default"] = run_query("Q12", "default", cluster, by_key)
    _, reports["pa"] = run_query("Q12", "pa", cluster, by_range)
    _, reports["pb"] = run_query("Q12", "pb", cluster, by_range)
    digests = {r.result_digest for r in reports.values()}
    if len(digests) != 1:
        raise PlanError(f"Q12 variants disagree: {digests}")
    return reports
