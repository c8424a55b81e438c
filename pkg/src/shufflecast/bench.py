"""Microbenchmarks and workload-profile helpers.

The microbenchmarks drive the exchange patterns with a single contiguous
buffer per GPU (the message size), exactly like the throughput sweeps the
models are checked against: shuffle slices each buffer N ways inside one
grouped send/recv step; broadcast runs the all-roots grouped broadcast;
broadcast_p2p replaces each root's collective with N-1 grouped sends.

In simulated mode payloads are `VirtualBytes`, so multi-GiB sweeps cost
no memory and measured throughput is total bytes moved over virtual
elapsed time.  In-process mode moves real bytes and reports wall-clock
throughput without a model comparison.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .collectives import GroupOp, barrier, group_execute
from .engine import RunReport, run_query
from .models import (
    WorkloadProfile,
    broadcast_throughput,
    project_workload,
    shuffle_throughput,
)
from .queries import SUPPORTED_QUERIES
from .topology import GB, Topology
from .transport import (
    MODE_SIMULATED,
    Cluster,
    Endpoint,
    VirtualBytes,
    create_cluster,
    run_workers,
)

BENCH_OPS = ("shuffle", "broadcast", "broadcast_p2p")

DEFAULT_MESSAGE_CAP = 1 << 30  # 1 GiB per-GPU buffer


class BenchError(ValueError):
    pass


@dataclass
class BenchSpec:
    """One microbenchmark sweep: an exchange op over increasing sizes."""

    op: str
    message_bytes: list[int]
    topology: Topology
    repetitions: int = 1
    max_message_bytes: int = DEFAULT_MESSAGE_CAP

    def __post_init__(self) -> None:
        if self.op not in BENCH_OPS:
            raise BenchError(f"unknown bench op {self.op!r}; choose from {BENCH_OPS}")
        if self.repetitions < 1:
            raise BenchError("repetitions must be >= 1")
        if not self.message_bytes:
            raise BenchError("empty message size sweep")
        if any(b <= 0 for b in self.message_bytes):
            raise BenchError("message sizes must be positive")
        if any(b >= a for b, a in zip(self.message_bytes, self.message_bytes[1:])):
            raise BenchError("message size sweep must be strictly increasing")
        over = [b for b in self.message_bytes if b > self.max_message_bytes]
        if over:
            raise BenchError(
                f"sweep sizes {over} exceed the configured memory cap "
                f"of {self.max_message_bytes} bytes"
            )


def _split_points(total: int, parts: int) -> list[int]:
    return [total * i // parts for i in range(parts + 1)]


def _bench_step(ep: Endpoint, op: str, msg: int, virtual: bool) -> None:
    """One repetition: every GPU contributes ``msg`` bytes to the exchange."""
    n = ep.n
    buf = VirtualBytes(msg) if virtual else b"\x00" * msg
    if op == "shuffle":
        cuts = _split_points(msg, n)
        ops = [
            GroupOp("send", dst, payload=buf[cuts[dst]:cuts[dst + 1]])
            for dst in range(n)
        ]
        ops += [
            GroupOp("recv", src, nbytes=cuts[ep.rank + 1] - cuts[ep.rank])
            for src in range(n)
        ]
        group_execute(ep, ops)
    elif op == "broadcast":
        ops = [
            GroupOp(
                "bcast", root,
                payload=buf if root == ep.rank else None,
                nbytes=None if root == ep.rank else msg,
            )
            for root in range(n)
        ]
        group_execute(ep, ops)
    else:  # broadcast_p2p
        ops = [GroupOp("send", dst, payload=buf) for dst in range(n) if dst != ep.rank]
        ops += [GroupOp("recv", src, nbytes=msg) for src in range(n) if src != ep.rank]
        group_execute(ep, ops)


def _model_thpt(op: str, topo: Topology) -> float:
    if op == "shuffle":
        return shuffle_throughput(topo)
    # broadcast_p2p is measured against the collective broadcast model,
    # which is the point of the comparison.
    return broadcast_throughput(topo)


def run_bench(spec: BenchSpec, mode: str = MODE_SIMULATED, seed: int = 0) -> list[dict]:
    """Run the sweep; one result row per message size."""
    topo = spec.topology
    cluster = create_cluster(topo, mode, seed)
    virtual = mode == MODE_SIMULATED
    rows = []
    for msg in spec.message_bytes:

        def worker(ep: Endpoint) -> float:
            elapsed = 0.0
            for _ in range(spec.repetitions):
                barrier(ep)
                t0 = ep.clock if virtual else time.perf_counter()
                _bench_step(ep, spec.op, msg, virtual)
                barrier(ep)
                t1 = ep.clock if virtual else time.perf_counter()
                elapsed += t1 - t0
            return elapsed / spec.repetitions

        elapsed = max(run_workers(cluster, worker))
        total_bytes = msg * topo.n
        measured = total_bytes / GB / elapsed if elapsed > 0 else float("inf")
        row = {
            "op": spec.op,
            "msg_bytes": msg,
            "k": topo.k,
            "v": topo.v,
            "bn_gbps": topo.bn_gbps,
            "bg_gbps": topo.bg_gbps,
            "efficiency": topo.efficiency,
            "measured_thpt_gbps": measured,
            "model_thpt_gbps": None,
            "relative_error": None,
        }
        if virtual:
            model = _model_thpt(spec.op, topo)
            row["model_thpt_gbps"] = model
            row["relative_error"] = abs(model - measured) / measured
        rows.append(row)
    return rows


# -- whole-suite runs and projection profiles --------------------------------


def run_suite(
    cluster: Cluster,
    dataset,
    queries: tuple[str, ...] = SUPPORTED_QUERIES,
    p2p_broadcast: bool = False,
) -> dict[str, RunReport]:
    """Run each query once on an already-partitioned dataset."""
    reports = {}
    for qid in queries:
        _, reports[qid] = run_query(
            qid, "default", cluster, dataset, p2p_broadcast=p2p_broadcast
        )
    return reports


def profile_from_reports(
    reports: dict[str, RunReport] | list[RunReport], topo_v1: Topology
) -> WorkloadProfile:
    """Build a projection profile from a V=1 run of the suite.

    Exchange byte totals carry over directly (they do not depend on the
    cluster size).  The compute component is calibrated as the measured
    total minus the *modeled* V=1 exchange time, so that projecting back
    onto the V=1 topology reproduces the measurement exactly; any gap
    between modeled and actual exchange time at V=1 is treated as compute.
    """
    if topo_v1.v != 1:
        raise BenchError("profiles are calibrated from V=1 runs")
    items = list(reports.values()) if isinstance(reports, dict) else list(reports)
    total = sum(r.total_s for r in items)
    shuffle_bytes = sum(r.shuffle_bytes for r in items)
    broadcast_bytes = sum(r.broadcast_bytes for r in items)
    modeled = project_workload(
        WorkloadProfile(0.0, shuffle_bytes, broadcast_bytes), topo_v1
    )
    return WorkloadProfile(
        compute_time_v1=max(total - modeled, 0.0),
        shuffle_bytes=shuffle_bytes,
        broadcast_bytes=broadcast_bytes,
    )


def percentile(values: list[int], pct: float) -> float:
    """Distribution percentile of message sizes (0 for an empty list)."""
    if not values:
        return 0.0
    return float(np.percentile(np.asarray(values, dtype=np.float64), pct))
