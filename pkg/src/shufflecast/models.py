"""Closed-form throughput and time models for the two exchange operators.

Both operators move a dataset of total size S that is evenly spread over
the N = k*V GPUs.  Since every GPU experiences roughly the same latency,
the models are single-GPU latency analyses:

* Shuffle is one step: every GPU sends a 1/N slice of its partition to
  every GPU.  Only the network term matters when local links are faster,
  giving  T = S*(V-1) / (V^2 * B_n)  and throughput (1 + 1/(V-1)) * V * B_n.

* Broadcast (every GPU replicates its partition everywhere) is two steps:
  local fan-out plus one copy per remote node, then intra-node
  redistribution of the received copies.  Throughput is
  (1 + 1/(V-1)) * k*B_n*B_g / (k*B_g + (k-1)*B_n).

Throughput rises with V for shuffle and falls toward a finite limit for
broadcast, which is what makes the shuffle-vs-broadcast decision rule
(`choose_exchange`) topology-dependent.

The classic forms above hold for V >= 2.  For V = 1 the same analysis
restricted to intra-node links (each GPU moves the (k-1)/k remote-peer
share of its partition at rate B_g) gives
Thpt_shuffle = k^2*B_g/(k-1) and Thpt_broadcast = k*B_g/(k-1), so
projections can include single-machine runs.

All bandwidths are effective GB/s (efficiency already applied by
`Topology`); byte arguments are raw bytes; times are seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .topology import GB, Topology


class ModelDomainError(ValueError):
    """Inputs outside the validity region of the closed-form models."""


def local_faster_holds(topo: Topology) -> bool:
    """True when intra-node fan-out is not the broadcast bottleneck.

    The two-step broadcast schedule overlaps (k-1) local sends with (V-1)
    remote sends; the remote side dominates iff
    B_g / B_n >= (k-1) / (k*(V-1)), defined for V >= 2.
    """
    if topo.v < 2:
        raise ModelDomainError("local-faster condition is defined for V >= 2")
    bg = topo.effective_bg_gbps
    bn = topo.effective_bn_gbps
    return bg / bn >= (topo.k - 1) / (topo.k * (topo.v - 1))


def _require_local_faster(topo: Topology) -> None:
    if not local_faster_holds(topo):
        raise ModelDomainError(
            f"topology {topo.label()} (bg={topo.effective_bg_gbps:g}, "
            f"bn={topo.effective_bn_gbps:g}) violates the local-faster "
            "condition; the broadcast model does not apply"
        )


def broadcast_throughput(topo: Topology) -> float:
    """Broadcast throughput in GB/s.

    Decreasing in V; converges to k*B_n*B_g / (k*B_g + (k-1)*B_n) and
    scales sublinearly in B_n.
    """
    k, v = topo.k, topo.v
    bg = topo.effective_bg_gbps
    bn = topo.effective_bn_gbps
    if v == 1:
        if k == 1:
            return math.inf  # single GPU: nothing moves
        return k * bg / (k - 1)
    _require_local_faster(topo)
    return (1.0 + 1.0 / (v - 1)) * (k * bn * bg) / (k * bg + (k - 1) * bn)


def shuffle_throughput(topo: Topology) -> float:
    """Shuffle throughput in GB/s; increasing in V, proportional to B_n."""
    k, v = topo.k, topo.v
    if v == 1:
        if k == 1:
            return math.inf
        return k * k * topo.effective_bg_gbps / (k - 1)
    return (1.0 + 1.0 / (v - 1)) * v * topo.effective_bn_gbps


def broadcast_time(topo: Topology, table_bytes: float) -> float:
    """Seconds to replicate a table of ``table_bytes`` to every GPU.

    ((V-1)/(V*B_n) + (V-1)*(k-1)/(V*k*B_g)) * bytes; equal to
    bytes / broadcast_throughput by construction.
    """
    if table_bytes < 0:
        raise ModelDomainError(f"negative byte count: {table_bytes}")
    k, v = topo.k, topo.v
    gbytes = table_bytes / GB
    if v == 1:
        return gbytes * (k - 1) / (k * topo.effective_bg_gbps)
    _require_local_faster(topo)
    bn = topo.effective_bn_gbps
    bg = topo.effective_bg_gbps
    return gbytes * ((v - 1) / (v * bn) + (v - 1) * (k - 1) / (v * k * bg))


def shuffle_time(topo: Topology, total_bytes: float) -> float:
    """Seconds to shuffle ``total_bytes`` spread over all GPUs.

    (V-1) / (V^2 * B_n) * bytes for V >= 2.
    """
    if total_bytes < 0:
        raise ModelDomainError(f"negative byte count: {total_bytes}")
    k, v = topo.k, topo.v
    gbytes = total_bytes / GB
    if v == 1:
        return gbytes * (k - 1) / (k * k * topo.effective_bg_gbps)
    return gbytes * (v - 1) / (v * v * topo.effective_bn_gbps)


def broadcast_shuffle_ratio_threshold(topo: Topology) -> float:
    """|S|/|R| above which broadcasting R beats shuffling R and S.

    Broadcasting the small table R wins over shuffling both exactly when
    |S|/|R| > V*(1 + (k-1)*B_n/(k*B_g)) - 1.
    """
    if topo.v < 2:
        raise ModelDomainError("decision rule is defined for V >= 2")
    k, v = topo.k, topo.v
    bn = topo.effective_bn_gbps
    bg = topo.effective_bg_gbps
    return v * (1.0 + (k - 1) * bn / (k * bg)) - 1.0


@dataclass(frozen=True)
class ExchangeChoice:
    """Outcome of the broadcast-vs-shuffle decision for one join."""

    kind: str  # "broadcast" or "shuffle"
    predicted_time_broadcast: float
    predicted_time_shuffle: float
    swapped: bool = False  # inputs arrived in the wrong order and were swapped


def choose_exchange(topo: Topology, small_bytes: float, large_bytes: float) -> ExchangeChoice:
    """Pick broadcast(R) or shuffle(R and S) to prepare a join.

    ``small_bytes`` is |R|, ``large_bytes`` is |S|.  If the caller got the
    order wrong the sizes are swapped and the result flagged.  Ties go to
    shuffle (the broadcast must be strictly cheaper); an empty R is
    broadcast outright since replicating nothing costs nothing.
    """
    if small_bytes < 0 or large_bytes < 0:
        raise ModelDomainError("table sizes must be non-negative")
    swapped = small_bytes > large_bytes
    if swapped:
        small_bytes, large_bytes = large_bytes, small_bytes
    t_b = broadcast_time(topo, small_bytes)
    t_s = shuffle_time(topo, small_bytes + large_bytes)
    if small_bytes == 0:
        kind = "broadcast"
    else:
        kind = "broadcast" if t_b < t_s else "shuffle"
    return ExchangeChoice(kind, t_b, t_s, swapped)


@dataclass(frozen=True)
class WorkloadProfile:
    """Single-machine (V=1) measurement used as the projection anchor.

    compute_time_v1 is the local execution time at V=1; shuffle_bytes and
    broadcast_bytes are the total bytes moved by all shuffles and the
    total source bytes of all broadcasts, both independent of the cluster
    size for a fixed dataset.
    """

    compute_time_v1: float
    shuffle_bytes: float
    broadcast_bytes: float

    def __post_init__(self) -> None:
        if self.compute_time_v1 < 0 or self.shuffle_bytes < 0 or self.broadcast_bytes < 0:
            raise ModelDomainError("profile fields must be non-negative")


def project_workload(profile: WorkloadProfile, topo: Topology) -> float:
    """Projected total seconds on ``topo`` for a profile measured at V=1.

    Compute scales as 1/V; each exchange class is its byte total divided
    by the modeled throughput at the target topology.  At V=1 this returns
    the compute time plus the intra-node exchange time, i.e. the
    calibration measurement itself.
    """
    comp = profile.compute_time_v1 / topo.v
    shuf = 0.0
    if profile.shuffle_bytes:
        shuf = profile.shuffle_bytes / GB / shuffle_throughput(topo)
    bcast = 0.0
    if profile.broadcast_bytes:
        bcast = profile.broadcast_bytes / GB / broadcast_throughput(topo)
    return comp + shuf + bcast


def model_rows(
    topo: Topology,
    v_values: list[int],
    bn_values: list[float] | None = None,
    profile: WorkloadProfile | None = None,
) -> list[dict]:
    """Evaluate both throughput models (and optionally a projection) on a grid.

    Returns one dict per (V, B_n) combination with keys v, bn_gbps,
    thpt_broadcast_gbps, thpt_shuffle_gbps, projected_time_s (None without
    a profile).
    """
    rows = []
    for bn in bn_values if bn_values is not None else [topo.bn_gbps]:
        for v in v_values:
            t = topo.replace(v=v, bn_gbps=bn)
            rows.append(
                {
                    "v": v,
                    "bn_gbps": bn,
                    "thpt_broadcast_gbps": broadcast_throughput(t),
                    "thpt_shuffle_gbps": shuffle_throughput(t),
                    "projected_time_s": (
                        project_workload(profile, t) if profile is not None else None
                    ),
                }
            )
    return rows
