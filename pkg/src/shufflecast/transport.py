"""Message-passing substrate connecting the N worker endpoints.

Two interchangeable modes share one implementation:

* ``in_process`` -- workers run in their own threads and exchange real
  payloads through blocking FIFO mailboxes; timing is wall clock.
* ``simulated`` -- identical semantics plus a deterministic virtual clock.
  Group operations charge transfer time against the topology's effective
  bandwidths; nothing else advances time.

Virtual-time accounting is bulk-synchronous: a group collects every
participant's transfers, computes each endpoint's own cost as
``max(intra_bytes / B_g, inter_bytes / (B_n / k))`` (intra- and inter-node
transfers overlap; each GPU owns a static 1/k share of its node's NIC),
and advances every clock by the maximum cost over the group.  Because the
charge depends only on the transfer multiset, simulated clocks and
counters are identical across runs regardless of thread scheduling.

Plain send/recv outside a group and the metadata-style collective calls
(size exchange, barrier, reductions) are charged zero virtual time.
Self-transfers are delivered without touching any counter.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field

from .topology import GB, Topology

MODE_IN_PROCESS = "in_process"
MODE_SIMULATED = "simulated"


class TransportError(RuntimeError):
    pass


class ClusterConfigError(TransportError):
    """Ranks or cluster shapes that do not exist."""


class ProtocolError(TransportError):
    """Workers disagree about a collective operation."""


class DeadlockError(TransportError):
    """Every unfinished worker is blocked with nothing deliverable."""


class _Aborted(TransportError):
    """Internal: another worker failed; unwind quietly."""


class VirtualBytes:
    """Length-only stand-in for a payload.

    Lets simulated microbenchmarks move multi-GiB buffers without
    allocating them: the transport only ever needs ``len`` and slicing.
    """

    __slots__ = ("nbytes",)

    def __init__(self, nbytes: int):
        if nbytes < 0:
            raise ValueError("negative payload size")
        self.nbytes = int(nbytes)

    def __len__(self) -> int:
        return self.nbytes

    def __getitem__(self, key: slice) -> "VirtualBytes":
        start, stop, step = key.indices(self.nbytes)
        if step != 1:
            raise ValueError("VirtualBytes slices must be contiguous")
        return VirtualBytes(max(0, stop - start))

    def __eq__(self, other) -> bool:
        return isinstance(other, VirtualBytes) and other.nbytes == self.nbytes

    def __repr__(self) -> str:
        return f"VirtualBytes({self.nbytes})"


@dataclass
class Message:
    src: int
    dst: int
    payload: object
    tag: int = 0


@dataclass
class GroupOp:
    """One entry of a grouped communication step.

    kind "send": ``peer`` is the destination, ``payload`` is bytes-like.
    kind "recv": ``peer`` is the source, ``nbytes`` is the exact expected
    length (receivers always know sizes from the preceding size exchange).
    kind "bcast": ``peer`` is the root; the root supplies ``payload``,
    everyone else a ``nbytes`` reservation.
    """

    kind: str
    peer: int
    payload: object | None = None
    nbytes: int | None = None
    tag: int = 0


@dataclass
class LinkCounters:
    intra_sent: int = 0
    inter_sent: int = 0
    intra_received: int = 0
    inter_received: int = 0

    def as_dict(self) -> dict:
        return {
            "intra_node": {"sent": self.intra_sent, "received": self.intra_received},
            "inter_node": {"sent": self.inter_sent, "received": self.inter_received},
        }


@dataclass
class Endpoint:
    """A worker's handle into the communication layer.

    Owned by exactly one worker at a time; methods are not reentrant.
    """

    rank: int
    cluster: "Cluster" = field(repr=False)
    clock: float = 0.0
    counters: LinkCounters = field(default_factory=LinkCounters)

    @property
    def node(self) -> int:
        return self.cluster.topology.node_of(self.rank)

    @property
    def local_index(self) -> int:
        return self.cluster.topology.local_index_of(self.rank)

    @property
    def n(self) -> int:
        return self.cluster.n

    @property
    def simulated(self) -> bool:
        return self.cluster.mode == MODE_SIMULATED

    def send(self, dst: int, payload, tag: int = 0) -> None:
        self.cluster._send(self.rank, dst, payload, tag)

    def recv(self, src: int, tag: int = 0):
        return self.cluster._recv(self.rank, src, tag)

    def report(self) -> dict:
        return {
            "rank": self.rank,
            "node": self.node,
            "local_index": self.local_index,
            "clock_s": self.clock,
            "counters": self.counters.as_dict(),
        }


class _Rendezvous:
    __slots__ = ("slots", "labels", "done", "result", "error", "consumed")

    def __init__(self, n: int):
        self.slots: list = [None] * n
        self.labels: list = [None] * n
        self.done = False
        self.result = None
        self.error: BaseException | None = None
        self.consumed = 0


class Cluster:
    """Shared state for N endpoints: mailboxes, rendezvous, virtual time."""

    def __init__(self, topology: Topology, mode: str, seed: int = 0):
        if mode not in (MODE_IN_PROCESS, MODE_SIMULATED):
            raise ClusterConfigError(f"unknown transport mode {mode!r}")
        if topology.n < 1:
            raise ClusterConfigError("cluster needs at least one endpoint")
        self.topology = topology
        self.mode = mode
        self.seed = seed  # reserved for scheduling policies; accounting is deterministic
        self.endpoints = [Endpoint(rank=r, cluster=self) for r in range(topology.n)]
        self._cond = threading.Condition(threading.RLock())
        self._mailboxes: dict[tuple[int, int, int], deque] = {}
        self._rendezvous: list[_Rendezvous] = []
        self._next_step: list[int] = [0] * topology.n
        self._waiting: dict[int, str] = {}
        self._finished: set[int] = set()
        self._deadlock: str | None = None
        self._abort: BaseException | None = None

    @property
    def n(self) -> int:
        return self.topology.n

    def reports(self) -> dict:
        """Counters and clocks per endpoint, JSON-ready and keyed by rank."""
        return {str(ep.rank): ep.report() for ep in self.endpoints}

    # -- point-to-point ----------------------------------------------------

    def _check_rank(self, rank: int, what: str) -> None:
        if not 0 <= rank < self.n:
            raise ClusterConfigError(f"{what} rank {rank} outside [0, {self.n})")

    def _send(self, src: int, dst: int, payload, tag: int) -> None:
        self._check_rank(dst, "destination")
        with self._cond:
            self._raise_if_broken()
            self._account_transfer(src, dst, _payload_len(payload))
            self._mailboxes.setdefault((src, dst, tag), deque()).append(payload)
            self._cond.notify_all()

    def _recv(self, rank: int, src: int, tag: int):
        self._check_rank(src, "source")
        key = (src, rank, tag)
        with self._cond:
            while True:
                self._raise_if_broken()
                box = self._mailboxes.get(key)
                if box:
                    return box.popleft()
                self._wait(
                    rank,
                    f"recv(src={src}, tag={tag})",
                    lambda: bool(self._mailboxes.get(key)),
                )

    # -- rendezvous --------------------------------------------------------

    def rendezvous(self, rank: int, label: str, slot, commit):
        """Deterministic all-ranks meeting point.

        Every worker calls in the same program order; the Nth arrival runs
        ``commit(slots)`` once (slots in rank order) and its result is
        returned to all.  ``label`` must agree across workers, which turns
        diverged programs into protocol errors instead of hangs.
        """
        with self._cond:
            self._raise_if_broken()
            step = self._next_step[rank]
            self._next_step[rank] += 1
            while len(self._rendezvous) <= step:
                self._rendezvous.append(_Rendezvous(self.n))
            rdv = self._rendezvous[step]
            rdv.slots[rank] = slot
            rdv.labels[rank] = label
            arrived = sum(1 for lb in rdv.labels if lb is not None)
            if arrived == self.n:
                mismatched = {lb for lb in rdv.labels if lb is not None}
                try:
                    if len(mismatched) > 1:
                        raise ProtocolError(
                            f"collective mismatch at step {step}: workers posted {sorted(mismatched)}"
                        )
                    rdv.result = commit(rdv.slots)
                except BaseException as exc:  # propagated to every participant
                    rdv.error = exc
                rdv.done = True
                self._cond.notify_all()
            else:
                while not rdv.done:
                    self._raise_if_broken()
                    self._wait(
                        rank,
                        f"collective {label!r} at step {step}",
                        lambda: rdv.done,
                    )
            rdv.consumed += 1
            if rdv.consumed == self.n:
                self._rendezvous[step] = None  # release payload references
            if rdv.error is not None:
                raise rdv.error
            return rdv.result

    # -- accounting ---------------------------------------------------------

    def _account_transfer(self, src: int, dst: int, nbytes: int) -> None:
        if src == dst:
            return  # self-transfers never touch network counters
        topo = self.topology
        if topo.node_of(src) == topo.node_of(dst):
            self.endpoints[src].counters.intra_sent += nbytes
            self.endpoints[dst].counters.intra_received += nbytes
        else:
            self.endpoints[src].counters.inter_sent += nbytes
            self.endpoints[dst].counters.inter_received += nbytes

    def group_cost(self, transfers: list[tuple[int, int, int]]) -> float:
        """Bulk-synchronous virtual seconds for one group of transfers.

        Per endpoint the cost is max(intra/B_g, inter/(B_n/k)); the group
        costs the maximum over endpoints.  Pure accounting, no state.
        """
        topo = self.topology
        intra = [0] * self.n
        inter = [0] * self.n
        for src, dst, nbytes in transfers:
            if src == dst:
                continue
            if topo.node_of(src) == topo.node_of(dst):
                intra[src] += nbytes
            else:
                inter[src] += nbytes
        bg = topo.effective_bg_gbps * GB
        bn_share = topo.effective_bn_gbps * GB / topo.k
        return max(
            (max(ia / bg, ie / bn_share) for ia, ie in zip(intra, inter)),
            default=0.0,
        )

    def charge_group(self, transfers: list[tuple[int, int, int]]) -> float:
        """Account a group's transfers; in simulated mode advance all clocks.

        Returns the elapsed virtual seconds (0 in in-process mode, where
        time is wall clock).  Counters update in both modes.
        """
        with self._cond:
            for src, dst, nbytes in transfers:
                self._check_rank(src, "source")
                self._check_rank(dst, "destination")
                self._account_transfer(src, dst, nbytes)
            if self.mode != MODE_SIMULATED:
                return 0.0
            elapsed = self.group_cost(transfers)
            for ep in self.endpoints:
                ep.clock += elapsed
            return elapsed

    def sync_clocks(self) -> float:
        """Barrier rule: every clock jumps to the cluster-wide maximum."""
        with self._cond:
            mx = max(ep.clock for ep in self.endpoints)
            for ep in self.endpoints:
                ep.clock = mx
            return mx

    # -- liveness ----------------------------------------------------------

    def _wait(self, rank: int, why: str, satisfiable) -> None:
        """Park this worker; detect cluster-wide deadlock on the way in.

        Deadlock holds only when every unfinished worker is parked and no
        parked worker's wake condition is already satisfiable (a satisfied
        waiter has a notify pending and just has not been scheduled yet).
        """
        self._waiting[rank] = (why, satisfiable)
        try:
            if len(self._waiting) + len(self._finished) >= self.n and not any(
                check() for _, check in self._waiting.values()
            ):
                stuck = ", ".join(
                    f"rank {r}: {w}" for r, (w, _) in sorted(self._waiting.items())
                )
                self._deadlock = f"all workers blocked ({stuck})"
                self._cond.notify_all()
                raise DeadlockError(self._deadlock)
            self._cond.wait()
        finally:
            self._waiting.pop(rank, None)

    def _raise_if_broken(self) -> None:
        if self._abort is not None:
            raise _Aborted(f"peer failure: {self._abort!r}")
        if self._deadlock is not None:
            raise DeadlockError(self._deadlock)

    def mark_finished(self, rank: int) -> None:
        with self._cond:
            self._finished.add(rank)
            self._cond.notify_all()

    def abort(self, exc: BaseException) -> None:
        with self._cond:
            if self._abort is None:
                self._abort = exc
            self._cond.notify_all()


def _payload_len(payload) -> int:
    nbytes = getattr(payload, "nbytes", None)
    if nbytes is not None:
        return int(nbytes)
    return len(payload)


def create_cluster(topo: Topology, mode: str = MODE_SIMULATED, seed: int = 0) -> Cluster:
    """Create the N = k*V mutually connected endpoints for ``topo``."""
    return Cluster(topo, mode, seed)


def run_workers(cluster: Cluster, fn, *args) -> list:
    """Run ``fn(endpoint, *args)`` once per endpoint, one thread each.

    Returns the per-rank results in rank order.  If any worker fails, its
    peers are unblocked and the original failure is re-raised; secondary
    unwind errors are suppressed.
    """
    with cluster._cond:
        cluster._finished.clear()
    results: list = [None] * cluster.n
    failures: list[tuple[int, BaseException]] = []
    lock = threading.Lock()

    def body(ep: Endpoint) -> None:
        try:
            results[ep.rank] = fn(ep, *args)
        except _Aborted:
            pass
        except BaseException as exc:
            with lock:
                failures.append((ep.rank, exc))
            cluster.abort(exc)
        finally:
            cluster.mark_finished(ep.rank)

    if cluster.n == 1:
        body(cluster.endpoints[0])
    else:
        threads = [
            threading.Thread(target=body, args=(ep,), name=f"worker-{ep.rank}")
            for ep in cluster.endpoints
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if failures:
        primary = [f for f in failures if not isinstance(f[1], DeadlockError)]
        raise (primary or failures)[0][1]
    return results
