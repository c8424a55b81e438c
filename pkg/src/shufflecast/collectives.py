"""Group-communication primitives over the transport.

Every operation here is collective: all N workers must call it, in the
same program order (the engine is SPMD, so this holds by construction).
Operations inside one group complete together regardless of how each
worker ordered its sends and receives, so there are no pairwise-ordering
deadlocks; a genuinely unmatched operation is reported as a diagnostic
error naming the offending ranks instead of hanging.

Simulated-time costs: a group is charged as one bulk-synchronous step
(two for broadcasts, whose schedule has a remote fan-out step followed by
an intra-node redistribution step).  Barriers, reductions, and other
metadata-sized coordination are charged zero virtual time.
"""

from __future__ import annotations

import numpy as np

from .transport import (
    DeadlockError,
    Endpoint,
    GroupOp,
    ProtocolError,
    _payload_len,
)

REDUCE_OPS = ("sum", "product", "min", "max", "average")


def _bcast_transfers(topo, root: int, nbytes: int):
    """Two-step broadcast schedule: (step1, step2) transfer lists.

    Step 1: the root sends its payload to every local peer and one copy to
    the same-local-index GPU of each remote node.  Step 2: each of those
    remote receivers fans the copy out to its own local peers.
    """
    k = topo.k
    node = topo.node_of(root)
    li = topo.local_index_of(root)
    step1 = []
    step2 = []
    for p in range(node * k, (node + 1) * k):
        if p != root:
            step1.append((root, p, nbytes))
    for other in range(topo.v):
        if other == node:
            continue
        forwarder = other * k + li
        step1.append((root, forwarder, nbytes))
        for p in range(other * k, (other + 1) * k):
            if p != forwarder:
                step2.append((forwarder, p, nbytes))
    return step1, step2


def group_execute(ep: Endpoint, ops: list[GroupOp]) -> list:
    """Execute one group of send/recv/bcast operations.

    Returns a list aligned with ``ops``: received payloads for recv and
    bcast entries, None for sends.  The whole group is charged once.
    """

    def commit(slots: list[list[GroupOp]]):
        cluster = ep.cluster
        topo = cluster.topology
        # Match point-to-point pairs: the i-th send src->dst(tag) pairs with
        # the i-th recv posted at dst for src(tag).
        sends: dict[tuple, list] = {}
        recvs: dict[tuple, list] = {}
        bcasts: dict[int, list] = {}
        for rank, rank_ops in enumerate(slots):
            bcast_pos = 0
            for op_idx, op in enumerate(rank_ops):
                if op.kind == "send":
                    cluster._check_rank(op.peer, "destination")
                    sends.setdefault((rank, op.peer, op.tag), []).append(op)
                elif op.kind == "recv":
                    cluster._check_rank(op.peer, "source")
                    recvs.setdefault((op.peer, rank, op.tag), []).append((op, op_idx))
                elif op.kind == "bcast":
                    bcasts.setdefault(bcast_pos, []).append((rank, op, op_idx))
                    bcast_pos += 1
                else:
                    raise ProtocolError(f"unknown group op kind {op.kind!r}")
        problems = []
        for key in sorted(set(sends) | set(recvs)):
            src, dst, tag = key
            n_s, n_r = len(sends.get(key, ())), len(recvs.get(key, ()))
            if n_s != n_r:
                problems.append(
                    f"rank {src} -> rank {dst} (tag {tag}): "
                    f"{n_s} send(s) vs {n_r} recv(s)"
                )
        if problems:
            raise DeadlockError(
                "unmatched operations in group: " + "; ".join(problems)
            )

        transfers = []
        bcast_step2 = []
        results: list[list] = [[None] * len(rank_ops) for rank_ops in slots]
        for key, send_list in sends.items():
            src, dst, tag = key
            for op, (rop, ridx) in zip(send_list, recvs[key]):
                n = _payload_len(op.payload)
                if rop.nbytes is not None and rop.nbytes != n:
                    raise ProtocolError(
                        f"receive reservation mismatch at rank {dst}: "
                        f"expected {rop.nbytes} bytes from rank {src}, got {n}"
                    )
                transfers.append((src, dst, n))
                results[dst][ridx] = op.payload

        for pos in sorted(bcasts):
            entries = bcasts[pos]
            if len(entries) != cluster.n:
                ranks = sorted(r for r, _, _ in entries)
                raise ProtocolError(
                    f"broadcast #{pos} posted by ranks {ranks} only; "
                    "collective broadcasts require all workers"
                )
            roots = {op.peer for _, op, _ in entries}
            if len(roots) != 1:
                raise ProtocolError(
                    f"root mismatch across workers for broadcast #{pos}: {sorted(roots)}"
                )
            root = roots.pop()
            cluster._check_rank(root, "root")
            payload = None
            for rank, op, _ in entries:
                if rank == root:
                    if op.payload is None:
                        raise ProtocolError(f"root {root} posted no payload")
                    payload = op.payload
            n = _payload_len(payload)
            for rank, op, op_idx in entries:
                if rank != root and op.nbytes is not None and op.nbytes != n:
                    raise ProtocolError(
                        f"broadcast reservation mismatch at rank {rank}: "
                        f"expected {op.nbytes}, root {root} sent {n}"
                    )
                results[rank][op_idx] = payload
            s1, s2 = _bcast_transfers(topo, root, n)
            transfers.extend(s1)
            bcast_step2.extend(s2)

        cluster.charge_group(transfers)
        if bcast_step2:
            cluster.charge_group(bcast_step2)
        return results

    all_results = ep.cluster.rendezvous(ep.rank, "group", ops, commit)
    return all_results[ep.rank]


def broadcast_collective(
    ep: Endpoint, root: int, payload=None, nbytes: int | None = None
):
    """One-to-all broadcast; every worker returns the root's payload.

    The root passes ``payload``; the others pass an ``nbytes`` reservation
    of the announced length.  Inter-node traffic is exactly one payload
    copy per remote node.
    """
    op = GroupOp("bcast", root, payload=payload if ep.rank == root else None,
                 nbytes=None if ep.rank == root else nbytes)
    return group_execute(ep, [op])[0]


def broadcast_p2p(ep: Endpoint, root: int, payload=None, nbytes: int | None = None):
    """Broadcast built from N-1 grouped point-to-point sends at the root.

    Functionally identical to `broadcast_collective`, but the same bytes
    leave the root's node once per remote GPU instead of once per remote
    node -- k times more inter-node traffic.  Kept for comparisons.
    """
    if ep.rank == root:
        ops = [GroupOp("send", dst, payload=payload)
               for dst in range(ep.n) if dst != root]
        group_execute(ep, ops)
        return payload
    result = group_execute(ep, [GroupOp("recv", root, nbytes=nbytes)])
    return result[0]


def all_reduce(ep: Endpoint, values, op: str = "sum") -> np.ndarray:
    """Elementwise reduction across all workers; everyone gets the result.

    Correctness-level implementation (reduce in rank order, then share);
    its cost is excluded from simulated time.  ``average`` is computed as
    sum followed by division by N so integer inputs behave predictably.
    """
    if op not in REDUCE_OPS:
        raise ProtocolError(f"unsupported reduction {op!r}; choose from {REDUCE_OPS}")
    vec = np.asarray(values)

    def commit(slots: list[np.ndarray]) -> np.ndarray:
        lengths = {s.shape for s in slots}
        if len(lengths) > 1:
            raise ProtocolError(f"all_reduce length mismatch across workers: {sorted(lengths)}")
        acc = slots[0].astype(np.float64 if op == "average" else slots[0].dtype, copy=True)
        fold = {
            "sum": np.add, "average": np.add, "product": np.multiply,
            "min": np.minimum, "max": np.maximum,
        }[op]
        for s in slots[1:]:
            fold(acc, s, out=acc)
        if op == "average":
            acc /= len(slots)
        return acc

    return ep.cluster.rendezvous(ep.rank, f"all_reduce:{op}", vec, commit).copy()


def barrier(ep: Endpoint) -> None:
    """Block until every worker arrives; simulated clocks sync to the max."""

    def commit(_slots):
        ep.cluster.sync_clocks()
        return None

    ep.cluster.rendezvous(ep.rank, "barrier", None, commit)
