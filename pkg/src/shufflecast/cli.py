"""Command-line surface: model evaluation, microbenchmarks, query runs,
and workload projection.

Subcommands:

* ``model``   -- evaluate the throughput models (and optionally a
  projection) over a (V, B_n) grid; CSV out.
* ``bench``   -- run a shuffle/broadcast/broadcast_p2p microbenchmark
  sweep and compare simulated throughput against the models; CSV out.
* ``query``   -- run one query (or the whole suite) on a generated
  dataset; writes result CSV, report JSON, and endpoint counters.
* ``project`` -- evaluate a workload profile over a (V, B_n) grid.

Topologies are given as a ``KxV`` label (e.g. ``8x5``) or a path to a
``key=value`` config file; ``--bn-gbps``/``--bg-gbps``/``--efficiency``
override.  Sizes on the command line are in MiB; everything internal is
bytes.  All failures exit nonzero with a one-line error JSON on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from . import bench as bench_mod
from .data import generate, partition_dataset
from .engine import RunReport, run_query
from .models import WorkloadProfile, model_rows
from .queries import SUPPORTED_QUERIES
from .topology import Topology, TopologyError, parse_config, parse_shorthand
from .transport import MODE_IN_PROCESS, MODE_SIMULATED, create_cluster

MIB = 1 << 20

_MODES = {"sim": MODE_SIMULATED, "inproc": MODE_IN_PROCESS}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _write_csv(path: str, fieldnames: list[str], rows: list[dict]) -> None:
    out = sys.stdout if path == "-" else open(path, "w", newline="")
    try:
        writer = csv.writer(out)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_fmt(row[f]) for f in fieldnames])
    finally:
        if out is not sys.stdout:
            out.close()


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _topology(args) -> Topology:
    label = args.topology
    if os.path.exists(label):
        with open(label) as fh:
            topo = parse_config(fh.read())
        k, v = topo.k, topo.v
        defaults = {"bg_gbps": topo.bg_gbps, "bn_gbps": topo.bn_gbps,
                    "efficiency": topo.efficiency}
    else:
        k, v = parse_shorthand(label)
        defaults = {}
    return Topology(
        k=k,
        v=v,
        bg_gbps=args.bg_gbps if args.bg_gbps is not None else defaults.get("bg_gbps", 450.0),
        bn_gbps=args.bn_gbps if args.bn_gbps is not None else defaults.get("bn_gbps", 50.0),
        efficiency=(
            args.efficiency if args.efficiency is not None
            else defaults.get("efficiency", 0.8)
        ),
    )


def _add_topology_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--topology", required=True,
                   help="KxV label like 8x5, or a key=value config file")
    p.add_argument("--bn-gbps", type=float, default=None,
                   help="per-machine network bandwidth (GB/s)")
    p.add_argument("--bg-gbps", type=float, default=None,
                   help="intra-machine per-GPU aggregate bandwidth (GB/s)")
    p.add_argument("--efficiency", type=float, default=None,
                   help="effective fraction of peak bandwidth, in (0,1]")


def _load_profile(path: str) -> WorkloadProfile:
    with open(path) as fh:
        raw = json.load(fh)
    return WorkloadProfile(
        compute_time_v1=float(raw["compute_time_v1"]),
        shuffle_bytes=float(raw["shuffle_bytes"]),
        broadcast_bytes=float(raw["broadcast_bytes"]),
    )


def cmd_model(args) -> int:
    topo = _topology(args)
    profile = _load_profile(args.profile) if args.profile else None
    rows = model_rows(
        topo,
        v_values=_int_list(args.v_list) if args.v_list else [topo.v],
        bn_values=_float_list(args.bn_list) if args.bn_list else None,
        profile=profile,
    )
    for row in rows:
        row["thpt_broadcast"] = row.pop("thpt_broadcast_gbps")
        row["thpt_shuffle"] = row.pop("thpt_shuffle_gbps")
        row["projected_time"] = row.pop("projected_time_s")
    _write_csv(args.out, ["v", "bn_gbps", "thpt_broadcast", "thpt_shuffle", "projected_time"], rows)
    return 0


def cmd_bench(args) -> int:
    topo = _topology(args)
    spec = bench_mod.BenchSpec(
        op=args.op,
        message_bytes=[m * MIB for m in _int_list(args.sizes_mib)],
        topology=topo,
        repetitions=args.reps,
        max_message_bytes=args.max_mib * MIB,
    )
    rows = bench_mod.run_bench(spec, mode=_MODES[args.mode], seed=args.seed)
    _write_csv(
        args.out,
        ["op", "msg_bytes", "k", "v", "bn_gbps", "bg_gbps", "efficiency",
         "measured_thpt_gbps", "model_thpt_gbps", "relative_error"],
        rows,
    )
    return 0


def _write_result_csv(path: str, table) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if table is None:
            return
        writer.writerow(table.column_names)
        decoded = [table.column(c).decoded() for c in table.column_names]
        kinds = [table.column(c).kind for c in table.column_names]
        for i in range(table.row_count):
            writer.writerow([
                repr(col[i]) if kind == "float64" else col[i]
                for col, kind in zip(decoded, kinds)
            ])


def _summarize(qid: str, report: RunReport) -> str:
    p80_s = bench_mod.percentile(report.shuffle_msgs, 80)
    p80_b = bench_mod.percentile(report.broadcast_msgs, 80)
    return (
        f"{qid} [{report.variant}/{report.mode}] "
        f"exchanges={report.exchange_counts} "
        f"compute={report.compute_s:.6f}s shuffle={report.shuffle_s:.6f}s "
        f"broadcast={report.broadcast_s:.6f}s "
        f"p80_shuffle_msg={p80_s:.0f}B p80_broadcast_msg={p80_b:.0f}B "
        f"peak_bytes_max={max(report.peak_bytes)}"
    )


def cmd_query(args) -> int:
    topo = _topology(args)
    mode = _MODES[args.mode]
    qids = list(SUPPORTED_QUERIES) if args.qid == "all" else [args.qid]
    if args.variant != "default" and args.qid != "Q12":
        raise TopologyError("plan variants pa/pb exist only for Q12")
    scheme = "default_keys" if args.variant == "default" else "unpartitioned"
    dataset = generate(args.sf, skew=args.skew, seed=args.seed)
    parts = partition_dataset(dataset, topo.n, scheme)
    cluster = create_cluster(topo, mode, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    reports: dict[str, RunReport] = {}
    for qid in qids:
        result, report = run_query(qid, args.variant, cluster, parts)
        reports[qid] = report
        _write_result_csv(os.path.join(args.out, f"{qid.lower()}_result.csv"), result)
        with open(os.path.join(args.out, f"{qid.lower()}_report.json"), "w") as fh:
            fh.write(report.to_json())
        print(_summarize(qid, report))
    with open(os.path.join(args.out, "endpoints.json"), "w") as fh:
        json.dump(cluster.reports(), fh, indent=2)
    if args.qid == "all" and topo.v == 1:
        profile = bench_mod.profile_from_reports(reports, topo)
        with open(os.path.join(args.out, "profile.json"), "w") as fh:
            json.dump(
                {
                    "compute_time_v1": profile.compute_time_v1,
                    "shuffle_bytes": profile.shuffle_bytes,
                    "broadcast_bytes": profile.broadcast_bytes,
                },
                fh,
                indent=2,
            )
    return 0


def cmd_project(args) -> int:
    topo = _topology(args)
    profile = _load_profile(args.profile)
    rows = model_rows(
        topo,
        v_values=_int_list(args.v_list),
        bn_values=_float_list(args.bn_list) if args.bn_list else None,
        profile=profile,
    )
    out_rows = [
        {"v": r["v"], "bn_gbps": r["bn_gbps"], "projected_time_s": r["projected_time_s"]}
        for r in rows
    ]
    _write_csv(args.out, ["v", "bn_gbps", "projected_time_s"], out_rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shufflecast",
        description="Exchange-operator models, simulator, and query mini-engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("model", help="evaluate throughput models on a grid")
    _add_topology_flags(p)
    p.add_argument("--v-list", default=None, help="comma-separated machine counts")
    p.add_argument("--bn-list", default=None, help="comma-separated B_n values (GB/s)")
    p.add_argument("--profile", default=None, help="profile JSON for projected_time")
    p.add_argument("--out", default="-", help="CSV path or - for stdout")
    p.set_defaults(fn=cmd_model)

    p = sub.add_parser("bench", help="run an exchange microbenchmark sweep")
    _add_topology_flags(p)
    p.add_argument("--op", choices=bench_mod.BENCH_OPS, required=True)
    p.add_argument("--sizes-mib", required=True,
                   help="strictly increasing per-GPU message sizes in MiB")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--max-mib", type=int, default=1024, help="memory cap per buffer")
    p.add_argument("--mode", choices=sorted(_MODES), default="sim")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-", help="CSV path or - for stdout")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("query", help="run a query (or 'all') on generated data")
    _add_topology_flags(p)
    p.add_argument("--qid", required=True, choices=list(SUPPORTED_QUERIES) + ["all"])
    p.add_argument("--variant", choices=["default", "pa", "pb"], default="default")
    p.add_argument("--sf", type=float, default=0.01, help="scale factor")
    p.add_argument("--skew", type=float, default=0.0, help="Zipf exponent (0=uniform)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=sorted(_MODES), default="sim")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("project", help="project a V=1 profile onto a (V, B_n) grid")
    _add_topology_flags(p)
    p.add_argument("--profile", required=True, help="profile JSON from a V=1 suite run")
    p.add_argument("--v-list", required=True)
    p.add_argument("--bn-list", default=None)
    p.add_argument("--out", default="-", help="CSV path or - for stdout")
    p.set_defaults(fn=cmd_project)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # machine-readable failure contract
        print(
            json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
