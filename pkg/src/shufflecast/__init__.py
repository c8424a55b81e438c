"""Data-parallel exchange operators at desk scale.

A small distributed analytical query engine whose shuffle and broadcast
exchange operators run over either a real in-process transport or a
deterministic virtual-time simulator, paired with the closed-form
throughput/time models the simulator is designed to agree with.
"""

from .bench import BenchSpec, percentile, profile_from_reports, run_bench, run_suite
from .collectives import (
    all_reduce,
    barrier,
    broadcast_collective,
    broadcast_p2p,
    group_execute,
)
from .data import (
    Dataset,
    PartitionedDataset,
    generate,
    load_csv,
    load_csv_dir,
    partition_dataset,
    write_csv,
)
from .engine import (
    ExchangePlan,
    PlanError,
    RunReport,
    q12_variants,
    reference_run,
    result_digest,
    run_query,
)
from .exchange import (
    ExchangeStats,
    broadcast_table,
    hash_keys,
    hash_partition,
    shuffle_table,
    size_exchange,
)
from .models import (
    ExchangeChoice,
    ModelDomainError,
    WorkloadProfile,
    broadcast_shuffle_ratio_threshold,
    broadcast_throughput,
    broadcast_time,
    choose_exchange,
    local_faster_holds,
    model_rows,
    project_workload,
    shuffle_throughput,
    shuffle_time,
)
from .queries import SUPPORTED_QUERIES
from .relops import filter_table, group_aggregate, local_hash_join
from .table import ColumnTable, Column, concat_tables, tables_equal
from .topology import Topology, TopologyError, parse_config, parse_shorthand
from .transport import (
    MODE_IN_PROCESS,
    MODE_SIMULATED,
    Cluster,
    DeadlockError,
    Endpoint,
    GroupOp,
    ProtocolError,
    VirtualBytes,
    create_cluster,
    run_workers,
)

__version__ = "0.1.0"
