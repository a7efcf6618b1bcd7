"""Benchmark harness: topologies, workloads, the experiment matrix, reports."""

from .driver import ClientDriver, DriverStats
from .experiments import ExperimentSpec, RunResult, Toggles, run
from .report import read_csv, summarize, write_csv
from .topology import BlockFeeder, Cluster, MockSink, NodeSpec, default_nodes, load_topology, parse_topology, provision
from .workload import TransferWorkload, make_accounts, prebuild_blocks

__all__ = [
    "BlockFeeder",
    "ClientDriver",
    "Cluster",
    "DriverStats",
    "ExperimentSpec",
    "MockSink",
    "NodeSpec",
    "RunResult",
    "Toggles",
    "TransferWorkload",
    "default_nodes",
    "load_topology",
    "make_accounts",
    "parse_topology",
    "prebuild_blocks",
    "provision",
    "read_csv",
    "run",
    "summarize",
    "write_csv",
]
