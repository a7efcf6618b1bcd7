"""Command line entry point: ``permchain-bench run <experiment> [...]``."""

from __future__ import annotations

import argparse
import sys

from .experiments import EXPERIMENTS, ExperimentSpec, Toggles, run
from .report import summarize, write_csv

_ALIASES = {name.split("_")[0].lower(): name for name in EXPERIMENTS}


def _resolve_experiment(name: str) -> str:
    if name in EXPERIMENTS:
        return name
    lowered = name.lower()
    if lowered in _ALIASES:
        return _ALIASES[lowered]
    for candidate in EXPERIMENTS:
        if candidate.lower() == lowered:
            return candidate
    raise argparse.ArgumentTypeError(
        f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)} (or e1..e6)"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="permchain-bench",
        description="Provision a desk-scale topology and run one of the ablation experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run one experiment and print a summary table")
    runp.add_argument("experiment", type=_resolve_experiment,
                      help="E1_transport | E2_orderer_payload | E3_peer_cumulative | "
                           "E4_param_grid | E5_blocksize | E6_end2end (or e1..e6)")
    runp.add_argument("--toggles", default=None,
                      help="comma list of o1,o2,p1,p2,p3 (or 'all'/'none'); "
                           "default: the experiment's preset sweep")
    runp.add_argument("--txs", type=int, default=100_000, help="transactions per run")
    runp.add_argument("--payload", type=int, default=None,
                      help="payload padding bytes (default: 2900, or the E2 sweep)")
    runp.add_argument("--block-size", type=int, default=None,
                      help="transactions per block (default: 100, or the E1/E5 sweep)")
    runp.add_argument("--repeats", type=int, default=1)
    runp.add_argument("--seed", type=int, default=42)
    runp.add_argument("--csv", default=None, help="write per-run rows to this CSV file")
    runp.add_argument("--topology", default=None, help="topology file (key=value sections)")
    runp.add_argument("--sig-mode", choices=("ed25519", "hmac"), default=None,
                      help="signature scheme (default: per-experiment)")
    runp.add_argument("--accounts", type=int, default=10_000)
    runp.add_argument("--window", type=int, default=1000, help="client in-flight window")
    runp.add_argument("--workload", choices=("nonconflicting", "uniform"), default="nonconflicting")
    runp.add_argument("--mode", choices=("inproc", "tcp"), default="inproc")
    runp.add_argument("--bandwidth-mbps", type=float, default=None,
                      help="emulated per-node egress link (default: per-experiment)")
    runp.add_argument("--n-endorsers", type=int, default=None)
    # orderer flags
    runp.add_argument("--opt-o1", action="store_true", help="ID-only ordering")
    runp.add_argument("--opt-o2", action="store_true", help="pipelined intake")
    runp.add_argument("--block-timeout-ms", type=float, default=100.0)
    runp.add_argument("--intake-pool", type=int, default=None)
    # committer flags
    runp.add_argument("--opt-p1", action="store_true", help="hash-table world state")
    runp.add_argument("--opt-p2", action="store_true", help="parallel pipeline + offload")
    runp.add_argument("--opt-p3", action="store_true", help="unmarshal cache")
    runp.add_argument("--state-backend", choices=("memory", "durable"), default=None,
                      help="alias for --opt-p1 (memory) / baseline (durable)")
    runp.add_argument("--shepherds", type=int, default=None,
                      help="blocks concurrently in the pipeline (default: host-scaled)")
    runp.add_argument("--tx-validators", type=int, default=None,
                      help="transaction validation workers (default: host-scaled)")
    runp.add_argument("--grid", default=None,
                      help="E4 grid points, e.g. '1,4,16,32' (used for both axes)")
    runp.add_argument("--workdir", default=None, help="scratch directory for durable files")
    return parser


def _toggles_from_args(args) -> Toggles | None:
    flag_based = Toggles(
        o1=args.opt_o1, o2=args.opt_o2, p1=args.opt_p1, p2=args.opt_p2, p3=args.opt_p3
    )
    if args.state_backend == "memory":
        flag_based.p1 = True
    if args.toggles is not None:
        toggles = Toggles.parse(args.toggles)
        for name in ("o1", "o2", "p1", "p2", "p3"):
            if getattr(flag_based, name):
                setattr(toggles, name, True)
        return toggles
    if any((args.opt_o1, args.opt_o2, args.opt_p1, args.opt_p2, args.opt_p3,
            args.state_backend is not None)):
        return flag_based
    return None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    grid = tuple(int(x) for x in args.grid.split(",")) if args.grid else None
    spec = ExperimentSpec(
        name=args.experiment,
        toggles=_toggles_from_args(args),
        tx_count=args.txs,
        payload_len=args.payload,
        block_size=args.block_size,
        repeats=args.repeats,
        seed=args.seed,
        sig_mode=args.sig_mode,
        accounts=args.accounts,
        window=args.window,
        shepherds=args.shepherds,
        validators=args.tx_validators,
        block_timeout_ms=args.block_timeout_ms,
        intake_pool=args.intake_pool,
        mode=args.mode,
        bandwidth_mbps=args.bandwidth_mbps,
        n_endorsers=args.n_endorsers,
        workload=args.workload,
        topology_path=args.topology,
        workdir=args.workdir,
        **({"grid": (grid, grid)} if grid else {}),
    )
    try:
        results = run(spec)
        if not results:
            print("error: experiment produced no results", file=sys.stderr)
            return 1
        if args.csv:
            write_csv(args.csv, results, extra_meta={"experiment": spec.name})
            print(f"wrote {len(results)} rows to {args.csv}")
        print(summarize(results))
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
