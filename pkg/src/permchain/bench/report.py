"""CSV output and per-configuration summary tables."""

from __future__ import annotations

import csv
import io
import statistics
from collections import OrderedDict

CSV_COLUMNS = [
    "experiment",
    "toggle_set",
    "block_size",
    "payload",
    "repeat",
    "throughput_tx_s",
    "block_latency_ms_mean",
    "block_latency_ms_std",
]

MEASUREMENT_NOTES = (
    "block_latency_ms: wall time from block delivery at the committer to commit completion",
    "throughput_tx_s: tx_count / (last commit completion - first block delivery)",
    "E1/E2 use a mock peer that discards blocks; their latency column is the inter-block arrival gap",
)


def _meta_lines(results, extra_meta=None):
    meta = OrderedDict()
    for result in results:
        for key, value in result.meta.items():
            if key in ("seed", "sig_mode", "mode", "bandwidth_mbps", "workload", "window"):
                meta.setdefault(key, set()).add(str(value))
    lines = [f"# {note}" for note in MEASUREMENT_NOTES]
    for key, values in meta.items():
        lines.append(f"# {key}={','.join(sorted(values))}")
    for key, value in (extra_meta or {}).items():
        lines.append(f"# {key}={value}")
    return lines


def write_csv(path: str, results, extra_meta: dict | None = None) -> None:
    if not results:
        raise ValueError("no results to write")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in _meta_lines(results, extra_meta):
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for result in results:
            writer.writerow(result.csv_row())


def read_csv(path: str):
    """Rows as dicts, skipping the comment header."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("".join(lines))))


def summarize(results) -> str:
    if not results:
        raise ValueError("no results to summarize")
    groups: "OrderedDict[tuple, list]" = OrderedDict()
    for result in results:
        key = (result.experiment, result.toggle_set, result.block_size, result.payload)
        groups.setdefault(key, []).append(result)
    out = []
    for note in MEASUREMENT_NOTES:
        out.append(f"# {note}")
    header = f"{'experiment':<20} {'toggles':<22} {'blk':>6} {'payload':>8} {'n':>3} {'tx/s':>16} {'latency ms':>18}"
    out.append(header)
    out.append("-" * len(header))
    for (experiment, toggles, block_size, payload), rs in groups.items():
        thr = [r.throughput_tx_s for r in rs]
        lat = [r.block_latency_ms_mean for r in rs]
        thr_mean = statistics.fmean(thr)
        thr_std = statistics.stdev(thr) if len(thr) > 1 else 0.0
        lat_mean = statistics.fmean(lat)
        lat_std = statistics.stdev(lat) if len(lat) > 1 else 0.0
        out.append(
            f"{experiment:<20} {toggles:<22} {block_size:>6} {payload:>8} {len(rs):>3} "
            f"{thr_mean:>9.0f} ± {thr_std:<5.0f}{lat_mean:>11.2f} ± {lat_std:<5.2f}"
        )
    return "\n".join(out)
