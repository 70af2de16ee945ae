#!/usr/bin/env python3
"""Storage size and put latency of COLE (sync and async) against the MPT baseline.

Writes one JSON/CSV row per engine under ``--out`` and prints a comparison.
"""

import argparse
import tempfile
from pathlib import Path

from cole.bench import BenchConfig, run_bench, write_metrics
from cole.core import EngineConfig
from cole.workload import WorkloadConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--blocks", type=int, default=10_000, help="total blocks, load phase included")
    ap.add_argument("--block-size", type=int, default=100)
    ap.add_argument("--keys", type=int, default=100_000)
    ap.add_argument("--mem-capacity", type=int, default=4096)
    ap.add_argument("--engines", default="cole,cole-async,mpt")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="results/storage_latency")
    args = ap.parse_args()

    load_blocks = -(-args.keys // args.block_size)
    wl = WorkloadConfig(kind="kvstore", blocks=args.blocks - load_blocks, block_size=args.block_size,
                        n_keys=args.keys, read_ratio=0.0, seed=args.seed)
    cfg = EngineConfig(mem_capacity=args.mem_capacity)
    rows = {}
    with tempfile.TemporaryDirectory() as tmp:
        for engine in args.engines.split(","):
            m = run_bench(BenchConfig(engine, wl, cfg, str(Path(tmp) / engine)))
            write_metrics(m, Path(args.out) / engine)
            rows[engine] = m
            lat = m["latency_us"]
            print(f"{engine:>10}: {m['storage_bytes']['total'] / 1e6:9.1f} MB  "
                  f"{m['throughput_ops_s']:9.0f} ops/s  p50 {lat['p50']:7.2f} us  max {lat['max'] / 1e3:8.1f} ms")
    if "mpt" in rows:
        for engine in rows.keys() - {"mpt"}:
            ratio = rows[engine]["storage_bytes"]["total"] / rows["mpt"]["storage_bytes"]["total"]
            print(f"{engine} / mpt storage: {ratio:.3f}")
    if {"cole", "cole-async"} <= rows.keys():
        s, a = rows["cole"]["latency_us"], rows["cole-async"]["latency_us"]
        print(f"max latency sync/async: {s['max'] / a['max']:.1f}x, median async/sync: {a['p50'] / s['p50']:.2f}x")


if __name__ == "__main__":
    main()
