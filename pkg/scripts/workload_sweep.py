#!/usr/bin/env python3
"""Throughput and latency over workload mixes: SmallBank, and KVStore with
several read ratios under uniform and Zipfian keys."""

import argparse
import tempfile
from pathlib import Path

from cole.bench import BenchConfig, run_bench, write_metrics
from cole.core import EngineConfig
from cole.workload import WorkloadConfig

MIXES = {
    "smallbank": dict(kind="smallbank"),
    "kv-write": dict(read_ratio=0.0),
    "kv-50": dict(read_ratio=0.5),
    "kv-read": dict(read_ratio=0.9),
    "kv-50-zipf": dict(read_ratio=0.5, distribution="zipf"),
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--blocks", type=int, default=1000)
    ap.add_argument("--keys", type=int, default=10_000)
    ap.add_argument("--engines", default="cole,cole-async,mpt")
    ap.add_argument("--mixes", default=",".join(MIXES))
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--out", default="results/workload_sweep")
    args = ap.parse_args()

    print(f"{'mix':>12} {'engine':>10} {'ops/s':>10} {'p50 us':>8} {'max ms':>8} {'MB':>8}")
    with tempfile.TemporaryDirectory() as tmp:
        for mix in args.mixes.split(","):
            wl = WorkloadConfig(blocks=args.blocks, n_keys=args.keys, seed=args.seed, **MIXES[mix])
            for engine in args.engines.split(","):
                m = run_bench(BenchConfig(engine, wl, EngineConfig(), str(Path(tmp) / f"{mix}-{engine}")))
                m["mix"] = mix
                write_metrics(m, Path(args.out) / "sweep")
                lat = m["latency_us"]
                print(f"{mix:>12} {engine:>10} {m['throughput_ops_s']:>10.0f} {lat['p50']:>8.2f} "
                      f"{lat['max'] / 1e3:>8.1f} {m['storage_bytes']['total'] / 1e6:>8.1f}")


if __name__ == "__main__":
    main()
