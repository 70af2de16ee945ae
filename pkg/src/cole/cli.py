"""Command line: ``cole-bench {bench,prov-bench,verify}``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .bench import ENGINES, BenchConfig, ProvBenchConfig, run_bench, run_prov_bench, write_metrics
from .core import EngineConfig
from .query import decode_results, verify_prov
from .workload import WorkloadConfig


def _engine_cfg(args) -> EngineConfig:
    cfg = EngineConfig.from_file(args.config) if args.config else EngineConfig()
    overrides = {"size_ratio": args.size_ratio, "mht_fanout": args.fanout, "epsilon": args.epsilon,
                 "mem_capacity": args.mem_capacity, "merge_executor": args.executor}
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--engine", choices=ENGINES, default="cole")
    p.add_argument("--config", help="engine config file (.toml or .json)")
    p.add_argument("--size-ratio", type=int, help="T")
    p.add_argument("--fanout", type=int, help="Merkle file fanout m")
    p.add_argument("--epsilon", type=int)
    p.add_argument("--mem-capacity", type=int, help="B, entries in the level-0 tree")
    p.add_argument("--executor", choices=("thread", "process"), help="async merge executor")
    p.add_argument("--block-size", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dir", default=None, help="data directory (default: temporary under --out's folder)")
    p.add_argument("--keep", action="store_true", help="keep the data directory")
    p.add_argument("--out", default="results/bench", help="output stem; writes <out>.json and appends <out>.csv")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cole-bench", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    b = sub.add_parser("bench", help="throughput, latency and storage on a workload")
    _common(b)
    b.add_argument("--blocks", type=int, default=1000, help="run-phase blocks")
    b.add_argument("--workload", choices=("kvstore", "smallbank"), default="kvstore")
    b.add_argument("--keys", type=int, default=10_000, help="key space (kvstore base data / accounts)")
    b.add_argument("--read-ratio", type=float, default=0.0)
    b.add_argument("--distribution", choices=("uniform", "zipf"), default="uniform")
    b.add_argument("--no-load", action="store_true", help="skip the kvstore load phase")

    p = sub.add_parser("prov-bench", help="provenance query cost across range widths")
    _common(p)
    p.add_argument("--blocks", type=int, default=1000, help="history length in blocks")
    p.add_argument("--keys", type=int, default=100, help="base addresses updated by the history")
    p.add_argument("--widths", default="2,4,8,16,32,64,128")
    p.add_argument("--queries", type=int, default=20, help="queries per width")
    p.add_argument("--bundle", help="also write one proof bundle (JSON) for `verify`")

    v = sub.add_parser("verify", help="check a provenance proof bundle")
    v.add_argument("bundle")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.cmd == "verify":
        doc = json.loads(Path(args.bundle).read_text())
        ok = verify_prov(bytes.fromhex(doc["addr"]), doc["blk_l"], doc["blk_u"],
                         decode_results(bytes.fromhex(doc["results"])),
                         bytes.fromhex(doc["proof"]), bytes.fromhex(doc["h_state"]))
        print("OK" if ok else "FAIL")
        return 0 if ok else 1

    try:
        ecfg = _engine_cfg(args)
    except (ValueError, TypeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    data = args.dir or str(Path(args.out).parent / f".data-{args.engine}")
    if args.cmd == "bench":
        wl = WorkloadConfig(kind=args.workload, blocks=args.blocks, block_size=args.block_size,
                            n_keys=args.keys, read_ratio=args.read_ratio,
                            distribution=args.distribution, load=not args.no_load, seed=args.seed)
        metrics = run_bench(BenchConfig(args.engine, wl, ecfg, data, args.keep))
        lat = metrics["latency_us"]
        print(f"{args.engine}: {metrics['puts']} puts, {metrics['gets']} gets in {metrics['elapsed_s']:.2f}s "
              f"({metrics['throughput_ops_s']:.0f} ops/s); put latency p50 {lat['p50']:.1f}us "
              f"max {lat['max']:.0f}us; storage {metrics['storage_bytes']['total']} bytes")
    else:
        widths = tuple(int(w) for w in args.widths.split(","))
        pc = ProvBenchConfig(args.engine, ecfg, args.keys, args.blocks, args.block_size, widths,
                             args.queries, args.seed, data, args.keep)
        metrics = run_prov_bench(pc, args.bundle)
        for row in metrics["widths"]:
            print(f"width {row['width']:4d}: query {row['query_us']:9.1f}us  verify {row['verify_us']:9.1f}us  "
                  f"proof {row['proof_bytes']:9.0f} B")
        print("all proofs verified" if metrics["all_verified"] else "SOME PROOFS FAILED")
    js, cs = write_metrics(metrics, args.out)
    print(f"wrote {js} and {cs}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
