#!/usr/bin/env python3
"""Provenance query time and proof size across range widths, COLE vs MPT."""

import argparse
import tempfile
from pathlib import Path

from cole.bench import ProvBenchConfig, run_prov_bench, write_metrics
from cole.core import EngineConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--blocks", type=int, default=2000)
    ap.add_argument("--block-size", type=int, default=100)
    ap.add_argument("--keys", type=int, default=100)
    ap.add_argument("--widths", default="2,4,8,16,32,64,128")
    ap.add_argument("--queries", type=int, default=50)
    ap.add_argument("--seed", type=int, default=9)
    ap.add_argument("--out", default="results/prov_scaling")
    args = ap.parse_args()

    widths = tuple(int(w) for w in args.widths.split(","))
    with tempfile.TemporaryDirectory() as tmp:
        for engine in ("cole", "mpt"):
            cfg = ProvBenchConfig(engine, EngineConfig(), base_keys=args.keys, blocks=args.blocks,
                                  block_size=args.block_size, widths=widths, queries=args.queries,
                                  seed=args.seed, path=str(Path(tmp) / engine))
            m = run_prov_bench(cfg)
            write_metrics(m, Path(args.out) / engine)
            print(f"{engine} (all verified: {m['all_verified']})")
            print(f"  {'width':>5} {'query us':>10} {'verify us':>10} {'proof B':>10}")
            for r in m["widths"]:
                print(f"  {r['width']:>5} {r['query_us']:>10.0f} {r['verify_us']:>10.0f} {r['proof_bytes']:>10.0f}")
            lo, hi = m["widths"][0], m["widths"][-1]
            print(f"  ratio {hi['width']}/{lo['width']}: proof {hi['proof_bytes'] / lo['proof_bytes']:.2f}, "
                  f"time {hi['query_us'] / lo['query_us']:.2f}")


if __name__ == "__main__":
    main()
