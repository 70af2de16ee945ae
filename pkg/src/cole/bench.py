"""Benchmark drivers: throughput, put latency, storage and provenance cost.

Each driver returns a flat-ish metrics dict that :func:`write_metrics` dumps
as one JSON document plus one CSV row.
"""

from __future__ import annotations

import csv
import hashlib
import json
import random
import shutil
import statistics
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baseline_mpt import MPT, proof_size
from .baseline_mpt import verify_prov as mpt_verify
from .core import EngineConfig
from .engine import Engine
from .query import encode_results, verify_prov
from .workload import Workload, WorkloadConfig, key_address

ENGINES = ("cole", "cole-async", "mpt")


@dataclass
class BenchConfig:
    engine: str = "cole"
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    engine_cfg: EngineConfig = field(default_factory=EngineConfig)
    path: str = "bench-data"
    keep: bool = False  # leave the data directory in place afterwards

    def __post_init__(self) -> None:
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}")


def effective_config(kind: str, cfg: EngineConfig) -> EngineConfig:
    return replace(cfg, async_merge=(kind == "cole-async"))


def open_engine(kind: str, path: str | Path, cfg: EngineConfig, **kw):
    """Fresh store of the requested kind at ``path`` (wiped first)."""
    shutil.rmtree(path, ignore_errors=True)
    if kind == "mpt":
        return MPT(path)
    return Engine(path, effective_config(kind, cfg), **kw)


def latency_stats(samples: Sequence[float]) -> dict:
    """Quantiles and box-plot statistics in microseconds."""
    if len(samples) == 0:
        return {}
    a = np.asarray(samples, dtype=np.float64) * 1e6
    q1, med, q3 = np.percentile(a, [25, 50, 75])
    iqr = q3 - q1
    inside = a[(a >= q1 - 1.5 * iqr) & (a <= q3 + 1.5 * iqr)]
    return {
        "count": int(a.size), "mean": float(a.mean()),
        "p50": float(med), "p90": float(np.percentile(a, 90)), "p99": float(np.percentile(a, 99)),
        "p999": float(np.percentile(a, 99.9)), "max": float(a.max()),
        "box": {"q1": float(q1), "median": float(med), "q3": float(q3),
                "whisker_lo": float(inside.min()), "whisker_hi": float(inside.max()),
                "outliers": int(a.size - inside.size)},
    }


def drive(store, blocks, start_height: int = 1) -> dict:
    """Feed blocks to an engine or MPT; returns op counts and trace digest."""
    trace = hashlib.sha256()
    puts = gets = 0
    h = start_height
    for ops in blocks:
        writes = []
        for op in ops:
            if op[0] == "get":
                store.get(op[1])
                gets += 1
            else:
                writes.append((op[1], op[2]))
        puts += len(writes)
        digest = store.write_block(h, writes)
        trace.update(h.to_bytes(8, "big") + digest)
        h += 1
    return {"puts": puts, "gets": gets, "height": h - 1,
            "trace": trace.hexdigest(), "final_digest": digest.hex() if h > start_height else None}


def run_bench(cfg: BenchConfig) -> dict:
    wl = Workload(cfg.workload)
    store = open_engine(cfg.engine, cfg.path, cfg.engine_cfg)
    t0 = time.perf_counter()
    counts = drive(store, wl.blocks())
    if cfg.engine == "cole-async":
        store.wait_merges()
    elapsed = time.perf_counter() - t0
    ops = counts["puts"] + counts["gets"]
    metrics = {
        "engine": cfg.engine,
        "workload": asdict(cfg.workload),
        "config": effective_config(cfg.engine, cfg.engine_cfg).to_dict(),
        "blocks": counts["height"],
        "puts": counts["puts"],
        "gets": counts["gets"],
        "elapsed_s": elapsed,
        "throughput_ops_s": ops / elapsed if elapsed > 0 else 0.0,
        "latency_us": latency_stats(store.latencies),
        "h_state_trace": counts["trace"],
        "final_digest": counts["final_digest"],
    }
    if isinstance(store, MPT):
        size = store.storage_bytes()
        metrics["storage_bytes"] = {"mpt": size, "total": size}
        metrics["mpt_nodes"] = len(store.store)
    else:
        metrics["storage_bytes"] = store.storage_bytes()
        metrics["page_reads"] = store.page_reads()
        metrics["page_reads_per_get"] = store.page_reads() / counts["gets"] if counts["gets"] else 0.0
    store.close()
    if not cfg.keep:
        shutil.rmtree(cfg.path, ignore_errors=True)
    return metrics


@dataclass
class ProvBenchConfig:
    engine: str = "cole"
    engine_cfg: EngineConfig = field(default_factory=EngineConfig)
    base_keys: int = 100
    blocks: int = 1000
    block_size: int = 100
    widths: tuple[int, ...] = (2, 4, 8, 16, 32, 64, 128)
    queries: int = 20
    seed: int = 0
    path: str = "prov-data"
    keep: bool = False


def prov_history(cfg: ProvBenchConfig) -> Workload:
    """Update-heavy history: ``base_keys`` addresses, then random updates of them."""
    return Workload(WorkloadConfig(kind="kvstore", blocks=cfg.blocks, block_size=cfg.block_size,
                                   n_keys=cfg.base_keys, read_ratio=0.0, seed=cfg.seed))


def run_prov_bench(cfg: ProvBenchConfig, bundle_path: str | Path | None = None) -> dict:
    wl = prov_history(cfg)
    store = open_engine(cfg.engine, cfg.path, cfg.engine_cfg)
    counts = drive(store, wl.blocks())
    height = counts["height"]
    rng = random.Random(f"{cfg.seed}/prov")
    rows = []
    all_ok = True
    need_bundle = bundle_path is not None
    for w in cfg.widths:
        if w > height:
            raise ValueError(f"width {w} exceeds the history of {height} blocks")
        qt, vt, pb = [], [], []
        for _ in range(cfg.queries):
            addr = key_address(rng.randrange(cfg.base_keys))
            lo = rng.randint(1, height - w + 1)
            hi = lo + w - 1
            if cfg.engine == "mpt":
                t0 = time.perf_counter()
                values, proofs = store.prov_query(addr, lo, hi)
                t1 = time.perf_counter()
                ok = mpt_verify({h: store.root_at(h) for h in range(lo, hi + 1)}, addr, values, proofs)
                t2 = time.perf_counter()
                size = proof_size(proofs)
            else:
                digest = store.state_digest()
                t0 = time.perf_counter()
                results, proof = store.prov_query(addr, lo, hi)
                raw = proof.to_bytes()
                t1 = time.perf_counter()
                ok = verify_prov(addr, lo, hi, results, raw, digest)
                t2 = time.perf_counter()
                size = len(raw)
                if need_bundle:
                    write_bundle(bundle_path, addr, lo, hi, results, raw, digest)
                    need_bundle = False
            all_ok &= ok
            qt.append(t1 - t0)
            vt.append(t2 - t1)
            pb.append(size)
        rows.append({"width": w, "query_us": statistics.fmean(qt) * 1e6,
                     "query_us_p50": statistics.median(qt) * 1e6,
                     "verify_us": statistics.fmean(vt) * 1e6,
                     "verify_us_p50": statistics.median(vt) * 1e6, "proof_bytes": statistics.fmean(pb)})
    store.close()
    if not cfg.keep:
        shutil.rmtree(cfg.path, ignore_errors=True)
    return {"engine": cfg.engine, "config": effective_config(cfg.engine, cfg.engine_cfg).to_dict(),
            "blocks": height,
            "base_keys": cfg.base_keys, "queries": cfg.queries, "all_verified": all_ok, "widths": rows}


def write_bundle(path: str | Path, addr: bytes, lo: int, hi: int, results, proof: bytes,
                 digest: bytes) -> None:
    """A self-contained provenance answer that ``cole verify`` can check."""
    doc = {"addr": addr.hex(), "blk_l": lo, "blk_u": hi,
           "results": encode_results(results).hex(), "proof": proof.hex(), "h_state": digest.hex()}
    Path(path).write_text(json.dumps(doc, indent=1))


def write_metrics(metrics: dict, out: str | Path) -> tuple[Path, Path]:
    """``out.json`` with the full document; ``out.csv`` gains one flattened row."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    js = out.with_suffix(".json")
    js.write_text(json.dumps(metrics, indent=1))
    row = _flatten(metrics)
    cs = out.with_suffix(".csv")
    new = not cs.exists()
    with open(cs, "a", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(row))
        if new:
            w.writeheader()
        w.writerow(row)
    return js, cs


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        name = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, name + "."))
        elif isinstance(v, list):
            out[name] = json.dumps(v)
        else:
            out[name] = v
    return out
