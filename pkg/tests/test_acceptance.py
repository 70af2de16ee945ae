"""Acceptance checks, one test per criterion, each at its stated scale.

Every test records a one-line verdict; ``conftest.py`` prints them all at the
end of the session.  Running this file directly prints the same lines.
"""

from __future__ import annotations

import random
from bisect import bisect_right

import pytest

from cole.bench import BenchConfig, ProvBenchConfig, drive, run_bench, run_prov_bench
from cole.core import KEY_LEN, MAX_HEIGHT, EngineConfig, mht_layer_sizes
from cole.engine import Engine
from cole.merkle_file import MerkleBuilder, layer_offsets, naive_merkle_bytes
from cole.query import RUN_PROOF, ProvenanceProof, verify_prov
from cole.run import Run
from cole.workload import Workload, WorkloadConfig

from conftest import VersionedMap, fill, rand_addr

VERDICTS: dict[int, str] = {}


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    VERDICTS[n] = line
    print(line)
    assert ok, line


# --- shared fixtures -------------------------------------------------------

@pytest.fixture(scope="module")
def history(tmp_path_factory):
    """10^3 blocks x 100 puts, a mix of new and updated addresses."""
    rng = random.Random(2024)
    e = Engine(tmp_path_factory.mktemp("hist"), EngineConfig(mem_capacity=256))
    oracle, addrs = VersionedMap(), []
    fill(e, oracle, rng, addrs, 1000, 100, fresh=0.3)
    yield e, oracle, addrs
    e.close()


@pytest.fixture(scope="module")
def write_heavy(tmp_path_factory):
    """10^4 blocks x 100 puts (10^5-key load phase, then updates) on all three engines."""
    wl = WorkloadConfig(kind="kvstore", blocks=9000, block_size=100, n_keys=100_000, read_ratio=0.0, seed=7)
    out = {}
    for engine in ("cole", "cole-async", "mpt"):
        path = tmp_path_factory.mktemp(engine)
        out[engine] = run_bench(BenchConfig(engine, wl, EngineConfig(), str(path / "data")))
    return out


# --- 1 ---------------------------------------------------------------------

def test_criterion_1_model_error_bound(tmp_path):
    cfg = EngineConfig(epsilon=23, size_ratio=4, mht_fanout=4)
    audited = {"runs": 0, "keys": 0, "worst": 0}

    def audit(run: Run) -> None:
        worst, checked = run.index.audit(run.view)
        audited["runs"] += 1
        audited["keys"] += checked
        audited["worst"] = max(audited["worst"], worst)

    e = Engine(tmp_path, cfg, run_observer=audit)
    rng = random.Random(1)
    fill(e, VersionedMap(), rng, [], 1000, 100, fresh=0.5)
    e.close()
    ok = audited["runs"] > 0 and audited["worst"] <= cfg.epsilon
    verdict(1, ok, f"{audited['runs']} runs, {audited['keys']} keys checked, max error {float(audited['worst']):.3f} <= 23")


# --- 2 ---------------------------------------------------------------------

def test_criterion_2_oracle_equivalence(history):
    e, oracle, addrs = history
    rng = random.Random(2)
    mismatches = calls = 0
    for _ in range(1000):
        a = rng.choice(addrs) if rng.random() < 0.9 else rand_addr(rng)
        blk = rng.randint(1, 1000)
        lo = rng.randint(1, 1000)
        hi = min(1000, lo + rng.randint(0, 64))
        mismatches += e.get(a) != oracle.get_at(a, MAX_HEIGHT)
        mismatches += e.get_at(a, blk) != oracle.get_at(a, blk)
        mismatches += e.prov_query(a, lo, hi)[0] != oracle.prov(a, lo, hi)
        calls += 3
    verdict(2, mismatches == 0, f"{calls} get/get_at/prov_query calls, {mismatches} mismatches")


# --- 3 ---------------------------------------------------------------------

def test_criterion_3_merkle_streaming(tmp_path):
    rng = random.Random(3)
    mismatches = 0
    for case in range(200):
        n = rng.randint(1, 10_000)
        m = rng.choice([2, 4, 8, 16])
        leaves = [rng.randbytes(32) for _ in range(n)]
        path = tmp_path / f"c{case}.h"
        b = MerkleBuilder(path, n, m)
        for h in leaves:
            b.add(h)
        b.finish()
        mismatches += path.read_bytes() != naive_merkle_bytes(leaves, m)
        path.unlink()
    example = layer_offsets(mht_layer_sizes(4, 2)) == [0, 4, 6]
    verdict(3, mismatches == 0 and example, f"200 cases, {mismatches} mismatches, n=4/m=2 offsets {layer_offsets(mht_layer_sizes(4, 2))}")


# --- 4 ---------------------------------------------------------------------

def _mutants(results, proof: ProvenanceProof, raw: bytes, digest: bytes, headers, rng):
    """(label, results, proof bytes, digest) variants, each differing from the honest answer."""
    out = []
    # single-bit flips in the proof
    for _ in range(8):
        b = bytearray(raw)
        bit = rng.randrange(len(b) * 8)
        b[bit // 8] ^= 1 << (bit % 8)
        out.append(("bit", results, bytes(b), digest))
    # single-bit flips in the results
    if results:
        i = rng.randrange(len(results))
        h, v = results[i]
        vb = bytearray(v)
        bit = rng.randrange(len(vb) * 8)
        vb[bit // 8] ^= 1 << (bit % 8)
        out.append(("bit", results[:i] + [(h, bytes(vb))] + results[i + 1:], raw, digest))
        out.append(("bit", results[:i] + [(h ^ (1 << rng.randrange(8)), v)] + results[i + 1:], raw, digest))
    # record drops: a result, or a boundary record carried by a run unit
    if results:
        i = rng.randrange(len(results))
        out.append(("drop", results[:i] + results[i + 1:], raw, digest))
    for idx, u in enumerate(proof.units):
        if u.kind == RUN_PROOF and (u.head or u.tail):
            p = ProvenanceProof.from_bytes(raw)
            if p.units[idx].head:
                p.units[idx].head.pop(0)
            else:
                p.units[idx].tail.pop()
            out.append(("drop", results, p.to_bytes(), digest))
            break
    # root swaps: another unit's root, or an older block's state digest
    with_roots = [i for i, u in enumerate(proof.units) if u.root != bytes(32)]
    if len(with_roots) >= 2:
        i, j = rng.sample(with_roots, 2)
        p = ProvenanceProof.from_bytes(raw)
        p.units[i].root, p.units[j].root = p.units[j].root, p.units[i].root
        out.append(("swap", results, p.to_bytes(), digest))
    older = [d for _, d in headers[-50:-1] if d != digest]
    if older:
        out.append(("swap", results, raw, rng.choice(older)))
    return [m for m in out if (m[1], m[2], m[3]) != (results, raw, digest)]


def test_criterion_4_proof_soundness(history):
    e, oracle, addrs = history
    rng = random.Random(4)
    digest = e.state_digest()
    honest_ok = 0
    tried = accepted = 0
    kinds = {"bit": 0, "drop": 0, "swap": 0}
    for _ in range(1000):
        a = rng.choice(addrs) if rng.random() < 0.9 else rand_addr(rng)
        lo = rng.randint(1, 1000)
        hi = min(1000, lo + rng.randint(0, 64))
        results, proof = e.prov_query(a, lo, hi)
        raw = proof.to_bytes()
        honest_ok += verify_prov(a, lo, hi, results, raw, digest)
        for label, r2, p2, d2 in _mutants(results, proof, raw, digest, e.headers, rng):
            tried += 1
            kinds[label] += 1
            accepted += verify_prov(a, lo, hi, r2, p2, d2)
    ok = honest_ok == 1000 and tried >= 10_000 and accepted == 0
    verdict(4, ok, f"{honest_ok}/1000 honest proofs verify; {tried} mutations {kinds}, {accepted} accepted")


# --- 5 ---------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_5_async_determinism(tmp_path):
    cfg = EngineConfig(async_merge=True)
    wl = WorkloadConfig(kind="kvstore", blocks=9000, block_size=100, n_keys=100_000, seed=5)
    traces = []
    for rep in range(5):
        delays = random.Random(100 + rep)
        e = Engine(tmp_path / f"r{rep}", cfg, merge_delay=lambda: delays.uniform(0.0, 0.05))
        drive(e, Workload(wl).blocks())
        traces.append([d for _, d in e.headers])
        e.close()
    blocks = len(traces[0])
    diverged = sum(any(t[i] != traces[0][i] for t in traces[1:]) for i in range(blocks))
    verdict(5, blocks == 10_000 and diverged == 0,
            f"5 runs x {blocks} blocks with 0-50 ms merge delays, {diverged} divergent block digests")


# --- 6 ---------------------------------------------------------------------

def test_criterion_6_io_bound(history):
    e, _, addrs = history
    runs = e.runs()
    rng = random.Random(6)
    contents = {id(r): [x[:KEY_LEN] for x in r.records()] for r in runs}
    violations = wrong = 0
    worst = 0
    for _ in range(10_000):
        r = rng.choice(runs)
        keys = contents[id(r)]
        q = rng.choice(keys) if rng.random() < 0.5 else rand_addr(rng) + rng.randint(0, 1000).to_bytes(8, "big")
        before = r.page_reads
        hit = r.search_unfiltered(q)
        reads = r.page_reads - before
        worst = max(worst, reads)
        violations += reads > 1 + 2 * r.index.n_layers
        i = bisect_right(keys, q) - 1
        wrong += (hit is None) != (i < 0) or (hit is not None and hit[0] != i)
    layers = sorted({r.index.n_layers for r in runs})
    verdict(6, violations == 0 and wrong == 0,
            f"10000 run searches over {len(runs)} runs (index layers {layers}), max {worst} page reads, "
            f"{violations} violations, {wrong} wrong answers")


# --- 7 ---------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_7_storage(write_heavy):
    cole = write_heavy["cole"]["storage_bytes"]["total"]
    mpt = write_heavy["mpt"]["storage_bytes"]["total"]
    ratio = cole / mpt
    verdict(7, ratio <= 0.40, f"COLE {cole / 1e6:.1f} MB vs MPT {mpt / 1e6:.1f} MB, ratio {ratio:.3f} <= 0.40 "
            f"(async COLE {write_heavy['cole-async']['storage_bytes']['total'] / 1e6:.1f} MB)")


# --- 8 ---------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_8_tail_latency(write_heavy):
    s = write_heavy["cole"]["latency_us"]
    a = write_heavy["cole-async"]["latency_us"]
    ok = a["max"] <= s["max"] / 10 and a["p50"] <= 2 * s["p50"]
    verdict(8, ok, f"max put latency async {a['max'] / 1e3:.1f} ms vs sync {s['max'] / 1e3:.1f} ms "
            f"(x{s['max'] / a['max']:.1f}); median async {a['p50']:.2f} us vs sync {s['p50']:.2f} us")


# --- 9 ---------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_9_provenance_scaling(tmp_path):
    widths = (2, 4, 8, 16, 32, 64, 128)
    rows = {}
    for engine in ("cole", "mpt"):
        cfg = ProvBenchConfig(engine, EngineConfig(), base_keys=100, blocks=2000, block_size=100,
                              widths=widths, queries=50, seed=9, path=str(tmp_path / engine))
        m = run_prov_bench(cfg)
        assert m["all_verified"]
        rows[engine] = {r["width"]: r for r in m["widths"]}

    def ratio(engine, field):
        return rows[engine][128][field] / rows[engine][2][field]

    # median query time: one scheduler hiccup would otherwise swamp a 50-query mean
    c_p, c_t = ratio("cole", "proof_bytes"), ratio("cole", "query_us_p50")
    m_p, m_t = ratio("mpt", "proof_bytes"), ratio("mpt", "query_us_p50")
    ok = c_p < 64 and c_t < 64 and m_p > 32 and m_t > 32
    verdict(9, ok, f"width 128/2 ratios: COLE proof {c_p:.2f} time {c_t:.2f}; MPT proof {m_p:.1f} time {m_t:.1f}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
