"""Immutable sorted runs.

A run of level ``i`` with sequence number ``s`` lives in ``L{i}/R{s}.*``:

* ``.v`` value file: 88-byte records ``addr | blk | value``, paged
* ``.i`` index file (see :mod:`cole.index_file`)
* ``.h`` Merkle file over ``sha256(record)`` leaves
* ``.b`` serialized address Bloom filter

All four are produced in one pass over the sorted input.
"""

from __future__ import annotations

import heapq
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .bloom import BloomFilter, address_hashes
from .core import ADDR_LEN, KEY_LEN, RECORD_LEN, EngineConfig, hash_record
from .index_file import IndexBuilder, IndexFile, PageReader, PageView, PagedWriter
from .merkle_file import MerkleBuilder, MerkleFile, RangeProof

SUFFIXES = (".v", ".i", ".h", ".b")


@dataclass(frozen=True)
class RunMeta:
    level: int
    seq: int
    n: int
    root: bytes
    bloom_digest: bytes

    def to_json(self) -> dict:
        return {"level": self.level, "seq": self.seq, "n": self.n,
                "root": self.root.hex(), "bloom": self.bloom_digest.hex()}

    @classmethod
    def from_json(cls, d: dict) -> "RunMeta":
        return cls(d["level"], d["seq"], d["n"], bytes.fromhex(d["root"]), bytes.fromhex(d["bloom"]))


def run_stem(base: str | Path, level: int, seq: int) -> Path:
    return Path(base) / f"L{level}" / f"R{seq}"


def run_paths(base: str | Path, level: int, seq: int) -> list[Path]:
    stem = run_stem(base, level, seq)
    return [stem.with_suffix(s) for s in SUFFIXES]


def write_run(records: Iterable[bytes], n: int, base: str | Path, level: int, seq: int,
              cfg: EngineConfig) -> RunMeta:
    """Stream ``n`` sorted records into the four run files."""
    stem = run_stem(base, level, seq)
    stem.parent.mkdir(parents=True, exist_ok=True)
    per_page = cfg.records_per_page
    values = PagedWriter(stem.with_suffix(".v"), per_page, cfg.page_size)
    index = IndexBuilder(stem.with_suffix(".i"), cfg.epsilon, cfg.page_size)
    merkle = MerkleBuilder(stem.with_suffix(".h"), n, cfg.mht_fanout)
    hashes: list[tuple[int, int]] = []
    last_key = b""
    last_addr = b""
    count = 0
    try:
        for rec in records:
            key = rec[:KEY_LEN]
            if key <= last_key:
                raise ValueError("run input must be strictly increasing by key")
            if len(rec) != RECORD_LEN:
                raise ValueError("bad record length")
            values.append(rec)
            index.add(int.from_bytes(key, "big"), count)
            merkle.add(hash_record(rec))
            addr = rec[:ADDR_LEN]
            if addr != last_addr:
                hashes.append(address_hashes(addr))
                last_addr = addr
            last_key = key
            count += 1
        if count != n:
            raise ValueError(f"run expected {n} records, got {count}")
        values.end_page()
    finally:
        values.close()
    index.finish()
    root = merkle.finish()
    bloom = BloomFilter.build(hashes, cfg.bloom_fpr(level))
    raw = bloom.to_bytes()
    stem.with_suffix(".b").write_bytes(raw)
    return RunMeta(level, seq, n, root, bloom.digest())


def iter_value_file(path: str | Path, n: int, per_page: int, page_size: int,
                    start: int = 0, pages_per_read: int = 64) -> Iterator[bytes]:
    """Sequential record scan from position ``start`` with large reads."""
    used = per_page * RECORD_LEN
    page = start // per_page
    skip = start % per_page
    left = n - start
    with open(path, "rb", buffering=0) as f:
        f.seek(page * page_size)
        while left > 0:
            chunk = f.read(page_size * pages_per_read)
            if not chunk:
                raise ValueError(f"{path}: truncated value file")
            for off in range(0, len(chunk), page_size):
                body = chunk[off:off + used]
                for i in range(skip, per_page):
                    if left == 0:
                        return
                    yield body[i * RECORD_LEN:(i + 1) * RECORD_LEN]
                    left -= 1
                skip = 0


def merge_records(streams: Sequence[Iterable[bytes]]) -> Iterator[bytes]:
    """k-way merge of sorted record streams.

    Keys are unique across runs, so comparing whole records orders them by key.
    """
    return heapq.merge(*streams)


def merge_run_files(inputs: Sequence[tuple[str, int]], base: str, level: int, seq: int,
                    cfg_dict: dict, delay: float = 0.0) -> RunMeta:
    """Merge value files ``[(path, n), ...]`` into a new run.

    Module-level and argument-picklable so it can run in a worker process.
    """
    cfg = EngineConfig.from_dict(cfg_dict)
    if delay > 0:
        time.sleep(delay)
    streams = [iter_value_file(p, n, cfg.records_per_page, cfg.page_size) for p, n in inputs]
    total = sum(n for _, n in inputs)
    return write_run(merge_records(streams), total, base, level, seq, cfg)


def flush_records(records: Sequence[bytes], base: str, level: int, seq: int,
                  cfg_dict: dict, delay: float = 0.0) -> RunMeta:
    """Write already sorted in-memory records as a run (worker-friendly)."""
    if delay > 0:
        time.sleep(delay)
    return write_run(records, len(records), base, level, seq, EngineConfig.from_dict(cfg_dict))


class Run:
    """Read handle over a built run."""

    def __init__(self, base: str | Path, meta: RunMeta, cfg: EngineConfig) -> None:
        self.meta = meta
        self.cfg = cfg
        stem = run_stem(base, meta.level, meta.seq)
        self.paths = [stem.with_suffix(s) for s in SUFFIXES]
        self.values = PageReader(self.paths[0], cfg.records_per_page, cfg.page_size)
        self.view = PageView(self.values, 0, meta.n)
        self.index = IndexFile(self.paths[1], cfg.page_size)
        self.merkle = MerkleFile(self.paths[2])
        self.bloom_bytes = self.paths[3].read_bytes()
        self.bloom = BloomFilter.from_bytes(self.bloom_bytes)

    @property
    def n(self) -> int:
        return self.meta.n

    @property
    def root(self) -> bytes:
        return self.meta.root

    @property
    def bloom_digest(self) -> bytes:
        return self.meta.bloom_digest

    @property
    def page_reads(self) -> int:
        return self.values.reads + self.index.reader.reads

    def close(self) -> None:
        self.values.close()
        self.index.close()
        self.merkle.close()

    def delete_files(self) -> None:
        self.close()
        for p in self.paths:
            try:
                p.unlink()
            except FileNotFoundError:
                pass

    def storage_bytes(self) -> dict[str, int]:
        names = ("value", "index", "merkle", "bloom")
        return {k: os.path.getsize(p) for k, p in zip(names, self.paths)}

    def may_contain(self, addr: bytes) -> bool:
        return addr in self.bloom

    def search(self, q: bytes) -> tuple[int, bytes] | None:
        """Predecessor ``(position, record)`` of packed key ``q``.

        ``None`` when the Bloom filter rules out ``q``'s address (no page is
        read) or when ``q`` precedes every key of the run.
        """
        if q[:ADDR_LEN] not in self.bloom:
            return None
        return self.search_unfiltered(q)

    def search_unfiltered(self, q: bytes) -> tuple[int, bytes] | None:
        return self.index.search(self.view, q)

    def read_at(self, pos: int) -> bytes:
        page, slot = divmod(pos, self.view.per_page)
        return self.view.read_records(page)[slot]

    def scan(self, start: int = 0) -> Iterator[bytes]:
        """Records from ``start`` onward, fetched page by page (counted)."""
        page, slot = divmod(start, self.view.per_page)
        while page < self.view.page_count:
            recs = self.view.read_records(page)
            yield from recs[slot:]
            slot = 0
            page += 1

    def records(self) -> Iterator[bytes]:
        """Uncounted bulk scan of every record."""
        return iter_value_file(self.paths[0], self.n, self.cfg.records_per_page, self.cfg.page_size)

    def range_proof(self, pos_l: int, pos_u: int) -> RangeProof:
        return self.merkle.range_proof(pos_l, pos_u)
