"""The storage engine: levels, synchronous and asynchronous merges, H_state.

Level 0 is an in-memory MB-tree holding up to ``B`` entries; on-disk level
``i >= 1`` holds runs of ``B * T**(i-1)`` records.

*Synchronous mode.*  A full L0 tree is flushed into a new L1 run; any level
that then holds ``T`` runs is merged into one run of the next level, and so
on down.

*Asynchronous mode.*  Every level has a writing and a merging group.  When
the writing group of level ``i`` is full (``B`` entries in L0, ``T`` committed
runs below) the engine reaches a commit checkpoint: it waits for the merge
started at the previous checkpoint of that level, makes its output run
visible at the end of level ``i+1``'s writing group, drops the merged-away
runs, swaps the two groups' roles and starts merging the new merging group in
the background.  Outputs become visible only at checkpoints, which depend on
nothing but the write sequence, so ``H_state`` is independent of merge speed.

Writes are buffered per block (last write to an address wins) and applied
when the block is finalized, so each block contributes one version per
address.

With nothing written, the root list holds only the empty level-0 tree(s)
(digest ``sha256(b"")``, ``n = 0``), so an empty engine's ``H_state`` is the
hash of that one packed entry (two in async mode).

On disk: ``manifest.json`` (rewritten atomically at every checkpoint),
``headers.log`` (``height hex(H_state)`` per block), ``l0.snapshot`` (level 0
trees with their exact node layout, written on close) and the run files under ``L{i}/``.
"""

from __future__ import annotations

import json
import os
import struct
import time
from array import array
from concurrent.futures import Executor, Future, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional, Union

from .core import (
    ADDR_LEN,
    KIND_MBTREE,
    KIND_RUN,
    MAX_HEIGHT,
    RECORD_LEN,
    ROLE_MERGING,
    ROLE_WRITING,
    ZERO_DIGEST,
    EngineConfig,
    RootEntry,
    check_addr,
    check_value,
    pack_key,
    state_digest,
)
from .mbtree import MBTree
from .run import Run, RunMeta, SUFFIXES, flush_records, merge_run_files, run_stem

MANIFEST = "manifest.json"
HEADERS = "headers.log"
SNAPSHOT = "l0.snapshot"
MANIFEST_VERSION = 1

Unit = tuple[RootEntry, Union[MBTree, Run]]


@dataclass
class _Pending:
    """A started merge whose output is not yet visible."""

    src: int  # level being merged away (0 = L0 flush)
    seq: int  # sequence number of the output run at level src + 1
    future: Future
    result: Optional[RunMeta] = None
    start: int = 0  # writes applied when the merge started
    total: int = 0  # output records
    out: Optional[Path] = None  # output value file, watched for progress

    def wait(self) -> RunMeta:
        if self.result is None:
            self.result = self.future.result()
        return self.result


@dataclass
class _Level:
    writing: list[Run] = field(default_factory=list)
    merging: list[Run] = field(default_factory=list)


class _Done(Future):
    def __init__(self, value) -> None:
        super().__init__()
        self.set_result(value)


class Engine:
    """Column-based learned storage for versioned state.

    ``merge_delay`` (async only) is called once per started merge, in write
    order, and the merge worker sleeps for the returned number of seconds;
    it exists to test that merge timing cannot leak into ``H_state``.
    ``run_observer`` is called with every run as it becomes visible.
    """

    def __init__(self, path: str | Path, cfg: EngineConfig | None = None, *,
                 merge_delay: Callable[[], float] | None = None,
                 run_observer: Callable[[Run], None] | None = None) -> None:
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.merge_delay = merge_delay
        self.run_observer = run_observer
        manifest = self.path / MANIFEST
        self._executor: Executor | None = None
        self.latencies = array("d")
        self.headers: list[tuple[int, bytes]] = []
        self.height = 0
        self._block: dict[bytes, bytes] | None = None
        self._block_height = 0
        self._next_seq = 0
        self.w0 = MBTree()
        self.m0: MBTree | None = None
        self.levels: list[_Level] = [_Level()]  # index 0 unused
        self.pending: dict[int, _Pending] = {}
        self.writes_applied = 0
        if manifest.exists():
            self._load(cfg)
        else:
            self.cfg = cfg or EngineConfig()
            self.w0 = MBTree(self.cfg.mbtree_fanout)
            self.m0 = MBTree(self.cfg.mbtree_fanout) if self.cfg.async_merge else None
            self._save_manifest(clean=False)
        self._headers_f = open(self.path / HEADERS, "a")

    # --- block interface -------------------------------------------------

    def begin_block(self, height: int) -> None:
        if self._block is not None:
            raise RuntimeError("previous block not finalized")
        if not self.height < height <= MAX_HEIGHT:
            raise ValueError(f"block height must exceed {self.height}")
        self._block = {}
        self._block_height = height

    def put(self, addr: bytes, value: bytes) -> None:
        if self._block is None:
            raise RuntimeError("no open block")
        self._block[check_addr(addr)] = check_value(value)

    def finalize_block(self) -> bytes:
        if self._block is None:
            raise RuntimeError("no open block")
        h = self._block_height
        clock = time.perf_counter
        lat = self.latencies
        for addr, value in self._block.items():
            t0 = clock()
            self._apply(pack_key(addr, h), value)
            lat.append(clock() - t0)
        self._block = None
        self.height = h
        digest = self.state_digest()
        self.headers.append((h, digest))
        self._headers_f.write(f"{h} {digest.hex()}\n")
        return digest

    def write_block(self, height: int, writes) -> bytes:
        """``begin_block`` + ``put`` for each ``(addr, value)`` + ``finalize_block``."""
        self.begin_block(height)
        for addr, value in writes:
            self.put(addr, value)
        return self.finalize_block()

    # --- write path ------------------------------------------------------

    def _apply(self, key: bytes, value: bytes) -> None:
        self.w0.insert(key, value)
        self.writes_applied += 1
        if self.cfg.async_merge and self.cfg.pace_interval and self.writes_applied % self.cfg.pace_interval == 0:
            self._pace()
        if len(self.w0) >= self.cfg.mem_capacity:
            if self.cfg.async_merge:
                self._checkpoint_async()
            else:
                self._cascade_sync()

    def _take_seq(self) -> int:
        seq = self._next_seq
        self._next_seq += 1
        return seq

    def _level(self, i: int) -> _Level:
        while len(self.levels) <= i:
            self.levels.append(_Level())
        return self.levels[i]

    def _open_run(self, meta: RunMeta) -> Run:
        return Run(self.path, meta, self.cfg)

    def _publish(self, run: Run) -> None:
        if self.run_observer is not None:
            self.run_observer(run)

    def _cascade_sync(self) -> None:
        recs = [k + v for k, v in self.w0.drain_sorted()]
        meta = flush_records(recs, str(self.path), 1, self._take_seq(), self.cfg.to_dict())
        run = self._open_run(meta)
        self._level(1).writing.append(run)
        self._publish(run)
        i = 1
        while len(self._level(i).writing) >= self.cfg.size_ratio:
            lv = self.levels[i]
            inputs = [(str(r.paths[0]), r.n) for r in lv.writing]
            meta = merge_run_files(inputs, str(self.path), i + 1, self._take_seq(), self.cfg.to_dict())
            for r in lv.writing:
                r.delete_files()
            lv.writing = []
            run = self._open_run(meta)
            self._level(i + 1).writing.append(run)
            self._publish(run)
            i += 1
        self._save_manifest(clean=False)

    def _executor_for(self) -> Executor:
        if self._executor is None:
            if self.cfg.merge_executor == "process":
                self._executor = ProcessPoolExecutor(max_workers=8)
            else:
                self._executor = ThreadPoolExecutor(max_workers=64, thread_name_prefix="merge")
        return self._executor

    def _delay(self) -> float:
        return float(self.merge_delay()) if self.merge_delay is not None else 0.0

    def _start_merge(self, src: int) -> None:
        seq = self._take_seq()
        cfg = self.cfg.to_dict()
        ex = self._executor_for()
        if src == 0:
            recs = self.m0.records()
            total = len(recs)
            fut = ex.submit(flush_records, recs, str(self.path), 1, seq, cfg, self._delay())
        else:
            inputs = [(str(r.paths[0]), r.n) for r in self.levels[src].merging]
            total = sum(n for _, n in inputs)
            fut = ex.submit(merge_run_files, inputs, str(self.path), src + 1, seq, cfg, self._delay())
        out = run_stem(self.path, src + 1, seq).with_suffix(".v")
        self.pending[src] = _Pending(src, seq, fut, start=self.writes_applied, total=total, out=out)

    def _merge_progress(self, p: _Pending) -> int:
        """Output records a running merge has written so far (page granular)."""
        try:
            size = os.stat(p.out).st_size
        except (FileNotFoundError, TypeError):
            return 0
        return size // self.cfg.page_size * self.cfg.records_per_page

    def _pace(self) -> None:
        """Hold the writer back until every running merge is on schedule.

        A merge of level ``i`` must be done by the commit checkpoint
        ``B * T**i`` writes after it started, and it writes ``B * T**i``
        records, so it is on schedule when it has produced about one output
        record per write applied since its start.  Yielding here in small
        slices spreads what would otherwise be one long wait at the
        checkpoint over many short ones.  Only timing is affected; what
        becomes visible, and when, is unchanged.
        """
        for p in self.pending.values():
            if p.result is not None or p.future.done():
                continue
            deadline = self.cfg.mem_capacity * self.cfg.size_ratio ** p.src
            target = min(p.total, (self.writes_applied - p.start) * p.total * 10 // (deadline * 9))
            while self._merge_progress(p) < target and not p.future.done():
                time.sleep(0.0002)

    def _commit(self, src: int) -> None:
        """Make the pending output of level ``src`` visible and drop its inputs."""
        p = self.pending.pop(src, None)
        if p is None:
            return
        run = self._open_run(p.wait())
        self._level(src + 1).writing.append(run)
        if src == 0:
            self.m0 = MBTree(self.cfg.mbtree_fanout)
        else:
            for r in self.levels[src].merging:
                r.delete_files()
            self.levels[src].merging = []
        self._publish(run)

    def _checkpoint_async(self) -> None:
        self._commit(0)
        self.m0, self.w0 = self.w0, self.m0
        self._start_merge(0)
        i = 1
        while len(self._level(i).writing) >= self.cfg.size_ratio:
            self._commit(i)
            lv = self.levels[i]
            lv.merging, lv.writing = lv.writing, []
            self._start_merge(i)
            i += 1
        self._save_manifest(clean=False)

    # --- state -----------------------------------------------------------

    def _tree_entry(self, role: int, tree: MBTree) -> RootEntry:
        return RootEntry(0, role, 0, KIND_MBTREE, len(tree), tree.fanout, tree.root_hash, ZERO_DIGEST)

    def units(self) -> list[Unit]:
        """Every searchable unit with its root-list entry, in search order."""
        out: list[Unit] = [(self._tree_entry(ROLE_WRITING, self.w0), self.w0)]
        if self.cfg.async_merge:
            out.append((self._tree_entry(ROLE_MERGING, self.m0), self.m0))
        for level in range(1, len(self.levels)):
            lv = self.levels[level]
            for role, runs in ((ROLE_WRITING, lv.writing), (ROLE_MERGING, lv.merging)):
                for idx in range(len(runs) - 1, -1, -1):
                    r = runs[idx]
                    e = RootEntry(level, role, idx, KIND_RUN, r.n, self.cfg.mht_fanout, r.root, r.bloom_digest)
                    out.append((e, r))
        return out

    search_order = units

    def root_entries(self) -> list[RootEntry]:
        return sorted((e for e, _ in self.units()), key=RootEntry.canonical_key)

    def state_digest(self) -> bytes:
        return state_digest(e for e, _ in self.units())

    def runs(self) -> list[Run]:
        return [u for _, u in self.units() if isinstance(u, Run)]

    def records(self) -> Iterator[bytes]:
        """Every stored record (all versions), unit by unit in search order."""
        for _, u in self.units():
            if isinstance(u, MBTree):
                yield from u.records()
            else:
                yield from u.records()

    def page_reads(self) -> int:
        return sum(r.page_reads for r in self.runs())

    def storage_bytes(self) -> dict[str, int]:
        kinds = dict(zip(SUFFIXES, ("value", "index", "merkle", "bloom")))
        out = {"value": 0, "index": 0, "merkle": 0, "bloom": 0, "other": 0}
        self._headers_f.flush()
        for p in self.path.rglob("*"):
            if p.is_file():
                out[kinds.get(p.suffix, "other")] += p.stat().st_size
        out["total"] = sum(out.values())
        return out

    def wait_merges(self) -> None:
        """Block until every started merge has finished (outputs stay invisible)."""
        for p in self.pending.values():
            p.wait()

    # --- reads (see cole.query) -----------------------------------------

    def get(self, addr: bytes) -> bytes | None:
        from .query import get

        return get(self, addr)

    def get_at(self, addr: bytes, blk: int) -> bytes | None:
        from .query import get_at

        return get_at(self, addr, blk)

    def prov_query(self, addr: bytes, blk_l: int, blk_u: int):
        from .query import prov_query

        return prov_query(self, addr, blk_l, blk_u)

    # --- persistence -----------------------------------------------------

    def _save_manifest(self, clean: bool) -> None:
        levels = [{"writing": [r.meta.to_json() for r in lv.writing],
                   "merging": [r.meta.to_json() for r in lv.merging]}
                  for lv in self.levels[1:]]
        pending = [{"src": p.src, "seq": p.seq,
                    "result": p.result.to_json() if p.result is not None else None}
                   for p in sorted(self.pending.values(), key=lambda p: p.src)]
        doc = {"version": MANIFEST_VERSION, "config": self.cfg.to_dict(), "height": self.height,
               "next_seq": self._next_seq, "levels": levels, "pending": pending, "clean": clean}
        tmp = self.path / (MANIFEST + ".tmp")
        tmp.write_text(json.dumps(doc, indent=1))
        os.replace(tmp, self.path / MANIFEST)

    def close(self) -> None:
        """Finish in-flight merges, persist level 0 and a clean manifest."""
        if self._block is not None:
            raise RuntimeError("close with an open block")
        self.wait_merges()
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
        with open(self.path / SNAPSHOT, "wb") as f:
            for tree in (self.w0, self.m0):
                if tree is None:
                    f.write(struct.pack(">q", -1))
                    continue
                raw = tree.dump()
                f.write(struct.pack(">q", len(raw)))
                f.write(raw)
        self._save_manifest(clean=True)
        self._headers_f.close()
        for r in self.runs():
            r.close()

    def __enter__(self) -> "Engine":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _load(self, cfg: EngineConfig | None) -> None:
        doc = json.loads((self.path / MANIFEST).read_text())
        if doc.get("version") != MANIFEST_VERSION:
            raise ValueError("unsupported manifest version")
        stored = EngineConfig.from_dict(doc["config"])
        if cfg is not None and cfg != stored:
            raise ValueError("configuration differs from the one the store was created with")
        self.cfg = stored
        self.height = doc["height"]
        self._next_seq = doc["next_seq"]
        keep: set[Path] = set()
        self.levels = [_Level()]
        for i, d in enumerate(doc["levels"], start=1):
            lv = _Level([self._open_run(RunMeta.from_json(m)) for m in d["writing"]],
                        [self._open_run(RunMeta.from_json(m)) for m in d["merging"]])
            self.levels.append(lv)
            for r in lv.writing + lv.merging:
                keep.update(r.paths)
        fanout = self.cfg.mbtree_fanout
        self.w0 = MBTree(fanout)
        self.m0 = MBTree(fanout) if self.cfg.async_merge else None
        snap = self.path / SNAPSHOT
        if doc.get("clean") and snap.exists():
            raw = snap.read_bytes()
            off = 0
            trees = []
            for _ in range(2):
                (size,) = struct.unpack_from(">q", raw, off)
                off += 8
                if size < 0:
                    trees.append(None)
                    continue
                trees.append(MBTree.load(raw[off:off + size]))
                off += size
            self.w0 = trees[0]
            if self.cfg.async_merge:
                self.m0 = trees[1] if trees[1] is not None else MBTree(fanout)
        for pd in doc["pending"]:
            src, seq = pd["src"], pd["seq"]
            res = RunMeta.from_json(pd["result"]) if pd["result"] else None
            files = [run_stem(self.path, src + 1, seq).with_suffix(s) for s in SUFFIXES]
            if res is not None and all(f.exists() for f in files):
                self.pending[src] = _Pending(src, seq, _Done(res), res)
                keep.update(files)
        # anything not referenced is an uncommitted leftover
        for p in self.path.glob("L*/R*"):
            if p not in keep:
                p.unlink()
        for pd in doc["pending"]:
            src, seq = pd["src"], pd["seq"]
            if src in self.pending:
                continue
            ex = self._executor_for()
            cfgd = self.cfg.to_dict()
            if src == 0:
                fut = ex.submit(flush_records, self.m0.records(), str(self.path), 1, seq, cfgd)
            else:
                inputs = [(str(r.paths[0]), r.n) for r in self.levels[src].merging]
                fut = ex.submit(merge_run_files, inputs, str(self.path), src + 1, seq, cfgd)
            # restarted merges are simply awaited at their checkpoint, never paced
            self.pending[src] = _Pending(src, seq, fut)
        hp = self.path / HEADERS
        if hp.exists():
            for line in hp.read_text().splitlines():
                h, d = line.split()
                if int(h) <= self.height:
                    self.headers.append((int(h), bytes.fromhex(d)))
        # drop headers past the last checkpoint so the log matches the state
        with open(hp, "w") as f:
            f.writelines(f"{h} {d.hex()}\n" for h, d in self.headers)
