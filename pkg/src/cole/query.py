"""Point lookups, provenance queries and their verification.

A provenance proof holds one unit per root-list entry, in search order.  A
unit is searched (an MB-tree range proof, a run span with its Merkle range
proof, or a run's whole Bloom filter when the filter rules the address out)
until some unit discloses an older version of the address below the
queried range; every later unit only carries its root (and Bloom digest).

Wire format, integers big-endian::

    proof  := b"CPRF" version:u8 count:u32 unit*
    unit   := kind:u8 level:u32 role:u8 idx:u32 n:u64 m:u16 body
    MBTREE_OPAQUE  body := root:32
    MBTREE_PROOF   body := len:u32 pruned_tree
    RUN_OPAQUE     body := root:32 bloom_digest:32
    RUN_BLOOM      body := root:32 len:u32 bloom
    RUN_PROOF      body := bloom_digest:32 pos_l:u64 pos_u:u64
                           n_head:u8 record* n_results:u32 n_tail:u8 record*
                           n_layers:u8 (count:u32 (pos:u64 digest:32)*)*
    results := count:u32 (blk:u64 value:48)*

Results are not repeated inside the proof: the verifier hands each unit the
next ``n_results`` (or placeholder count) results, taking them from the
newest end since units are ordered newest first.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

from .bloom import BloomFilter
from .core import (
    ADDR_LEN,
    DIGEST_LEN,
    KEY_LEN,
    KIND_MBTREE,
    KIND_RUN,
    MAX_HEIGHT,
    RECORD_LEN,
    VALUE_LEN,
    ZERO_DIGEST,
    RootEntry,
    check_addr,
    hash_record,
    key_blk,
    pack_key,
    state_digest,
)
from .mbtree import MBTree, count_results, verify_range
from .merkle_file import RangeProof, range_root

MBTREE_OPAQUE = 0
MBTREE_PROOF = 1
RUN_OPAQUE = 2
RUN_PROOF = 3
RUN_BLOOM = 4

PROOF_MAGIC = b"CPRF"
PROOF_VERSION = 1
_UNIT_HEAD = struct.Struct(">BIBIQH")


# --- point lookups ---------------------------------------------------------

def get_at(engine, addr: bytes, blk: int) -> Optional[bytes]:
    """Value of ``addr`` as of block ``blk`` (greatest version ``<= blk``)."""
    addr = check_addr(addr)
    q = pack_key(addr, blk)
    for _, unit in engine.units():
        if isinstance(unit, MBTree):
            hit = unit.search_predecessor(q)
            if hit is not None and hit[0][:ADDR_LEN] == addr:
                return hit[1]
        else:
            found = unit.search(q)
            if found is not None and found[1][:ADDR_LEN] == addr:
                return found[1][KEY_LEN:]
    return None


def get(engine, addr: bytes) -> Optional[bytes]:
    return get_at(engine, addr, MAX_HEIGHT)


# --- proofs ------------------------------------------------------------------

@dataclass
class ProofUnit:
    kind: int
    level: int
    role: int
    idx: int
    n: int
    m: int
    root: bytes = ZERO_DIGEST  # opaque and bloom units
    bloom_digest: bytes = ZERO_DIGEST  # RUN_OPAQUE, RUN_PROOF
    tree: bytes = b""  # MBTREE_PROOF
    bloom: bytes = b""  # RUN_BLOOM
    pos_l: int = 0
    pos_u: int = 0
    head: list[bytes] = field(default_factory=list)
    n_results: int = 0
    tail: list[bytes] = field(default_factory=list)
    merkle: RangeProof = field(default_factory=RangeProof)

    def encode(self) -> bytes:
        out = bytearray(_UNIT_HEAD.pack(self.kind, self.level, self.role, self.idx, self.n, self.m))
        k = self.kind
        if k == MBTREE_OPAQUE:
            out += self.root
        elif k == MBTREE_PROOF:
            out += struct.pack(">I", len(self.tree)) + self.tree
        elif k == RUN_OPAQUE:
            out += self.root + self.bloom_digest
        elif k == RUN_BLOOM:
            out += self.root + struct.pack(">I", len(self.bloom)) + self.bloom
        elif k == RUN_PROOF:
            out += self.bloom_digest + struct.pack(">QQB", self.pos_l, self.pos_u, len(self.head))
            out += b"".join(self.head)
            out += struct.pack(">IB", self.n_results, len(self.tail)) + b"".join(self.tail)
            out += struct.pack(">B", len(self.merkle.layers))
            for layer in self.merkle.layers:
                out += struct.pack(">I", len(layer))
                for pos, d in layer:
                    out += struct.pack(">Q", pos) + d
        else:
            raise ValueError(f"unknown unit kind {k}")
        return bytes(out)


@dataclass
class ProvenanceProof:
    units: list[ProofUnit] = field(default_factory=list)

    def to_bytes(self) -> bytes:
        body = b"".join(u.encode() for u in self.units)
        return PROOF_MAGIC + struct.pack(">BI", PROOF_VERSION, len(self.units)) + body

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ProvenanceProof":
        rd = _Buf(raw)
        if rd.take(4) != PROOF_MAGIC or rd.u8() != PROOF_VERSION:
            raise ValueError("not a provenance proof")
        units = []
        for _ in range(rd.u32()):
            kind, level, role, idx, n, m = _UNIT_HEAD.unpack(rd.take(_UNIT_HEAD.size))
            u = ProofUnit(kind, level, role, idx, n, m)
            if kind == MBTREE_OPAQUE:
                u.root = rd.take(DIGEST_LEN)
            elif kind == MBTREE_PROOF:
                u.tree = rd.take(rd.u32())
            elif kind == RUN_OPAQUE:
                u.root = rd.take(DIGEST_LEN)
                u.bloom_digest = rd.take(DIGEST_LEN)
            elif kind == RUN_BLOOM:
                u.root = rd.take(DIGEST_LEN)
                u.bloom = rd.take(rd.u32())
            elif kind == RUN_PROOF:
                u.bloom_digest = rd.take(DIGEST_LEN)
                u.pos_l, u.pos_u = rd.u64(), rd.u64()
                u.head = [rd.take(RECORD_LEN) for _ in range(rd.u8())]
                u.n_results = rd.u32()
                u.tail = [rd.take(RECORD_LEN) for _ in range(rd.u8())]
                for _ in range(rd.u8()):
                    u.merkle.layers.append([(rd.u64(), rd.take(DIGEST_LEN)) for _ in range(rd.u32())])
            else:
                raise ValueError(f"unknown unit kind {kind}")
            units.append(u)
        if rd.pos != len(raw):
            raise ValueError("trailing bytes after proof")
        return cls(units)


class _Buf:
    def __init__(self, raw: bytes) -> None:
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.raw):
            raise ValueError("truncated")
        b = self.raw[self.pos:self.pos + n]
        self.pos += n
        return b

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]


def encode_results(results: list[tuple[int, bytes]]) -> bytes:
    return struct.pack(">I", len(results)) + b"".join(struct.pack(">Q", b) + v for b, v in results)


def decode_results(raw: bytes) -> list[tuple[int, bytes]]:
    rd = _Buf(raw)
    out = [(rd.u64(), rd.take(VALUE_LEN)) for _ in range(rd.u32())]
    if rd.pos != len(raw):
        raise ValueError("trailing bytes after results")
    return out


def _bounds(addr: bytes, blk_l: int, blk_u: int) -> tuple[bytes, bytes]:
    if not 1 <= blk_l <= blk_u < MAX_HEIGHT:
        raise ValueError("need 1 <= blk_l <= blk_u < MAX_HEIGHT")
    return pack_key(addr, blk_l - 1), pack_key(addr, blk_u + 1)


def prov_query(engine, addr: bytes, blk_l: int, blk_u: int) -> tuple[list[tuple[int, bytes]], ProvenanceProof]:
    """All versions of ``addr`` written in blocks ``[blk_l, blk_u]`` plus a proof."""
    addr = check_addr(addr)
    k_l, k_u = _bounds(addr, blk_l, blk_u)
    lo_key, hi_key = pack_key(addr, blk_l), pack_key(addr, blk_u)

    def is_result(key: bytes) -> bool:
        return lo_key <= key <= hi_key

    chunks: list[list[bytes]] = []
    proof = ProvenanceProof()
    stop = False
    for e, unit in engine.units():
        head = (e.level, e.role, e.idx, e.n, e.m)
        if isinstance(unit, MBTree):
            if stop:
                proof.units.append(ProofUnit(MBTREE_OPAQUE, *head, root=e.root))
                continue
            recs, tree = unit.search_range(k_l, k_u, is_result)
            chunks.append(recs)
            proof.units.append(ProofUnit(MBTREE_PROOF, *head, tree=tree))
            pred = unit.search_predecessor(k_l)
            stop = pred is not None and pred[0][:ADDR_LEN] == addr
            continue
        if stop:
            proof.units.append(ProofUnit(RUN_OPAQUE, *head, root=e.root, bloom_digest=e.bloom_digest))
            continue
        if not unit.may_contain(addr):
            proof.units.append(ProofUnit(RUN_BLOOM, *head, root=e.root, bloom=unit.bloom_bytes))
            continue
        hit = unit.search_unfiltered(k_l)
        pos_l = hit[0] if hit is not None else 0
        span: list[bytes] = []
        for rec in unit.scan(pos_l):
            span.append(rec)
            if rec[:KEY_LEN] > k_u:
                break
        pu = ProofUnit(RUN_PROOF, *head, bloom_digest=e.bloom_digest,
                       pos_l=pos_l, pos_u=pos_l + len(span) - 1)
        recs = []
        for rec in span:
            key = rec[:KEY_LEN]
            if key < lo_key:
                pu.head.append(rec)
            elif key > hi_key:
                pu.tail.append(rec)
            else:
                recs.append(rec)
        pu.n_results = len(recs)
        pu.merkle = unit.range_proof(pu.pos_l, pu.pos_u)
        chunks.append(recs)
        proof.units.append(pu)
        stop = hit is not None and hit[1][:ADDR_LEN] == addr
    results = [(key_blk(r), r[KEY_LEN:]) for chunk in reversed(chunks) for r in chunk]
    return results, proof


# --- verification ------------------------------------------------------------

def verify_prov(addr: bytes, blk_l: int, blk_u: int, results: list[tuple[int, bytes]],
                proof: ProvenanceProof | bytes, h_state: bytes) -> bool:
    """Check ``results`` are exactly the versions of ``addr`` in ``[blk_l, blk_u]``
    under the state digest ``h_state``."""
    try:
        return _verify(addr, blk_l, blk_u, results, proof, h_state)
    except (ValueError, struct.error, IndexError, TypeError):
        return False


def _verify(addr, blk_l, blk_u, results, proof, h_state) -> bool:
    if isinstance(proof, (bytes, bytearray)):
        raw = bytes(proof)
        proof = ProvenanceProof.from_bytes(raw)
        if proof.to_bytes() != raw:
            return False
    if len(addr) != ADDR_LEN:
        return False
    k_l, k_u = _bounds(addr, blk_l, blk_u)
    lo_key, hi_key = pack_key(addr, blk_l), pack_key(addr, blk_u)

    def is_result(key: bytes) -> bool:
        return lo_key <= key <= hi_key

    prev = 0
    records = []
    for blk, value in results:
        if not (blk_l <= blk <= blk_u) or blk <= prev or len(value) != VALUE_LEN:
            return False
        prev = blk
        records.append(pack_key(addr, blk) + value)

    entries: list[RootEntry] = []
    stop = False
    last_order = None
    for u in proof.units:
        order = (u.level, u.role, -u.idx)
        if last_order is not None and order <= last_order:
            return False
        last_order = order
        if u.kind in (MBTREE_OPAQUE, MBTREE_PROOF):
            if u.level != 0 or u.idx != 0:
                return False
        elif u.level < 1:
            return False
        if u.kind == MBTREE_OPAQUE:
            if not stop:
                return False
            entries.append(RootEntry(0, u.role, 0, KIND_MBTREE, u.n, u.m, u.root, ZERO_DIGEST))
        elif u.kind == RUN_OPAQUE:
            if not stop:
                return False
            entries.append(RootEntry(u.level, u.role, u.idx, KIND_RUN, u.n, u.m, u.root, u.bloom_digest))
        elif u.kind == MBTREE_PROOF:
            if stop:
                return False
            c = count_results(u.tree)
            if c is None or c > len(records):
                return False
            chunk = records[len(records) - c:]
            disclosed: list[bytes] = []
            root = verify_range(u.tree, k_l, k_u, chunk, is_result, disclosed)
            if root is None:
                return False
            del records[len(records) - c:]
            entries.append(RootEntry(0, u.role, 0, KIND_MBTREE, u.n, u.m, root, ZERO_DIGEST))
            stop = any(r[:ADDR_LEN] == addr and r[:KEY_LEN] < lo_key for r in disclosed)
        elif u.kind == RUN_BLOOM:
            if stop:
                return False
            bloom = BloomFilter.from_bytes(u.bloom)
            if addr in bloom:
                return False
            entries.append(RootEntry(u.level, u.role, u.idx, KIND_RUN, u.n, u.m, u.root, bloom.digest()))
        elif u.kind == RUN_PROOF:
            if stop:
                return False
            root = _verify_run_unit(u, records, addr, k_l, k_u, lo_key, hi_key)
            if root is None:
                return False
            entries.append(RootEntry(u.level, u.role, u.idx, KIND_RUN, u.n, u.m, root, u.bloom_digest))
            stop = any(r[:ADDR_LEN] == addr for r in u.head)
        else:
            return False
    if records:
        return False
    return state_digest(entries) == h_state


def _verify_run_unit(u: ProofUnit, records: list[bytes], addr: bytes, k_l: bytes, k_u: bytes,
                     lo_key: bytes, hi_key: bytes) -> bytes | None:
    c = u.n_results
    if c > len(records) or u.m < 2 or u.n < 1:
        return None
    chunk = records[len(records) - c:]
    span = u.head + chunk + u.tail
    if not span or u.pos_u != u.pos_l + len(span) - 1 or u.pos_u >= u.n:
        return None
    keys = [r[:KEY_LEN] for r in span]
    if any(a >= b for a, b in zip(keys, keys[1:])):
        return None
    if any(r[:KEY_LEN] >= lo_key for r in u.head) or any(r[:KEY_LEN] <= hi_key for r in u.tail):
        return None
    # the span must reach down to K_l and up past K_u unless it hits an end
    if u.pos_l > 0 and keys[0] > k_l:
        return None
    if u.pos_u < u.n - 1 and keys[-1] <= k_u:
        return None
    root = range_root(u.n, u.m, u.pos_l, [hash_record(r) for r in span], u.merkle)
    if root is None:
        return None
    del records[len(records) - c:]
    return root
