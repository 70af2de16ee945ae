"""A persistent Merkle Patricia Trie used as the comparison baseline.

Keys are walked as hexadecimal nibbles of the address.  Every update writes
fresh copies of the nodes on its path and never touches old ones, so the
root recorded for any block keeps resolving that block's state.

Node encodings (``digest = sha256(encoding)``)::

    leaf      := 0x01 nibbles:u8 packed_nibbles value_len:u16 value
    extension := 0x02 nibbles:u8 packed_nibbles child:32
    branch    := 0x03 bitmap:u16 child:32 per set bit, lowest nibble first

``packed_nibbles`` holds two nibbles per byte, high nibble first, with a zero
pad nibble when the count is odd.  The empty trie has root ``sha256(b"")``
and no node.

``nodes.log`` is a sequence of ``digest:32 len:u32 encoding`` entries; an
encoding already present is not written again.  ``roots.log`` holds one
``height:u64 root:32`` entry per committed block.
"""

from __future__ import annotations

import hashlib
import os
import struct
import time
from array import array
from bisect import bisect_right
from pathlib import Path
from typing import Iterable, Optional

from .core import EMPTY_ROOT

LEAF = 0x01
EXTENSION = 0x02
BRANCH = 0x03

_ENTRY = struct.Struct(">32sI")
_ROOT = struct.Struct(">Q32s")


def nibbles(key: bytes) -> bytes:
    """One byte per nibble, high nibble first."""
    out = bytearray(len(key) * 2)
    out[0::2] = bytes(b >> 4 for b in key)
    out[1::2] = bytes(b & 15 for b in key)
    return bytes(out)


def _pack(nib: bytes) -> bytes:
    if len(nib) % 2:
        nib = nib + b"\x00"
    return bytes((nib[i] << 4) | nib[i + 1] for i in range(0, len(nib), 2))


def _unpack(raw: bytes, count: int) -> bytes:
    return nibbles(raw)[:count]


def encode_leaf(path: bytes, value: bytes) -> bytes:
    return bytes([LEAF, len(path)]) + _pack(path) + struct.pack(">H", len(value)) + value


def encode_extension(path: bytes, child: bytes) -> bytes:
    return bytes([EXTENSION, len(path)]) + _pack(path) + child


def encode_branch(children: dict[int, bytes]) -> bytes:
    bitmap = 0
    for i in children:
        bitmap |= 1 << i
    return bytes([BRANCH]) + struct.pack(">H", bitmap) + b"".join(children[i] for i in sorted(children))


def decode(enc: bytes):
    """``(kind, path, payload)``; payload is the value, the child digest or a
    ``{nibble: digest}`` map."""
    tag = enc[0]
    if tag in (LEAF, EXTENSION):
        count = enc[1]
        plen = (count + 1) // 2
        path = _unpack(enc[2:2 + plen], count)
        rest = enc[2 + plen:]
        if tag == LEAF:
            (vlen,) = struct.unpack_from(">H", rest)
            if len(rest) != 2 + vlen:
                raise ValueError("bad leaf length")
            return LEAF, path, rest[2:]
        if len(rest) != 32:
            raise ValueError("bad extension length")
        return EXTENSION, path, rest
    if tag == BRANCH:
        (bitmap,) = struct.unpack_from(">H", enc, 1)
        idx = [i for i in range(16) if bitmap >> i & 1]
        if len(enc) != 3 + 32 * len(idx):
            raise ValueError("bad branch length")
        return BRANCH, b"", {i: enc[3 + 32 * j:35 + 32 * j] for j, i in enumerate(idx)}
    raise ValueError(f"unknown node tag {tag}")


def _common(a: bytes, b: bytes) -> int:
    n = min(len(a), len(b))
    i = 0
    while i < n and a[i] == b[i]:
        i += 1
    return i


class NodeStore:
    """Append-only, hash-addressed node log with an in-memory offset map."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.offsets: dict[bytes, tuple[int, int]] = {}
        if self.path.exists():
            raw = self.path.read_bytes()
            off = 0
            while off + _ENTRY.size <= len(raw):
                d, n = _ENTRY.unpack_from(raw, off)
                self.offsets[d] = (off + _ENTRY.size, n)
                off += _ENTRY.size + n
        self._f = open(self.path, "ab+")
        self.reads = 0
        self.writes = 0

    def put(self, enc: bytes) -> bytes:
        d = hashlib.sha256(enc).digest()
        if d not in self.offsets:
            pos = self._f.seek(0, os.SEEK_END)
            self._f.write(_ENTRY.pack(d, len(enc)) + enc)
            self.offsets[d] = (pos + _ENTRY.size, len(enc))
            self.writes += 1
        return d

    def get(self, digest: bytes) -> bytes:
        off, n = self.offsets[digest]
        self._f.flush()
        self.reads += 1
        return os.pread(self._f.fileno(), n, off)

    def __len__(self) -> int:
        return len(self.offsets)

    def flush(self) -> None:
        self._f.flush()

    def close(self) -> None:
        self._f.close()


class MPT:
    """Versioned state: one trie root per committed block."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.store = NodeStore(self.path / "nodes.log")
        self.heights: list[int] = []
        self.roots: list[bytes] = []
        rp = self.path / "roots.log"
        if rp.exists():
            raw = rp.read_bytes()
            for off in range(0, len(raw) - len(raw) % _ROOT.size, _ROOT.size):
                h, r = _ROOT.unpack_from(raw, off)
                self.heights.append(h)
                self.roots.append(r)
        self._roots_f = open(rp, "ab")
        self.root = self.roots[-1] if self.roots else EMPTY_ROOT
        self.latencies = array("d")

    # --- updates ---------------------------------------------------------

    def put(self, addr: bytes, value: bytes) -> bytes:
        """Write ``value`` under ``addr`` on top of the current root."""
        self.root = self._insert(self.root, nibbles(addr), value)
        return self.root

    def _insert(self, digest: bytes, path: bytes, value: bytes) -> bytes:
        st = self.store
        if digest == EMPTY_ROOT:
            return st.put(encode_leaf(path, value))
        kind, npath, payload = decode(st.get(digest))
        if kind == LEAF:
            if npath == path:
                return st.put(encode_leaf(path, value))
            c = _common(npath, path)
            br = {npath[c]: st.put(encode_leaf(npath[c + 1:], payload)),
                  path[c]: st.put(encode_leaf(path[c + 1:], value))}
            node = st.put(encode_branch(br))
            return st.put(encode_extension(path[:c], node)) if c else node
        if kind == EXTENSION:
            c = _common(npath, path)
            if c == len(npath):
                return st.put(encode_extension(npath, self._insert(payload, path[c:], value)))
            rest = npath[c + 1:]
            old = st.put(encode_extension(rest, payload)) if rest else payload
            br = {npath[c]: old, path[c]: st.put(encode_leaf(path[c + 1:], value))}
            node = st.put(encode_branch(br))
            return st.put(encode_extension(path[:c], node)) if c else node
        children = dict(payload)
        children[path[0]] = self._insert(children.get(path[0], EMPTY_ROOT), path[1:], value)
        return st.put(encode_branch(children))

    def commit(self, height: int) -> bytes:
        if self.heights and height <= self.heights[-1]:
            raise ValueError("block heights must increase")
        self.heights.append(height)
        self.roots.append(self.root)
        self._roots_f.write(_ROOT.pack(height, self.root))
        return self.root

    def write_block(self, height: int, writes: Iterable[tuple[bytes, bytes]]) -> bytes:
        clock = time.perf_counter
        block: dict[bytes, bytes] = {}
        for addr, value in writes:
            block[addr] = value
        for addr, value in block.items():
            t0 = clock()
            self.put(addr, value)
            self.latencies.append(clock() - t0)
        return self.commit(height)

    # --- reads -----------------------------------------------------------

    def root_at(self, height: int) -> bytes:
        i = bisect_right(self.heights, height) - 1
        return self.roots[i] if i >= 0 else EMPTY_ROOT

    def lookup(self, root: bytes, addr: bytes) -> tuple[Optional[bytes], list[bytes]]:
        """Value under ``root`` and the encodings of the nodes on the search path."""
        path = nibbles(addr)
        proof: list[bytes] = []
        d = root
        while d != EMPTY_ROOT:
            enc = self.store.get(d)
            proof.append(enc)
            kind, npath, payload = decode(enc)
            if kind == LEAF:
                return (payload if npath == path else None), proof
            if kind == EXTENSION:
                if path[:len(npath)] != npath:
                    return None, proof
                path, d = path[len(npath):], payload
            else:
                if path[0] not in payload:
                    return None, proof
                path, d = path[1:], payload[path[0]]
        return None, proof

    def get(self, addr: bytes) -> Optional[bytes]:
        return self.lookup(self.root, addr)[0]

    def get_at(self, addr: bytes, height: int) -> Optional[bytes]:
        return self.lookup(self.root_at(height), addr)[0]

    def prov_query(self, addr: bytes, blk_l: int, blk_u: int) -> tuple[list, list[list[bytes]]]:
        """Per-block values of ``addr`` over ``[blk_l, blk_u]`` with one path proof per block."""
        values, proofs = [], []
        for h in range(blk_l, blk_u + 1):
            v, p = self.lookup(self.root_at(h), addr)
            values.append((h, v))
            proofs.append(p)
        return values, proofs

    def storage_bytes(self) -> int:
        self.store.flush()
        self._roots_f.flush()
        return sum(p.stat().st_size for p in self.path.iterdir() if p.is_file())

    def close(self) -> None:
        self.store.close()
        self._roots_f.close()


def verify_path(root: bytes, addr: bytes, value: Optional[bytes], proof: list[bytes]) -> bool:
    """Check a search path proves ``addr -> value`` (``None`` for absence) under ``root``."""
    path = nibbles(addr)
    want = root
    if root == EMPTY_ROOT:
        return value is None and not proof
    for i, enc in enumerate(proof):
        if hashlib.sha256(enc).digest() != want:
            return False
        try:
            kind, npath, payload = decode(enc)
        except (ValueError, struct.error, IndexError):
            return False
        last = i == len(proof) - 1
        if kind == LEAF:
            return last and (payload if npath == path else None) == value
        if kind == EXTENSION:
            if path[:len(npath)] != npath:
                return last and value is None
            path, want = path[len(npath):], payload
        else:
            if not path:
                return False
            if path[0] not in payload:
                return last and value is None
            path, want = path[1:], payload[path[0]]
    return False


def verify_prov(roots: dict[int, bytes], addr: bytes, values: list, proofs: list[list[bytes]]) -> bool:
    if len(values) != len(proofs):
        return False
    for (h, v), p in zip(values, proofs):
        if h not in roots or not verify_path(roots[h], addr, v, p):
            return False
    return True


def proof_size(proofs: list[list[bytes]]) -> int:
    return sum(len(enc) for p in proofs for enc in p)
