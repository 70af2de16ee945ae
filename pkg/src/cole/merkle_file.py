"""Flat m-ary Merkle hash tree files.

Layout: a 16-byte header ``b"CMHT" | m u32 | n u64`` followed by every digest
of the tree, layer by layer from the leaves up, 32 bytes each.  Layer ``i``
holds ``ceil(n / m**i)`` digests and starts at digest index
``sum(layer sizes below i)``; the last digest is the root.  Groups at the
right edge may hold fewer than ``m`` children and are hashed as they are.

Range proofs list, for each non-root layer, the ``(file position, digest)``
siblings that share a parent with the range's edges but lie outside it.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from itertools import accumulate
from pathlib import Path
from typing import Iterable, Sequence

from .core import DIGEST_LEN, hash_internal, mht_layer_sizes

MHT_MAGIC = b"CMHT"
_HEADER = struct.Struct(">4sIQ")
HEADER_LEN = _HEADER.size


def layer_offsets(sizes: Sequence[int]) -> list[int]:
    return [0, *accumulate(sizes)][:-1]


def parent_position(pos: int, layer: int, n: int, m: int) -> int:
    """File position (digest index) of the parent of ``pos`` in ``layer``."""
    sizes = mht_layer_sizes(n, m)
    if layer >= len(sizes) - 1:
        raise ValueError("the root layer has no parent")
    offs = layer_offsets(sizes)
    if not offs[layer] <= pos < offs[layer] + sizes[layer]:
        raise ValueError(f"position {pos} is not in layer {layer}")
    return (pos - offs[layer]) // m + offs[layer + 1]


class MerkleBuilder:
    """Streaming construction with one buffer of at most ``m`` digests per layer."""

    def __init__(self, path: str | Path, n: int, m: int) -> None:
        if m < 2:
            raise ValueError("fanout must be >= 2")
        self.n = n
        self.m = m
        self.sizes = mht_layer_sizes(n, m)
        self.offsets = layer_offsets(self.sizes)
        self._top = len(self.sizes) - 1
        self._bufs: list[list[bytes]] = [[] for _ in self.sizes]
        self._written = [0] * len(self.sizes)
        self._leaves = 0
        self.max_buffered = 0
        self._fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o644)
        os.write(self._fd, _HEADER.pack(MHT_MAGIC, m, n))

    def add(self, leaf: bytes) -> None:
        if self._leaves >= self.n:
            raise ValueError("more leaves than declared")
        self._leaves += 1
        self._push(0, leaf)

    def _push(self, i: int, h: bytes) -> None:
        buf = self._bufs[i]
        buf.append(h)
        if len(buf) == self.m and i < self._top:
            self._flush(i)

    def _flush(self, i: int) -> None:
        buf = self._bufs[i]
        off = HEADER_LEN + (self.offsets[i] + self._written[i]) * DIGEST_LEN
        os.pwrite(self._fd, b"".join(buf), off)
        self._written[i] += len(buf)
        buffered = sum(map(len, self._bufs))
        if buffered > self.max_buffered:
            self.max_buffered = buffered
        parent = hash_internal(buf)
        buf.clear()
        self._push(i + 1, parent)

    def finish(self) -> bytes:
        """Flush the partial right-edge groups; return the root."""
        if self._leaves != self.n:
            raise ValueError(f"expected {self.n} leaves, got {self._leaves}")
        try:
            for i in range(self._top):
                if self._bufs[i]:
                    self._flush(i)
            (root,) = self._bufs[self._top]
            os.pwrite(self._fd, root, HEADER_LEN + self.offsets[self._top] * DIGEST_LEN)
        finally:
            os.close(self._fd)
        return root


def build_merkle(path: str | Path, leaves: Iterable[bytes], n: int, m: int) -> bytes:
    b = MerkleBuilder(path, n, m)
    for h in leaves:
        b.add(h)
    return b.finish()


def naive_merkle_bytes(leaves: Sequence[bytes], m: int) -> bytes:
    """Whole-tree in-memory reference build, serialized in the file format."""
    layers = [list(leaves)]
    while len(layers[-1]) > 1:
        cur = layers[-1]
        layers.append([hash_internal(cur[j:j + m]) for j in range(0, len(cur), m)])
    return _HEADER.pack(MHT_MAGIC, m, len(leaves)) + b"".join(b"".join(l) for l in layers)


@dataclass
class RangeProof:
    """Per-layer ``(file position, digest)`` siblings, leaves first, root excluded."""

    layers: list[list[tuple[int, bytes]]] = field(default_factory=list)

    def digest_count(self) -> int:
        return sum(map(len, self.layers))


def _sibling_positions(a: int, b: int, size: int, m: int) -> tuple[range, range]:
    lo = a - a % m
    hi = min(b - b % m + m, size)
    return range(lo, a), range(b + 1, hi)


class MerkleFile:
    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._fd = os.open(self.path, os.O_RDONLY)
        magic, m, n = _HEADER.unpack(os.pread(self._fd, HEADER_LEN, 0))
        if magic != MHT_MAGIC:
            raise ValueError(f"{path}: not a Merkle file")
        self.m = m
        self.n = n
        self.sizes = mht_layer_sizes(n, m)
        self.offsets = layer_offsets(self.sizes)
        self.reads = 0
        self.root = self.digest(self.offsets[-1])

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __del__(self) -> None:
        try:
            self.close()
        except Exception:
            pass

    def digest(self, pos: int) -> bytes:
        self.reads += 1
        return os.pread(self._fd, DIGEST_LEN, HEADER_LEN + pos * DIGEST_LEN)

    def _digests(self, pos: int, count: int) -> list[bytes]:
        if count <= 0:
            return []
        self.reads += 1
        raw = os.pread(self._fd, count * DIGEST_LEN, HEADER_LEN + pos * DIGEST_LEN)
        return [raw[i:i + DIGEST_LEN] for i in range(0, len(raw), DIGEST_LEN)]

    def range_proof(self, pos_l: int, pos_u: int) -> RangeProof:
        if not 0 <= pos_l <= pos_u < self.n:
            raise ValueError(f"range [{pos_l}, {pos_u}] outside [0, {self.n})")
        proof = RangeProof()
        a, b = pos_l, pos_u
        for i in range(len(self.sizes) - 1):
            off = self.offsets[i]
            left, right = _sibling_positions(a, b, self.sizes[i], self.m)
            sib = list(zip((off + p for p in left), self._digests(off + left.start, len(left))))
            sib += zip((off + p for p in right), self._digests(off + right.start, len(right)))
            proof.layers.append(sib)
            a //= self.m
            b //= self.m
        return proof


def range_root(n: int, m: int, pos_l: int, leaves: Sequence[bytes], proof: RangeProof) -> bytes | None:
    """Recompute the root from leaves ``pos_l ..`` and a range proof.

    Returns ``None`` if the proof does not have exactly the expected shape.
    """
    if n < 1 or m < 2 or not leaves or pos_l < 0 or pos_l + len(leaves) > n:
        return None
    sizes = mht_layer_sizes(n, m)
    offs = layer_offsets(sizes)
    if len(proof.layers) != len(sizes) - 1:
        return None
    a, b = pos_l, pos_l + len(leaves) - 1
    cur = list(leaves)
    for i, sib in enumerate(proof.layers):
        left, right = _sibling_positions(a, b, sizes[i], m)
        if len(sib) != len(left) + len(right):
            return None
        expect = [offs[i] + p for p in left] + [offs[i] + p for p in right]
        if [p for p, _ in sib] != expect:
            return None
        nl = len(left)
        row = [d for _, d in sib[:nl]] + cur + [d for _, d in sib[nl:]]
        if any(len(d) != DIGEST_LEN for d in row):
            return None
        cur = [hashlib.sha256(b"".join(row[j:j + m])).digest() for j in range(0, len(row), m)]
        a //= m
        b //= m
    return cur[0] if len(cur) == 1 else None
