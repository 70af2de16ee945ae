"""Address Bloom filters for runs.

Probe ``i`` of address ``a`` is ``(h1 + i*h2) mod 2**64 mod nbits`` with
``h1`` the first and ``h2`` the second big-endian u64 of ``sha256(a)`` (``h2``
forced odd).  Bit ``j`` is ``byte[j >> 3] & (1 << (j & 7))``.

Serialized form: ``b"CBLM" | n_items u64 | k u32 | nbits u64 | bits``.  The
digest of that byte string is what a run contributes to the state digest.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .core import optimal_bloom_shape, sha256

BLOOM_MAGIC = b"CBLM"
_HEADER = struct.Struct(">4sQIQ")
_MASK64 = (1 << 64) - 1
MAX_K = 64  # bounds verifier work on untrusted filters


def address_hashes(addr: bytes) -> tuple[int, int]:
    d = hashlib.sha256(addr).digest()
    return int.from_bytes(d[:8], "big"), int.from_bytes(d[8:16], "big") | 1


class BloomFilter:
    def __init__(self, nbits: int, k: int, bits: bytes | None = None, n_items: int = 0) -> None:
        if nbits < 1 or k < 1:
            raise ValueError("bloom filter needs nbits >= 1 and k >= 1")
        self.nbits = nbits
        self.k = k
        self.n_items = n_items
        nbytes = (nbits + 7) // 8
        if bits is None:
            self._bits = np.zeros(nbytes, dtype=np.uint8)
        else:
            if len(bits) != nbytes:
                raise ValueError("bit array length does not match nbits")
            self._bits = np.frombuffer(bits, dtype=np.uint8).copy()

    @classmethod
    def for_capacity(cls, n: int, fpr: float) -> "BloomFilter":
        nbits, k = optimal_bloom_shape(n, fpr)
        return cls(nbits, k)

    @classmethod
    def build(cls, hashes: list[tuple[int, int]], fpr: float) -> "BloomFilter":
        """Filter sized for exactly ``len(hashes)`` items, all inserted."""
        bf = cls.for_capacity(len(hashes), fpr)
        bf.add_hashes(hashes)
        return bf

    def add_hashes(self, hashes: list[tuple[int, int]]) -> None:
        if not hashes:
            return
        arr = np.array(hashes, dtype=np.uint64).reshape(-1, 2)
        h1, h2 = arr[:, 0], arr[:, 1]
        steps = np.arange(self.k, dtype=np.uint64)
        with np.errstate(over="ignore"):
            pos = (h1[:, None] + steps[None, :] * h2[:, None]) % np.uint64(self.nbits)
        pos = pos.ravel()
        np.bitwise_or.at(self._bits, (pos >> np.uint64(3)).astype(np.intp),
                         (np.uint8(1) << (pos & np.uint64(7)).astype(np.uint8)))
        self.n_items += len(hashes)

    def add(self, addr: bytes) -> None:
        self.add_hashes([address_hashes(addr)])

    def __contains__(self, addr: bytes) -> bool:
        h1, h2 = address_hashes(addr)
        bits = self._bits
        nbits = self.nbits
        for i in range(self.k):
            j = ((h1 + i * h2) & _MASK64) % nbits
            if not bits[j >> 3] & (1 << (j & 7)):
                return False
        return True

    def to_bytes(self) -> bytes:
        return _HEADER.pack(BLOOM_MAGIC, self.n_items, self.k, self.nbits) + self._bits.tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "BloomFilter":
        if len(raw) < _HEADER.size:
            raise ValueError("truncated bloom filter")
        magic, n_items, k, nbits = _HEADER.unpack_from(raw)
        if magic != BLOOM_MAGIC:
            raise ValueError("not a bloom filter")
        if k > MAX_K:
            raise ValueError(f"bloom filter with k={k} probes is not accepted")
        return cls(nbits, k, raw[_HEADER.size:], n_items)

    def digest(self) -> bytes:
        return sha256(self.to_bytes())

    def __len__(self) -> int:
        return len(self.to_bytes())
