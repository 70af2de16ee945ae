"""Shared record geometry, key encoding, hashing and engine configuration.

Byte layouts (all integers big-endian, no padding between fields):

* compound key: ``addr (32) || blk (8)`` -- 40 bytes
* record / leaf preimage: ``addr (32) || blk (8) || value (48)`` -- 88 bytes
* internal node preimage: child digests concatenated in order
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

ADDR_LEN = 32
BLK_LEN = 8
KEY_LEN = ADDR_LEN + BLK_LEN
VALUE_LEN = 48
RECORD_LEN = KEY_LEN + VALUE_LEN
DIGEST_LEN = 32
PAGE_SIZE = 4096
MAX_HEIGHT = 2**64 - 1

_BLK = struct.Struct(">Q")

EMPTY_ROOT = hashlib.sha256(b"").digest()
ZERO_DIGEST = bytes(DIGEST_LEN)


class CompoundKey(NamedTuple):
    """``(addr, blk)``; tuple ordering matches the packed byte ordering."""

    addr: bytes
    blk: int

    def pack(self) -> bytes:
        return pack_key(self.addr, self.blk)

    @classmethod
    def unpack(cls, raw: bytes) -> "CompoundKey":
        return cls(raw[:ADDR_LEN], _BLK.unpack_from(raw, ADDR_LEN)[0])


def check_addr(addr: bytes) -> bytes:
    if not isinstance(addr, (bytes, bytearray)) or len(addr) != ADDR_LEN:
        raise ValueError(f"address must be {ADDR_LEN} bytes")
    return bytes(addr)


def check_value(value: bytes) -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != VALUE_LEN:
        raise ValueError(f"value must be {VALUE_LEN} bytes")
    return bytes(value)


def pack_key(addr: bytes, blk: int) -> bytes:
    if not 0 <= blk <= MAX_HEIGHT:
        raise ValueError(f"block height out of range: {blk}")
    return addr + _BLK.pack(blk)


def key_addr(key: bytes) -> bytes:
    return key[:ADDR_LEN]


def key_blk(key: bytes) -> int:
    return _BLK.unpack_from(key, ADDR_LEN)[0]


def encode_key(k: CompoundKey | bytes) -> int:
    """Big number whose big-endian bytes are ``addr || blk``."""
    raw = k.pack() if isinstance(k, CompoundKey) else k
    return int.from_bytes(raw[:KEY_LEN], "big")


def decode_key(num: int) -> bytes:
    return num.to_bytes(KEY_LEN, "big")


def hash_leaf(key: bytes | CompoundKey, value: bytes) -> bytes:
    raw = key.pack() if isinstance(key, CompoundKey) else key
    return hashlib.sha256(raw + value).digest()


def hash_record(record: bytes) -> bytes:
    """Leaf digest of an already packed 88-byte record."""
    return hashlib.sha256(record).digest()


def hash_internal(children: Sequence[bytes]) -> bytes:
    if not children:
        raise ValueError("internal node needs at least one child digest")
    return hashlib.sha256(b"".join(children)).digest()


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def derived_epsilon(page_size: int = PAGE_SIZE, record_size: int = RECORD_LEN) -> int:
    return page_size // record_size // 2


@dataclass(frozen=True)
class EngineConfig:
    size_ratio: int = 4
    mht_fanout: int = 4
    epsilon: int = 23
    mem_capacity: int = 4096
    page_size: int = PAGE_SIZE
    async_merge: bool = False
    bloom_base_fpr: float = 0.001
    bloom_fpr_cap: float = 0.5
    mbtree_fanout: int = 16
    # "process" or "thread"; only consulted when async_merge is on
    merge_executor: str = "thread"
    # async only: every this many writes, wait for lagging merges (0 = never)
    pace_interval: int = 256

    def __post_init__(self) -> None:
        if self.size_ratio < 2:
            raise ValueError("size_ratio must be >= 2")
        if self.mht_fanout < 2:
            raise ValueError("mht_fanout must be >= 2")
        if self.epsilon < 1:
            raise ValueError("epsilon must be >= 1")
        if self.mem_capacity < 1:
            raise ValueError("mem_capacity must be >= 1")
        if 2 * self.epsilon * RECORD_LEN > self.page_size:
            raise ValueError(
                f"2*epsilon records of {RECORD_LEN} bytes do not fit a "
                f"{self.page_size}-byte page (max epsilon "
                f"{derived_epsilon(self.page_size)})"
            )
        if not 0.0 < self.bloom_base_fpr < 1.0:
            raise ValueError("bloom_base_fpr must lie in (0, 1)")
        if not 0.0 < self.bloom_fpr_cap < 1.0:
            raise ValueError("bloom_fpr_cap must lie in (0, 1)")
        if self.mbtree_fanout < 3:
            raise ValueError("mbtree_fanout must be >= 3")
        if self.merge_executor not in ("process", "thread"):
            raise ValueError("merge_executor must be 'process' or 'thread'")
        if self.pace_interval < 0:
            raise ValueError("pace_interval must be >= 0")

    @property
    def records_per_page(self) -> int:
        return 2 * self.epsilon

    def run_size(self, level: int) -> int:
        """Records in one run of on-disk level ``level`` (level 1 runs hold B)."""
        return self.mem_capacity * self.size_ratio ** (level - 1)

    def bloom_fpr(self, level: int) -> float:
        return min(self.bloom_base_fpr * self.size_ratio ** (level - 1), self.bloom_fpr_cap)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "EngineConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # python < 3.11
                import tomli as tomllib
            data = tomllib.loads(text)
            data = data.get("engine", data)
        else:
            data = json.loads(text)
        return cls.from_dict(data)


def mht_layer_sizes(n: int, m: int) -> list[int]:
    """``[n, ceil(n/m), ceil(n/m^2), ..., 1]``."""
    if n < 1:
        raise ValueError("an MHT needs at least one leaf")
    sizes = [n]
    while sizes[-1] > 1:
        sizes.append(-(-sizes[-1] // m))
    return sizes


def mht_height(n: int, m: int) -> int:
    """Number of parent steps from a leaf to the root, ``ceil(log_m n)``."""
    return len(mht_layer_sizes(n, m)) - 1


def optimal_bloom_shape(n: int, fpr: float) -> tuple[int, int]:
    """``(bits, hash_count)`` for ``n`` keys at target false-positive rate ``fpr``."""
    n = max(n, 1)
    bits = max(8, math.ceil(-n * math.log(fpr) / (math.log(2) ** 2)))
    k = max(1, round(bits / n * math.log(2)))
    return bits, k


ROLE_WRITING = 0
ROLE_MERGING = 1
KIND_MBTREE = 0
KIND_RUN = 1
_ENTRY = struct.Struct(">IBIBQH32s32s")
ENTRY_LEN = _ENTRY.size


class RootEntry(NamedTuple):
    """One ``root_hash_list`` entry.

    Serialized as ``level u32 | role u8 | idx u32 | kind u8 | n u64 | m u16 |
    root 32 | bloom_digest 32``; MB-tree entries carry a zero bloom digest.
    ``idx`` counts runs oldest first within their group.
    """

    level: int
    role: int
    idx: int
    kind: int
    n: int
    m: int
    root: bytes
    bloom_digest: bytes = ZERO_DIGEST

    def pack(self) -> bytes:
        return _ENTRY.pack(*self)

    @classmethod
    def unpack(cls, raw: bytes) -> "RootEntry":
        return cls(*_ENTRY.unpack(raw))

    def canonical_key(self) -> tuple[int, int, int]:
        return (self.level, self.role, self.idx)

    def search_key(self) -> tuple[int, int, int]:
        # newest first within a group
        return (self.level, self.role, -self.idx)


def state_digest(entries: Iterable[RootEntry]) -> bytes:
    """``H_state``: SHA-256 over the packed entries in canonical order."""
    ordered = sorted(entries, key=RootEntry.canonical_key)
    return hashlib.sha256(b"".join(e.pack() for e in ordered)).digest()

