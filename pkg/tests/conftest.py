from __future__ import annotations

import random
from bisect import bisect_right

import pytest

from cole.core import ADDR_LEN, VALUE_LEN


def rand_addr(rng: random.Random) -> bytes:
    return rng.randbytes(ADDR_LEN)


def rand_value(rng: random.Random) -> bytes:
    return rng.randbytes(VALUE_LEN)


class VersionedMap:
    """Brute-force reference: every version of every address."""

    def __init__(self) -> None:
        self.versions: dict[bytes, dict[int, bytes]] = {}

    def write_block(self, height: int, writes) -> None:
        for addr, value in writes:
            self.versions.setdefault(addr, {})[height] = value

    def get_at(self, addr: bytes, blk: int) -> bytes | None:
        vs = self.versions.get(addr)
        if not vs:
            return None
        hs = sorted(vs)
        i = bisect_right(hs, blk) - 1
        return vs[hs[i]] if i >= 0 else None

    def prov(self, addr: bytes, lo: int, hi: int) -> list[tuple[int, bytes]]:
        return sorted((h, v) for h, v in self.versions.get(addr, {}).items() if lo <= h <= hi)

    def records(self) -> list[bytes]:
        return sorted(a + h.to_bytes(8, "big") + v for a, vs in self.versions.items() for h, v in vs.items())


def fill(engine, oracle: VersionedMap, rng: random.Random, addrs: list[bytes], blocks: int,
         per_block: int, start: int = 1, fresh: float = 0.0) -> None:
    """Write ``blocks`` blocks of random updates (some to new addresses)."""
    for h in range(start, start + blocks):
        writes = []
        for _ in range(per_block):
            if rng.random() < fresh or not addrs:
                addrs.append(rand_addr(rng))
            writes.append((rng.choice(addrs), rand_value(rng)))
        engine.write_block(h, writes)
        oracle.write_block(h, writes)


@pytest.fixture
def rng() -> random.Random:
    return random.Random(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for n in sorted(verdicts):
            terminalreporter.write_line(verdicts[n])
