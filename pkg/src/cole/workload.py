"""Seeded workload generators.

A workload is a sequence of blocks; each block is a list of operations
``("get", addr)`` or ``("put", addr, value)``.  The sequence is a pure
function of the :class:`WorkloadConfig`.

* ``kvstore``: a load phase writes ``n_keys`` base records, then a run phase
  issues ``block_size`` operations per block, each a read with probability
  ``read_ratio`` and an update otherwise, on keys drawn uniformly or from a
  Zipfian distribution.
* ``smallbank``: every transaction moves money between two accounts, reading
  both balances and writing both back.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .core import ADDR_LEN, VALUE_LEN

Op = tuple


@dataclass(frozen=True)
class WorkloadConfig:
    kind: str = "kvstore"
    blocks: int = 100  # run-phase blocks
    block_size: int = 100
    n_keys: int = 10_000
    read_ratio: float = 0.0
    distribution: str = "uniform"  # or "zipf"
    zipf_theta: float = 0.99
    load: bool = True  # kvstore only: write base data before the run phase
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("kvstore", "smallbank"):
            raise ValueError(f"unknown workload kind {self.kind!r}")
        if self.distribution not in ("uniform", "zipf"):
            raise ValueError(f"unknown key distribution {self.distribution!r}")
        if not 0.0 <= self.read_ratio <= 1.0:
            raise ValueError("read_ratio must lie in [0, 1]")
        if self.blocks < 0 or self.block_size < 1 or self.n_keys < 2:
            raise ValueError("need blocks >= 0, block_size >= 1 and n_keys >= 2")


def key_address(i: int) -> bytes:
    """Address of the ``i``-th key (hashed so addresses spread over the key space)."""
    return hashlib.sha256(b"key" + i.to_bytes(8, "big")).digest()[:ADDR_LEN]


class Zipf:
    """YCSB-style Zipfian sampler over ``[0, n)`` (rank 0 most popular)."""

    def __init__(self, n: int, theta: float, rng: random.Random) -> None:
        self.n = n
        self.theta = theta
        self.rng = rng
        ranks = np.arange(1, n + 1, dtype=np.float64)
        self.zetan = float(np.sum(ranks ** -theta))
        zeta2 = 1.0 + 0.5 ** theta
        self.alpha = 1.0 / (1.0 - theta)
        self.eta = (1 - (2.0 / n) ** (1 - theta)) / (1 - zeta2 / self.zetan)

    def sample(self) -> int:
        u = self.rng.random()
        uz = u * self.zetan
        if uz < 1.0:
            return 0
        if uz < 1.0 + 0.5 ** self.theta:
            return 1
        return min(self.n - 1, int(self.n * (self.eta * u - self.eta + 1) ** self.alpha))


class Workload:
    def __init__(self, cfg: WorkloadConfig) -> None:
        self.cfg = cfg
        self._addrs = [key_address(i) for i in range(cfg.n_keys)]

    def _value(self, rng: random.Random) -> bytes:
        return rng.randbytes(VALUE_LEN)

    def load_blocks(self) -> Iterator[list[Op]]:
        cfg = self.cfg
        if cfg.kind != "kvstore" or not cfg.load:
            return
        rng = random.Random(f"{cfg.seed}/load")
        for start in range(0, cfg.n_keys, cfg.block_size):
            yield [("put", a, self._value(rng)) for a in self._addrs[start:start + cfg.block_size]]

    def run_blocks(self) -> Iterator[list[Op]]:
        cfg = self.cfg
        rng = random.Random(f"{cfg.seed}/run")
        if cfg.distribution == "zipf":
            zipf = Zipf(cfg.n_keys, cfg.zipf_theta, rng)
            pick = lambda: self._addrs[zipf.sample()]  # noqa: E731
        else:
            pick = lambda: self._addrs[rng.randrange(cfg.n_keys)]  # noqa: E731
        for _ in range(cfg.blocks):
            ops: list[Op] = []
            for _ in range(cfg.block_size):
                if cfg.kind == "smallbank":
                    a, b = pick(), pick()
                    ops += [("get", a), ("get", b), ("put", a, self._value(rng)), ("put", b, self._value(rng))]
                elif rng.random() < cfg.read_ratio:
                    ops.append(("get", pick()))
                else:
                    ops.append(("put", pick(), self._value(rng)))
            yield ops

    def blocks(self) -> Iterator[list[Op]]:
        yield from self.load_blocks()
        yield from self.run_blocks()

    @property
    def addresses(self) -> list[bytes]:
        return self._addrs
