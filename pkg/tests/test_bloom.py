import random

import pytest
from hypothesis import given, settings, strategies as st

from cole.bloom import MAX_K, BloomFilter, address_hashes


@given(st.lists(st.binary(min_size=32, max_size=32), min_size=1, max_size=200, unique=True))
@settings(max_examples=50)
def test_no_false_negatives(addrs):
    bf = BloomFilter.build([address_hashes(a) for a in addrs], 0.01)
    assert all(a in bf for a in addrs)


def test_false_positive_rate_near_target():
    rng = random.Random(7)
    members = [rng.randbytes(32) for _ in range(5000)]
    bf = BloomFilter.build([address_hashes(a) for a in members], 0.01)
    trials = 20000
    fp = sum(rng.randbytes(32) in bf for _ in range(trials))
    assert fp / trials < 0.02


def test_serialization_round_trip_and_digest():
    rng = random.Random(3)
    bf = BloomFilter.for_capacity(100, 0.05)
    for _ in range(100):
        bf.add(rng.randbytes(32))
    raw = bf.to_bytes()
    back = BloomFilter.from_bytes(raw)
    assert back.to_bytes() == raw
    assert back.digest() == bf.digest()
    assert raw[:4] == b"CBLM"


def test_rejects_bad_input():
    bf = BloomFilter.for_capacity(10, 0.1)
    raw = bytearray(bf.to_bytes())
    with pytest.raises(ValueError):
        BloomFilter.from_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(ValueError):
        BloomFilter.from_bytes(bytes(raw[:-1]))
    raw[12:16] = (MAX_K + 1).to_bytes(4, "big")
    with pytest.raises(ValueError):
        BloomFilter.from_bytes(bytes(raw))


def test_probe_positions_follow_documented_rule():
    a = bytes(range(32))
    h1, h2 = address_hashes(a)
    bf = BloomFilter(1000, 3)
    bf.add(a)
    set_bits = {j for j in range(1000) if bf.to_bytes()[24 + (j >> 3)] >> (j & 7) & 1}
    assert set_bits == {((h1 + i * h2) % 2**64) % 1000 for i in range(3)}
