import random

from hypothesis import given, settings, strategies as st

from cole.baseline_mpt import (
    BRANCH,
    LEAF,
    MPT,
    decode,
    encode_branch,
    encode_extension,
    encode_leaf,
    nibbles,
    proof_size,
    verify_path,
    verify_prov,
)
from cole.core import EMPTY_ROOT

from conftest import VersionedMap


def val(i: int) -> bytes:
    return i.to_bytes(48, "big")


def test_first_insert_is_a_single_leaf(tmp_path):
    m = MPT(tmp_path)
    root = m.put(bytes.fromhex("a11e67"), val(1))
    assert len(m.store) == 1
    kind, path, value = decode(m.store.get(root))
    assert kind == LEAF and path == nibbles(bytes.fromhex("a11e67")) and value == val(1)
    m.close()


def test_update_copies_the_path(tmp_path):
    # root branch -> branch under nibble "a" -> leaf for a11e67 (sibling a25531)
    m = MPT(tmp_path)
    keys = ["a11e67", "a25531", "b00000"]
    for i, k in enumerate(keys):
        m.put(bytes.fromhex(k), val(i))
    old_root = m.commit(1)
    nodes_before = len(m.store)
    _, old_proof = m.lookup(old_root, bytes.fromhex("a11e67"))
    assert [decode(e)[0] for e in old_proof] == [BRANCH, BRANCH, LEAF]
    m.put(bytes.fromhex("a11e67"), val(99))
    new_root = m.commit(2)
    assert len(m.store) == nodes_before + 3
    assert m.get_at(bytes.fromhex("a11e67"), 1) == val(0)
    assert m.get_at(bytes.fromhex("a11e67"), 2) == val(99)
    value, proof = m.lookup(old_root, bytes.fromhex("a11e67"))
    assert verify_path(old_root, bytes.fromhex("a11e67"), val(0), proof)
    assert not verify_path(new_root, bytes.fromhex("a11e67"), val(0), proof)
    m.close()


def test_encodings_round_trip():
    path = bytes([1, 2, 3])
    assert decode(encode_leaf(path, b"xy")) == (LEAF, path, b"xy")
    assert decode(encode_extension(path, bytes(32)))[2] == bytes(32)
    br = {0: b"\x01" * 32, 15: b"\x02" * 32}
    assert decode(encode_branch(br))[2] == br


@given(st.lists(st.tuples(st.integers(0, 40), st.integers(0, 10**6)), min_size=1, max_size=120))
@settings(max_examples=40, deadline=None)
def test_history_matches_oracle(tmp_path_factory, writes):
    m = MPT(tmp_path_factory.mktemp("mpt"))
    oracle = VersionedMap()
    addrs = [random.Random(i).randbytes(32) for i in range(41)]
    for h, (a, v) in enumerate(writes, start=1):
        block = [(addrs[a], val(v))]
        m.write_block(h, block)
        oracle.write_block(h, block)
    assert len(m.store) >= len({a for a, _ in writes})
    for h in range(1, len(writes) + 1, 7):
        for a in addrs[:10]:
            assert m.get_at(a, h) == oracle.get_at(a, h)
    m.close()


def test_duplication_grows_node_count(tmp_path):
    rng = random.Random(1)
    m = MPT(tmp_path)
    addrs = [rng.randbytes(32) for _ in range(50)]
    n = 500
    for h in range(1, n + 1):
        m.write_block(h, [(rng.choice(addrs), rng.randbytes(48))])
    assert len(m.store) > n
    m.close()


def test_prov_query_is_per_block(tmp_path):
    rng = random.Random(2)
    m = MPT(tmp_path)
    addrs = [rng.randbytes(32) for _ in range(30)]
    for h in range(1, 101):
        m.write_block(h, [(rng.choice(addrs), rng.randbytes(48)) for _ in range(5)])
    a = addrs[0]
    values, proofs = m.prov_query(a, 10, 41)
    assert len(values) == len(proofs) == 32
    roots = {h: m.root_at(h) for h in range(10, 42)}
    assert verify_prov(roots, a, values, proofs)
    bad = list(values)
    bad[3] = (bad[3][0], bytes(48))
    assert not verify_prov(roots, a, bad, proofs)
    short = proof_size(m.prov_query(a, 10, 11)[1])
    assert proof_size(proofs) > 10 * short
    m.close()


def test_absent_address_has_non_membership_path(tmp_path):
    rng = random.Random(3)
    m = MPT(tmp_path)
    m.write_block(1, [(rng.randbytes(32), rng.randbytes(48)) for _ in range(20)])
    a = rng.randbytes(32)
    value, proof = m.lookup(m.root, a)
    assert value is None and proof
    assert verify_path(m.root, a, None, proof)
    assert verify_path(EMPTY_ROOT, a, None, [])
    m.close()


def test_reopen(tmp_path):
    rng = random.Random(4)
    m = MPT(tmp_path)
    a = rng.randbytes(32)
    m.write_block(1, [(a, val(1))])
    m.write_block(2, [(a, val(2))])
    m.close()
    m = MPT(tmp_path)
    assert m.get(a) == val(2) and m.get_at(a, 1) == val(1)
    m.close()
