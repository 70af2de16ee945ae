"""In-memory Merkle B+-tree used for the first level.

Leaves hold up to ``f`` sorted ``(key, value)`` entries; a leaf digest is
``hash_internal`` over the entries' ``hash_leaf`` values, an inner digest is
``hash_internal`` over its children's digests, and an empty tree has the
digest ``sha256(b"")``.  Digests are recomputed lazily: inserts only mark the
path they touch as dirty.

Range proofs are pruned trees.  Everything from the greatest entry ``<= lo``
through the smallest entry ``> hi`` is explicit; every other subtree or entry
is replaced by its digest.  Encoding::

    node  := 0x11 count:u8 leaf_item*  |  0x12 count:u8 inner_item*  |  0x13
    inner_item := 0x10 digest:32  |  node
    leaf_item  := 0x20 hash:32  |  0x21 record:88  |  0x22

``0x13`` is the empty tree.  ``0x22`` marks an entry whose record is supplied
by the caller (a query result) instead of being carried in the proof.
"""

from __future__ import annotations

import hashlib
import struct
from bisect import bisect_left, bisect_right
from typing import Callable, Iterator, Optional, Sequence

from .core import EMPTY_ROOT, KEY_LEN, RECORD_LEN

T_LEAF = 0x11
T_INNER = 0x12
T_EMPTY = 0x13
I_DIGEST = 0x10
I_HASH = 0x20
I_RECORD = 0x21
I_RESULT = 0x22


def _h(parts) -> bytes:
    return hashlib.sha256(b"".join(parts)).digest()


class _Leaf:
    __slots__ = ("keys", "vals", "hashes", "digest")

    def __init__(self, keys: list[bytes], vals: list[bytes], hashes: list) -> None:
        self.keys = keys
        self.vals = vals
        self.hashes = hashes  # per-entry leaf hash, None when stale
        self.digest: bytes | None = None

    def compute(self) -> bytes:
        if self.digest is None:
            hs = self.hashes
            for i, h in enumerate(hs):
                if h is None:
                    hs[i] = hashlib.sha256(self.keys[i] + self.vals[i]).digest()
            self.digest = _h(hs)
        return self.digest


class _Inner:
    __slots__ = ("keys", "children", "digest")

    def __init__(self, keys: list[bytes], children: list) -> None:
        self.keys = keys  # keys[i] is the smallest key under children[i + 1]
        self.children = children
        self.digest: bytes | None = None

    def compute(self) -> bytes:
        if self.digest is None:
            self.digest = _h([c.compute() for c in self.children])
        return self.digest


class MBTree:
    def __init__(self, fanout: int = 16) -> None:
        if fanout < 3:
            raise ValueError("fanout must be >= 3")
        self.fanout = fanout
        self.root: _Leaf | _Inner = _Leaf([], [], [])
        self.count = 0

    def __len__(self) -> int:
        return self.count

    # --- updates ---------------------------------------------------------

    def insert(self, key: bytes, value: bytes) -> None:
        """Insert or overwrite ``key``."""
        split = self._insert(self.root, key, value)
        if split is not None:
            sep, right = split
            self.root = _Inner([sep], [self.root, right])

    def _insert(self, node, key: bytes, value: bytes):
        node.digest = None
        if isinstance(node, _Leaf):
            keys = node.keys
            i = bisect_left(keys, key)
            if i < len(keys) and keys[i] == key:
                node.vals[i] = value
                node.hashes[i] = None
                return None
            keys.insert(i, key)
            node.vals.insert(i, value)
            node.hashes.insert(i, None)
            self.count += 1
            if len(keys) <= self.fanout:
                return None
            mid = len(keys) // 2
            right = _Leaf(keys[mid:], node.vals[mid:], node.hashes[mid:])
            del keys[mid:], node.vals[mid:], node.hashes[mid:]
            return right.keys[0], right
        i = bisect_right(node.keys, key)
        split = self._insert(node.children[i], key, value)
        if split is None:
            return None
        sep, right = split
        node.keys.insert(i, sep)
        node.children.insert(i + 1, right)
        if len(node.children) <= self.fanout:
            return None
        mid = len(node.children) // 2
        sep_up = node.keys[mid - 1]
        new = _Inner(node.keys[mid:], node.children[mid:])
        del node.keys[mid - 1:], node.children[mid:]
        return sep_up, new

    # --- reads -----------------------------------------------------------

    @property
    def root_hash(self) -> bytes:
        if self.count == 0:
            return EMPTY_ROOT
        return self.root.compute()

    def height(self) -> int:
        h, node = 1, self.root
        while isinstance(node, _Inner):
            node = node.children[0]
            h += 1
        return h

    def _leaf_for(self, key: bytes) -> _Leaf:
        node = self.root
        while isinstance(node, _Inner):
            node = node.children[bisect_right(node.keys, key)]
        return node

    def search_predecessor(self, q: bytes) -> tuple[bytes, bytes] | None:
        """Greatest ``(key, value)`` with ``key <= q``."""
        leaf = self._leaf_for(q)
        i = bisect_right(leaf.keys, q) - 1
        if i < 0:
            # only the leftmost leaf can start above q, since separators are
            # the exact minimum keys of right subtrees
            return None
        return leaf.keys[i], leaf.vals[i]

    def get(self, key: bytes) -> bytes | None:
        leaf = self._leaf_for(key)
        i = bisect_left(leaf.keys, key)
        if i < len(leaf.keys) and leaf.keys[i] == key:
            return leaf.vals[i]
        return None

    def _leaves(self, node=None) -> Iterator[_Leaf]:
        node = self.root if node is None else node
        if isinstance(node, _Leaf):
            yield node
        else:
            for c in node.children:
                yield from self._leaves(c)

    def items(self) -> Iterator[tuple[bytes, bytes]]:
        for leaf in self._leaves():
            yield from zip(leaf.keys, leaf.vals)

    def records(self) -> list[bytes]:
        return [k + v for k, v in self.items()]

    def drain_sorted(self) -> Iterator[tuple[bytes, bytes]]:
        """Yield every entry in key order, then leave the tree empty."""
        items = list(self.items())
        self.root = _Leaf([], [], [])
        self.count = 0
        return iter(items)

    def dump(self) -> bytes:
        """Exact node layout (preorder), so a reload reproduces the root digest."""
        out = bytearray(struct.pack(">HQ", self.fanout, self.count))

        def walk(node) -> None:
            if isinstance(node, _Leaf):
                out.append(T_LEAF)
                out.extend(struct.pack(">H", len(node.keys)))
                for k, v in zip(node.keys, node.vals):
                    out.extend(k + v)
            else:
                out.append(T_INNER)
                out.extend(struct.pack(">H", len(node.children)))
                out.extend(b"".join(node.keys))
                for c in node.children:
                    walk(c)

        walk(self.root)
        return bytes(out)

    @classmethod
    def load(cls, raw: bytes) -> "MBTree":
        fanout, count = struct.unpack_from(">HQ", raw)
        rd = _Reader(raw)
        rd.pos = 10

        def walk():
            tag = rd.byte()
            (c,) = struct.unpack(">H", rd.take(2))
            if tag == T_LEAF:
                recs = [rd.take(RECORD_LEN) for _ in range(c)]
                return _Leaf([r[:KEY_LEN] for r in recs], [r[KEY_LEN:] for r in recs], [None] * c)
            keys = [rd.take(KEY_LEN) for _ in range(c - 1)]
            return _Inner(keys, [walk() for _ in range(c)])

        t = cls(fanout)
        t.root = walk()
        t.count = count
        if rd.pos != len(raw):
            raise ValueError("trailing bytes after tree dump")
        return t

    def recompute_root(self) -> bytes:
        """Root digest recomputed from scratch, ignoring every cached digest."""
        if self.count == 0:
            return EMPTY_ROOT

        def walk(node) -> bytes:
            if isinstance(node, _Leaf):
                return _h([hashlib.sha256(k + v).digest() for k, v in zip(node.keys, node.vals)])
            return _h([walk(c) for c in node.children])

        return walk(self.root)

    def search_range(self, lo: bytes, hi: bytes,
                     is_result: Callable[[bytes], bool] | None = None) -> tuple[list[bytes], bytes]:
        """Entries in ``[lo, hi]`` as records, and the encoded range proof.

        Records for which ``is_result(key)`` holds are encoded as placeholders
        and must be supplied to the verifier; by default every key in
        ``[lo, hi]`` is a result.
        """
        if lo > hi:
            raise ValueError("empty key range")
        if is_result is None:
            is_result = lambda k: lo <= k <= hi  # noqa: E731
        if self.count == 0:
            return [], bytes([T_EMPTY])
        self.root.compute()
        pred = self.search_predecessor(lo)
        left = pred[0] if pred is not None else None
        right = self._successor(hi)
        results: list[bytes] = []
        out = bytearray()
        self._prove(self.root, left, right, is_result, out, results, None, None)
        return results, bytes(out)

    def _prove(self, node, left, right, is_result, out: bytearray, results: list,
               node_lo, node_hi) -> None:
        # explicit entries are exactly those in [left, right]; None is unbounded.
        # Separators are exact subtree minima, so a child [c_lo, c_hi) holds
        # an explicit entry iff c_lo <= right and c_hi > left.
        if isinstance(node, _Leaf):
            out += bytes([T_LEAF, len(node.keys)])
            for k, v, h in zip(node.keys, node.vals, node.hashes):
                if (left is not None and k < left) or (right is not None and k > right):
                    out.append(I_HASH)
                    out += h
                elif is_result(k):
                    out.append(I_RESULT)
                    results.append(k + v)
                else:
                    out.append(I_RECORD)
                    out += k + v
            return
        out += bytes([T_INNER, len(node.children)])
        bounds = [node_lo, *node.keys, node_hi]
        for i, child in enumerate(node.children):
            c_lo, c_hi = bounds[i], bounds[i + 1]
            if (c_lo is None or right is None or c_lo <= right) and \
                    (c_hi is None or left is None or c_hi > left):
                self._prove(child, left, right, is_result, out, results, c_lo, c_hi)
            else:
                out.append(I_DIGEST)
                out += child.digest

    def _successor(self, hi: bytes) -> bytes | None:
        """Smallest key ``> hi``."""
        node = self.root
        candidate = None
        while isinstance(node, _Inner):
            i = bisect_right(node.keys, hi)
            if i < len(node.keys):
                candidate = node.keys[i]
            node = node.children[i]
        j = bisect_right(node.keys, hi)
        if j < len(node.keys):
            return node.keys[j]
        return candidate


class ProofError(ValueError):
    pass


class _Reader:
    def __init__(self, raw: bytes) -> None:
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise ProofError("truncated proof")
        b = self.raw[self.pos:self.pos + n]
        self.pos += n
        return b

    def byte(self) -> int:
        return self.take(1)[0]


def _parse(rd: _Reader, fill: Callable[[], bytes], items: list, depth: int) -> bytes:
    if depth > 64:
        raise ProofError("proof nests too deeply")
    tag = rd.byte()
    if tag == T_LEAF:
        count = rd.byte()
        if count == 0:
            raise ProofError("empty leaf")
        hs = []
        for _ in range(count):
            it = rd.byte()
            if it == I_HASH:
                hs.append(rd.take(32))
                items.append(None)
            elif it in (I_RECORD, I_RESULT):
                rec = rd.take(RECORD_LEN) if it == I_RECORD else fill()
                hs.append(hashlib.sha256(rec).digest())
                items.append((rec, it == I_RESULT))
            else:
                raise ProofError("bad leaf item tag")
        return _h(hs)
    if tag == T_INNER:
        count = rd.byte()
        if count == 0:
            raise ProofError("empty inner node")
        ds = []
        for _ in range(count):
            if rd.raw[rd.pos:rd.pos + 1] == bytes([I_DIGEST]):
                rd.pos += 1
                ds.append(rd.take(32))
                items.append(None)
            else:
                ds.append(_parse(rd, fill, items, depth + 1))
        return _h(ds)
    raise ProofError("bad node tag")


def count_results(raw: bytes) -> int | None:
    """Number of result placeholders in a proof, or ``None`` if it is malformed."""
    if raw == bytes([T_EMPTY]):
        return 0
    items: list = []
    try:
        rd = _Reader(raw)
        _parse(rd, lambda: bytes(RECORD_LEN), items, 0)
    except ProofError:
        return None
    if rd.pos != len(raw):
        return None
    return sum(1 for x in items if x is not None and x[1])


def verify_range(raw: bytes, lo: bytes, hi: bytes, results: Sequence[bytes],
                 is_result: Callable[[bytes], bool] | None = None,
                 disclosed: list | None = None) -> Optional[bytes]:
    """Check a range proof against the claimed result records.

    Returns the reconstructed root digest, or ``None`` if the proof is
    malformed, inconsistent with ``results``, or does not show that every
    entry in ``[lo, hi]`` was disclosed.  Records carried in the proof itself
    (not results) are appended to ``disclosed`` when given.
    """
    if is_result is None:
        is_result = lambda k: lo <= k <= hi  # noqa: E731
    if raw == bytes([T_EMPTY]):
        return EMPTY_ROOT if not results else None
    it = iter(results)

    def fill() -> bytes:
        try:
            return next(it)
        except StopIteration:
            raise ProofError("more placeholders than results") from None

    items: list = []
    try:
        rd = _Reader(raw)
        root = _parse(rd, fill, items, 0)
        if rd.pos != len(raw):
            return None
    except ProofError:
        return None
    if next(it, None) is not None:
        return None
    idx = [i for i, x in enumerate(items) if x is not None]
    if not idx:
        return None
    first, last = idx[0], idx[-1]
    if last - first + 1 != len(idx):
        return None  # something opaque inside the disclosed block
    keys = [items[i][0][:KEY_LEN] for i in idx]
    if any(a >= b for a, b in zip(keys, keys[1:])):
        return None
    for i in idx:
        rec, placeholder = items[i]
        if len(rec) != RECORD_LEN or placeholder != is_result(rec[:KEY_LEN]):
            return None
    # completeness: the block starts at or below lo unless it starts the
    # tree, and ends above hi unless it ends the tree
    if first > 0 and keys[0] > lo:
        return None
    if last < len(items) - 1 and keys[-1] <= hi:
        return None
    if disclosed is not None:
        disclosed.extend(items[i][0] for i in idx if not items[i][1])
    return root
