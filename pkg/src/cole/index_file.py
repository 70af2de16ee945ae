"""Paged record files and the layered learned index file.

Both the value file and the index file store fixed 88-byte records, ``2*eps``
to a page, with the tail of each page zero-padded so that record ``p`` lives
in page ``p // (2*eps)``.

Index file layout::

    layer 0 pages | layer 1 pages | ... | top layer page | footer

Each layer starts on a fresh page.  Model ``j`` of a layer sits at global
position ``first_page * per_page + j``; upper-layer models predict these
global positions.  The footer is::

    count[0] u64 | ... | count[L-1] u64 | b"CIDX" | version u8 | eps u16 |
    layers u16 | footer_len u32

``footer_len`` is the byte length of the whole footer and is read first.
"""

from __future__ import annotations

import os
import struct
from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator

from .core import KEY_LEN, PAGE_SIZE, RECORD_LEN
from .learned_model import MODEL_LEN, Model, ModelBuilder, ModelCoverageError, locate_in_page_file

INDEX_MAGIC = b"CIDX"
INDEX_VERSION = 1
_FOOTER_TAIL = struct.Struct(">4sBHHI")


class PageReader:
    """Page-granular reader over a file of fixed-size records.

    ``reads`` counts every page fetched from the file.
    """

    def __init__(self, path: str | Path, per_page: int, page_size: int = PAGE_SIZE,
                 record_len: int = RECORD_LEN) -> None:
        self.path = Path(path)
        self.per_page = per_page
        self.page_size = page_size
        self.record_len = record_len
        self.reads = 0
        self._fd = os.open(self.path, os.O_RDONLY)

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __del__(self) -> None:
        try:
            self.close()
        except Exception:
            pass

    def read_page(self, page: int) -> bytes:
        self.reads += 1
        return os.pread(self._fd, self.page_size, page * self.page_size)

    def read_bytes(self, offset: int, length: int) -> bytes:
        """Raw read that is not counted as a page fetch (footers, headers)."""
        return os.pread(self._fd, length, offset)


class PageView:
    """A page range of a :class:`PageReader` holding ``count`` records.

    ``base`` is the global position of the view's first record, so a view
    answers in the same position space its models were trained on.
    """

    def __init__(self, reader: PageReader, first_page: int, count: int) -> None:
        self.reader = reader
        self.first_page = first_page
        self.count = count
        self.per_page = reader.per_page
        self.page_count = -(-count // self.per_page)
        self.base = first_page * self.per_page

    def page_len(self, page: int) -> int:
        if page < self.page_count - 1:
            return self.per_page
        return self.count - page * self.per_page

    def read_records(self, page: int) -> list[bytes]:
        raw = self.reader.read_page(self.first_page + page)
        rl = self.reader.record_len
        return [raw[i * rl:(i + 1) * rl] for i in range(self.page_len(page))]

    def read_keys(self, page: int) -> list[bytes]:
        raw = self.reader.read_page(self.first_page + page)
        rl = self.reader.record_len
        return [raw[i * rl:i * rl + KEY_LEN] for i in range(self.page_len(page))]


class PagedWriter:
    """Append fixed-size records, zero-padding every page."""

    def __init__(self, path: str | Path, per_page: int, page_size: int = PAGE_SIZE,
                 record_len: int = RECORD_LEN, append: bool = False) -> None:
        self._f = open(path, "ab" if append else "wb", buffering=1 << 16)
        self.per_page = per_page
        self._pad = b"\0" * (page_size - per_page * record_len)
        self.record_len = record_len
        self.count = 0  # records written
        self.pages = 0  # pages started

    def append(self, rec: bytes) -> None:
        if self.count % self.per_page == 0:
            self.pages += 1
        self._f.write(rec)
        self.count += 1
        if self.count % self.per_page == 0:
            self._f.write(self._pad)

    def end_page(self) -> None:
        """Pad out a partially filled page."""
        rem = self.count % self.per_page
        if rem:
            self._f.write(b"\0" * ((self.per_page - rem) * self.record_len) + self._pad)
            self.count += self.per_page - rem

    def write_raw(self, data: bytes) -> None:
        self._f.write(data)

    def close(self) -> None:
        self._f.close()


class IndexBuilder:
    """Streaming index construction.

    Feed ``(encoded key, position)`` for each value record in order via
    :meth:`add`; :meth:`finish` writes the upper layers and the footer.
    """

    def __init__(self, path: str | Path, epsilon: int, page_size: int = PAGE_SIZE) -> None:
        self.path = Path(path)
        self.epsilon = epsilon
        self.page_size = page_size
        self.per_page = 2 * epsilon
        self._w = PagedWriter(self.path, self.per_page, page_size, MODEL_LEN)
        self._builder = ModelBuilder(epsilon)
        self.counts: list[int] = []
        self._layer_count = 0
        self.precision_splits = 0

    def add(self, key: int, pos: int) -> None:
        for m in self._builder.add(key, pos):
            self._write_model(m)

    def _write_model(self, m: Model) -> None:
        self._w.append(m.to_bytes())
        self._layer_count += 1

    def _close_layer(self, builder: ModelBuilder) -> None:
        for m in builder.finish():
            self._write_model(m)
        self.precision_splits += builder.precision_splits
        self.counts.append(self._layer_count)
        self._layer_count = 0
        self._w.end_page()

    def finish(self) -> list[int]:
        self._close_layer(self._builder)
        self._w.close()
        first_page = 0
        while self.counts[-1] > self.per_page:
            # learn the next layer over (k_min, global position) of this one
            n = self.counts[-1]
            reader = PageReader(self.path, self.per_page, self.page_size, MODEL_LEN)
            try:
                view = PageView(reader, first_page, n)
                self._w = PagedWriter(self.path, self.per_page, self.page_size, MODEL_LEN, append=True)
                builder = ModelBuilder(self.epsilon)
                for page in range(view.page_count):
                    for j, key in enumerate(view.read_keys(page)):
                        pos = view.base + page * self.per_page + j
                        for m in builder.add(int.from_bytes(key, "big"), pos):
                            self._write_model(m)
                self._close_layer(builder)
            finally:
                reader.close()
                self._w.close()
            first_page += view.page_count
        footer = b"".join(struct.pack(">Q", c) for c in self.counts)
        footer_len = len(footer) + _FOOTER_TAIL.size
        footer += _FOOTER_TAIL.pack(INDEX_MAGIC, INDEX_VERSION, self.epsilon,
                                    len(self.counts), footer_len)
        with open(self.path, "ab") as f:
            f.write(footer)
        return self.counts


def build_index(path: str | Path, stream: Iterable[tuple[int, int]], epsilon: int,
                page_size: int = PAGE_SIZE) -> list[int]:
    """Build an index file from ``(encoded key, position)`` pairs; returns layer sizes."""
    b = IndexBuilder(path, epsilon, page_size)
    for key, pos in stream:
        b.add(key, pos)
    return b.finish()


@dataclass
class _Layer:
    first_page: int
    count: int


class IndexFile:
    """Read side of an index file."""

    def __init__(self, path: str | Path, page_size: int = PAGE_SIZE) -> None:
        self.path = Path(path)
        size = self.path.stat().st_size
        probe = PageReader(self.path, 1, page_size, MODEL_LEN)
        try:
            (footer_len,) = struct.unpack(">I", probe.read_bytes(size - 4, 4))
            footer = probe.read_bytes(size - footer_len, footer_len)
        finally:
            probe.close()
        magic, version, eps, nlayers, _ = _FOOTER_TAIL.unpack_from(footer, len(footer) - _FOOTER_TAIL.size)
        if magic != INDEX_MAGIC or version != INDEX_VERSION:
            raise ValueError(f"{path}: not an index file")
        if len(footer) != 8 * nlayers + _FOOTER_TAIL.size:
            raise ValueError(f"{path}: corrupt index footer")
        self.epsilon = eps
        self.per_page = 2 * eps
        self.counts = list(struct.unpack_from(f">{nlayers}Q", footer))
        self.layers: list[_Layer] = []
        page = 0
        for c in self.counts:
            self.layers.append(_Layer(page, c))
            page += -(-c // self.per_page)
        if page * page_size != size - footer_len:
            raise ValueError(f"{path}: layer table does not match file size")
        self.reader = PageReader(self.path, self.per_page, page_size, MODEL_LEN)

    @property
    def n_layers(self) -> int:
        return len(self.counts)

    def close(self) -> None:
        self.reader.close()

    def layer_view(self, j: int) -> PageView:
        layer = self.layers[j]
        return PageView(self.reader, layer.first_page, layer.count)

    def models(self, j: int) -> Iterator[Model]:
        """All models of layer ``j`` (counts page reads like any other access)."""
        view = self.layer_view(j)
        for page in range(view.page_count):
            for rec in view.read_records(page):
                yield Model.from_bytes(rec)

    def audit(self, values: PageView) -> tuple[Fraction, int]:
        """``(max error, keys checked)`` over every layer.

        Each key, in the value file or in a lower index layer, is checked
        against the model covering it (the last model whose first key is not
        above it).
        """
        worst, checked = Fraction(0), 0
        lower = values
        for j in range(self.n_layers):
            models = list(self.models(j))
            firsts = [m.k_min for m in models]
            for page in range(lower.page_count):
                for slot, key in enumerate(lower.read_keys(page)):
                    k = int.from_bytes(key, "big")
                    i = bisect_right(firsts, k) - 1
                    if i < 0:
                        raise ModelCoverageError("key precedes the first model")
                    err = models[i].error(k, lower.base + page * lower.per_page + slot)
                    worst = max(worst, err)
                    checked += 1
            lower = self.layer_view(j)
        return worst, checked

    def search(self, values: PageView, q: bytes) -> tuple[int, bytes] | None:
        """Predecessor record of packed key ``q`` in the value file ``values``."""
        top = self.layer_view(self.n_layers - 1)
        recs = top.read_records(0)
        i = bisect_right([r[:KEY_LEN] for r in recs], q) - 1
        if i < 0:
            return None
        model = Model.from_bytes(recs[i])
        for j in range(self.n_layers - 2, -1, -1):
            hit = locate_in_page_file(model, self.layer_view(j), q)
            if hit is None:  # cannot happen for a well-formed file
                raise ModelCoverageError("index layer lookup fell off its model")
            model = Model.from_bytes(hit[1])
        return locate_in_page_file(model, values, q)
