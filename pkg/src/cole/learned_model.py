"""Streaming epsilon-bounded piecewise linear models.

Points are ``(key, position)`` with keys as big integers.  Within a segment
keys are re-based on the segment's first key, so all hull geometry is done on
exact Python integers.  The feasibility test is the classic online optimal
PLA: keep convex chains over the shifted points ``(x, y + eps)`` and
``(x, y - eps)`` together with the two extreme feasible lines; a point is
rejected once no line passes within ``eps`` of every point, which is the same
as the minimal vertical-sided parallelogram over the hull exceeding ``2*eps``
in height.

Stored models use a float64 slope and a 64.64 fixed-point intercept, and all
predictions are evaluated exactly from those stored values.  Once the slope is
rounded, the intercept is picked from the exact window that keeps every
covered point within epsilon; if rounding empties that window (the feasible
slope range was a single non-representable value) the segment is cut early.
"""

from __future__ import annotations

import struct
from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator

from .core import KEY_LEN, RECORD_LEN, decode_key, encode_key

IC_FRAC_BITS = 64
_IC_ONE = 1 << IC_FRAC_BITS
_MODEL_TAIL = struct.Struct(">d16sQ16x")
MODEL_LEN = RECORD_LEN
assert KEY_LEN + _MODEL_TAIL.size == MODEL_LEN


class ModelCoverageError(LookupError):
    """The queried key precedes the model's first key."""


@dataclass(frozen=True)
class Model:
    sl: float
    ic_fixed: int  # intercept * 2**64, relative to k_min
    k_min: int  # encoded first key
    p_max: int

    @property
    def ic(self) -> float:
        return self.ic_fixed / _IC_ONE

    def _ratio(self) -> tuple[int, int]:
        num, den = self.sl.as_integer_ratio()
        # den is a power of two; bring both terms onto the larger denominator
        if den >= _IC_ONE:
            return num, den
        return num * (_IC_ONE // den), _IC_ONE

    def predict_exact(self, key: int) -> Fraction:
        """Unclamped prediction as an exact rational."""
        num, den = self._ratio()
        return Fraction(num * (key - self.k_min) + self.ic_fixed * (den // _IC_ONE), den)

    def predict_floor(self, key: int) -> int:
        """``floor(min(pred, p_max))`` clamped to ``>= 0``."""
        if key < self.k_min:
            raise ModelCoverageError("model does not cover key")
        num, den = self._ratio()
        scale = den // _IC_ONE
        val = (num * (key - self.k_min) + self.ic_fixed * scale) // den
        if val > self.p_max:
            return self.p_max
        return val if val > 0 else 0

    def predict(self, key: int) -> float:
        if key < self.k_min:
            raise ModelCoverageError("model does not cover key")
        p = self.predict_exact(key)
        if p > self.p_max:
            return float(self.p_max)
        return float(p) if p > 0 else 0.0

    def error(self, key: int, pos: int) -> Fraction:
        """``|min(pred, p_max) - pos|`` exactly."""
        p = min(self.predict_exact(key), Fraction(self.p_max))
        return abs(p - pos)

    def to_bytes(self) -> bytes:
        return decode_key(self.k_min) + _MODEL_TAIL.pack(
            self.sl, self.ic_fixed.to_bytes(16, "big", signed=True), self.p_max
        )

    @classmethod
    def from_bytes(cls, raw: bytes | memoryview) -> "Model":
        sl, ic, p_max = _MODEL_TAIL.unpack_from(raw, KEY_LEN)
        return cls(sl, int.from_bytes(ic, "big", signed=True), int.from_bytes(raw[:KEY_LEN], "big"), p_max)


class ModelBuilder:
    """Push ``(key, position)`` pairs; collect emitted models from :meth:`add`."""

    def __init__(self, epsilon: int) -> None:
        if epsilon < 1:
            raise ValueError("epsilon must be >= 1")
        self.epsilon = epsilon
        self.precision_splits = 0
        self._last_key: int | None = None
        self._reset()

    def _reset(self) -> None:
        self._x0 = 0
        self._pts: list[tuple[int, int]] = []  # re-based (x, pos) of the open segment
        self._upper: list[tuple[int, int]] = []  # chain over (x, y + eps)
        self._lower: list[tuple[int, int]] = []  # chain over (x, y - eps)
        self._u0 = 0
        self._l0 = 0
        self._rect: list[tuple[int, int]] = []

    # --- hull state ------------------------------------------------------

    def _try_extend(self, x: int, y: int) -> bool:
        eps = self.epsilon
        p1 = (x, y + eps)
        p2 = (x, y - eps)
        n = len(self._pts)
        if n == 0:
            self._rect = [p1, p2, None, None]
            self._upper = [p1]
            self._lower = [p2]
            self._u0 = self._l0 = 0
            return True
        rect = self._rect
        if n == 1:
            rect[2] = p2
            rect[3] = p1
            self._upper.append(p1)
            self._lower.append(p2)
            return True

        r0, r1, r2, r3 = rect
        # min slope line r0 -> r2, max slope line r1 -> r3
        s1dx, s1dy = r2[0] - r0[0], r2[1] - r0[1]
        s2dx, s2dy = r3[0] - r1[0], r3[1] - r1[1]
        # p1 below the min-slope line, or p2 above the max-slope line: infeasible
        if (p1[1] - r2[1]) * s1dx < s1dy * (x - r2[0]):
            return False
        if (p2[1] - r3[1]) * s2dx > s2dy * (x - r3[0]):
            return False

        if (p1[1] - r1[1]) * s2dx < s2dy * (x - r1[0]):
            lower = self._lower
            i = self._l0
            # slope from lower[i] to p1, minimised over the lower hull
            bdx, bdy = x - lower[i][0], p1[1] - lower[i][1]
            best = i
            for j in range(i + 1, len(lower)):
                dx, dy = x - lower[j][0], p1[1] - lower[j][1]
                if dy * bdx > bdy * dx:
                    break
                bdx, bdy, best = dx, dy, j
            rect[1] = lower[best]
            rect[3] = p1
            self._l0 = best
            upper = self._upper
            end = len(upper)
            while end >= self._u0 + 2 and _cross(upper[end - 2], upper[end - 1], p1) <= 0:
                end -= 1
            del upper[end:]
            upper.append(p1)

        if (p2[1] - r0[1]) * s1dx > s1dy * (x - r0[0]):
            upper = self._upper
            i = self._u0
            bdx, bdy = x - upper[i][0], p2[1] - upper[i][1]
            best = i
            for j in range(i + 1, len(upper)):
                dx, dy = x - upper[j][0], p2[1] - upper[j][1]
                if dy * bdx < bdy * dx:
                    break
                bdx, bdy, best = dx, dy, j
            rect[0] = upper[best]
            rect[2] = p2
            self._u0 = best
            lower = self._lower
            end = len(lower)
            while end >= self._l0 + 2 and _cross(lower[end - 2], lower[end - 1], p2) >= 0:
                end -= 1
            del lower[end:]
            lower.append(p2)
        return True

    def _central_slope(self) -> Fraction:
        """Midpoint of the two extreme feasible slopes."""
        r0, r1, r2, r3 = self._rect
        if len(self._pts) == 1:
            return Fraction(0)
        s_min = Fraction(r2[1] - r0[1], r2[0] - r0[0])
        s_max = Fraction(r3[1] - r1[1], r3[0] - r1[0])
        return (s_min + s_max) / 2

    def _make_model(self) -> tuple[Model, int]:
        """Build the stored model; return it and how many points it covers."""
        # the max feasible slope is always positive, so clamping at zero
        # stays feasible and keeps predictions monotone in the key
        sl = max(float(self._central_slope()), 0.0)
        num, den = Model(sl, 0, 0, 0)._ratio()
        scale = den // _IC_ONE
        eps = self.epsilon
        pts = self._pts
        # With the slope fixed to its float value, intersect the intercept
        # windows of all points (in units of 2**-64).  Clamping at p_max can
        # only shrink errors, so it is ignored here.
        lo, hi = None, None
        covered = len(pts)
        for i, (x, p) in enumerate(pts):
            a = num * x
            p_lo = -((a - (p - eps) * den) // scale)  # ceil
            p_hi = ((p + eps) * den - a) // scale
            n_lo = p_lo if lo is None or p_lo > lo else lo
            n_hi = p_hi if hi is None or p_hi < hi else hi
            if n_lo > n_hi:
                covered = i
                self.precision_splits += 1
                break
            lo, hi = n_lo, n_hi
        return Model(sl, (lo + hi) // 2, self._x0, pts[covered - 1][1]), covered

    # --- public interface -----------------------------------------------

    def add(self, key: int, pos: int) -> list[Model]:
        if self._last_key is not None and key <= self._last_key:
            raise ValueError("keys must be strictly increasing")
        self._last_key = key
        out: list[Model] = []
        self._push(key, pos, out)
        return out

    def _push(self, key: int, pos: int, out: list[Model]) -> None:
        if not self._pts:
            self._x0 = key
        x = key - self._x0
        if self._try_extend(x, pos):
            self._pts.append((x, pos))
            return
        self._emit(out)
        self._push(key, pos, out)

    def _emit(self, out: list[Model]) -> None:
        model, covered = self._make_model()
        out.append(model)
        rest = [(x + self._x0, p) for x, p in self._pts[covered:]]
        self._reset()
        for k, p in rest:
            self._push(k, p, out)

    def finish(self) -> list[Model]:
        out: list[Model] = []
        while self._pts:
            self._emit(out)
        return out

    @property
    def hull_size(self) -> int:
        return len(self._upper) + len(self._lower)


def _cross(o: tuple[int, int], a: tuple[int, int], b: tuple[int, int]) -> int:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def build_models(stream: Iterable[tuple[int, int]], epsilon: int) -> Iterator[Model]:
    """Yield models over a stream of ``(encoded key, position)`` pairs."""
    builder = ModelBuilder(epsilon)
    for key, pos in stream:
        yield from builder.add(key, pos)
    yield from builder.finish()


def locate_in_page_file(model: Model, view, q: bytes) -> tuple[int, bytes] | None:
    """Predecessor of ``q`` (greatest key <= q) using at most two page reads.

    ``view`` is a page range (see :class:`cole.index_file.PageView`) whose
    record positions start at ``view.base``.  Returns ``(position, record)``
    or ``None`` when ``q`` precedes the first record.  The model must cover
    the predecessor of ``q``, which bounds it to the predicted page or one
    of its neighbours.
    """
    pos = model.predict_floor(int.from_bytes(q, "big")) - view.base
    page = min(max(pos // view.per_page, 0), view.page_count - 1)
    recs = view.read_records(page)
    if q < recs[0][:KEY_LEN]:
        if page == 0:
            return None
        page -= 1
        recs = view.read_records(page)
    elif q > recs[-1][:KEY_LEN] and page + 1 < view.page_count:
        nxt = view.read_records(page + 1)
        if q >= nxt[0][:KEY_LEN]:
            page, recs = page + 1, nxt
    i = bisect_right([r[:KEY_LEN] for r in recs], q) - 1
    if i < 0:
        return None
    return view.base + page * view.per_page + i, recs[i]


def keys_of(records: Iterable[bytes]) -> Iterator[tuple[int, int]]:
    for pos, rec in enumerate(records):
        yield encode_key(rec), pos
