import random
from bisect import bisect_right
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from cole.learned_model import Model, ModelBuilder, ModelCoverageError, build_models


def feasible(pts, eps):
    """Exact test: does some line pass within ``eps`` of every point?"""
    lo, hi = None, None
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            (xi, yi), (xj, yj) = pts[i], pts[j]
            dx = xj - xi
            up = Fraction(yj - yi + 2 * eps, dx)
            down = Fraction(yj - yi - 2 * eps, dx)
            hi = up if hi is None else min(hi, up)
            lo = down if lo is None else max(lo, down)
    return lo is None or lo <= hi


def greedy_starts(pts, eps):
    """Segment start indices of the greedy maximal segmentation."""
    starts, i = [], 0
    while i < len(pts):
        starts.append(i)
        j = i + 1
        while j < len(pts) and feasible(pts[i:j + 1], eps):
            j += 1
        i = j
    return starts


def covering(models, key):
    i = bisect_right([m.k_min for m in models], key) - 1
    return models[i]


def check_bound(models, pts, eps):
    for k, p in pts:
        assert covering(models, k).error(k, p) <= eps


key_sets = st.lists(st.integers(0, 2**320 - 1), min_size=1, max_size=120, unique=True).map(sorted)


@given(key_sets, st.integers(1, 8))
@settings(max_examples=150, deadline=None)
def test_error_bound_holds(keys, eps):
    pts = [(k, i) for i, k in enumerate(keys)]
    models = list(build_models(pts, eps))
    assert models[0].k_min == keys[0]
    check_bound(models, pts, eps)


@given(st.lists(st.integers(0, 10**6), min_size=2, max_size=40, unique=True).map(sorted), st.integers(1, 4))
@settings(max_examples=200, deadline=None)
def test_segmentation_matches_exact_greedy(keys, eps):
    pts = [(k, i) for i, k in enumerate(keys)]
    b = ModelBuilder(eps)
    models = [m for k, p in pts for m in b.add(k, p)] + b.finish()
    if b.precision_splits:
        return  # a float slope could not represent the only feasible line
    assert [m.k_min for m in models] == [keys[i] for i in greedy_starts(pts, eps)]


def test_linear_keys_need_one_model():
    pts = [(1000 + 7 * i, i) for i in range(5000)]
    models = list(build_models(pts, 2))
    assert len(models) == 1
    check_bound(models, pts, 2)


def test_clustered_keys_split():
    rng = random.Random(5)
    keys = sorted(set([rng.randrange(2**64) for _ in range(300)] + [2**200 + rng.randrange(2**64) for _ in range(300)]))
    pts = [(k, i) for i, k in enumerate(keys)]
    models = list(build_models(pts, 23))
    assert len(models) >= 2
    check_bound(models, pts, 23)


def test_predictions_are_monotone_and_clamped():
    rng = random.Random(9)
    keys = sorted(rng.sample(range(10**9), 2000))
    pts = [(k, i) for i, k in enumerate(keys)]
    for m in build_models(pts, 5):
        assert m.sl >= 0
        assert m.predict_floor(m.k_min) >= 0
        assert m.predict_floor(10**12) <= m.p_max
        with pytest.raises(ModelCoverageError):
            m.predict(m.k_min - 1)


def test_rejects_unsorted_keys():
    b = ModelBuilder(3)
    b.add(5, 0)
    with pytest.raises(ValueError):
        b.add(5, 1)


@given(st.floats(0, 1e9, allow_nan=False), st.integers(-2**100, 2**100), st.integers(0, 2**320 - 1),
       st.integers(0, 2**63))
def test_model_bytes_round_trip(sl, ic, k, p):
    m = Model(sl, ic, k, p)
    raw = m.to_bytes()
    assert len(raw) == 88
    assert Model.from_bytes(raw) == m
