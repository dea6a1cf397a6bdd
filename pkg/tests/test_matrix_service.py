import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from conftest import random_matrix
from idms.delayspace import (DelayMatrix, MatrixSeries, PeriodIndex, UnknownAsnError,
                             header_bytes, payload_bytes)
from idms.matrix_service import (MatrixService, MissingDistanceError, apply_delta,
                                 build_pdm, delta, delta_from_bytes, delta_to_bytes,
                                 delta_wire_size, estimate_distance, median_rule)
from idms.overlay import make_host_id


def _link_series(values, hour=5):
    mats = []
    for d, v in enumerate(values):
        a = np.array([[0.0, v], [v, 0.0]])
        mats.append(DelayMatrix(a, (1, 2), PeriodIndex(d, hour)))
    return MatrixSeries(mats)


def test_pdm_three_sources():
    pdm = build_pdm(_link_series([51, 55, 63]), 5)
    assert pdm.matrix.values[0, 1] == 55.0
    assert pdm.source_days == (0, 1, 2)
    assert pdm.matrix.period == PeriodIndex(3, 5)


def test_pdm_even_count():
    assert build_pdm(_link_series([50, 60]), 5).matrix.values[0, 1] == 55.0


def test_pdm_single_source_is_identity(rng):
    m = random_matrix(rng, 6, missing=0.1).with_period(PeriodIndex(0, 3))
    assert build_pdm(MatrixSeries([m]), 3).matrix.equals(m)


def test_pdm_needs_sources():
    with pytest.raises(ValueError):
        build_pdm(_link_series([50]), 6)


@pytest.mark.parametrize("vals,expect", [([np.nan, 50, 60], 55.0), ([np.nan, np.nan, 60], None),
                                         ([np.nan, 40], 40.0), ([np.nan, np.nan], None)])
def test_pdm_majority_missing_rule(vals, expect):
    got = build_pdm(_link_series(vals), 5).matrix.values[0, 1]
    if expect is None:
        assert math.isnan(got)
    else:
        assert got == expect


@settings(max_examples=30, deadline=None)
@given(k=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_pdm_matches_oracle(k, seed):
    rng = np.random.default_rng(seed)
    base = random_matrix(rng, 5)
    mats = []
    for d in range(k):
        v = np.array(base.values) + rng.uniform(-5, 5, size=(5, 5))
        v[rng.random((5, 5)) < 0.3] = np.nan
        np.fill_diagonal(v, 0.0)
        mats.append(DelayMatrix(np.clip(v, 0, None), base.labels, PeriodIndex(d, 0)))
    got = build_pdm(MatrixSeries(mats), 0).matrix.values
    for i in range(5):
        for j in range(5):
            if i == j:
                continue
            col = [m.values[i, j] for m in mats]
            want = oracles.pdm_entry(col)
            assert (math.isnan(want) and math.isnan(got[i, j])) or got[i, j] == want
            present = [v for v in col if not math.isnan(v)]
            if present:
                assert median_rule(col) == oracles.median(present)


def test_pdm_of_identical_matrices(rng):
    m = random_matrix(rng, 5)
    s = MatrixSeries(m.with_period(PeriodIndex(d, 2)) for d in range(4))
    assert np.array_equal(build_pdm(s, 2).matrix.values, m.values)


def test_pdm_monotone_in_added_larger_day(rng):
    m = random_matrix(rng, 5)
    days = [m.with_period(PeriodIndex(d, 0)) for d in range(3)]
    before = build_pdm(MatrixSeries(days), 0).matrix.values
    bigger = DelayMatrix(m.values + 100 * (1 - np.eye(5)), m.labels, PeriodIndex(3, 0))
    after = build_pdm(MatrixSeries(days + [bigger]), 0).matrix.values
    assert (after >= before).all()


def _pair(old, new):
    a = DelayMatrix(np.array([[0.0, old], [old, 0.0]]), (1, 2), PeriodIndex(0, 0))
    b = DelayMatrix(np.array([[0.0, new], [new, 0.0]]), (1, 2), PeriodIndex(0, 1))
    return a, b


def test_delta_examples(rng):
    m = random_matrix(rng, 4)
    assert len(delta(m, m, 20)) == 0
    a, b = _pair(50, 80)
    assert {(r, c) for r, c, _ in delta(a, b, 20).updates} == {(1, 2), (2, 1)}
    a, b = _pair(50, 60)
    assert len(delta(a, b, 20)) == 0


def test_delta_missing_flip_included():
    a, b = _pair(50, np.nan)
    d = delta(a, b, 1000)
    assert len(d) == 2 and all(math.isnan(v) for _, _, v in d.updates)


def test_delta_label_mismatch(rng):
    with pytest.raises(ValueError):
        delta(random_matrix(rng, 3), random_matrix(rng, 3), 1)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t=st.sampled_from([0.0, 5.0, 20.0]))
def test_apply_delta_oracle(seed, t):
    rng = np.random.default_rng(seed)
    old = random_matrix(rng, 8, missing=0.1)
    new_v = np.array(old.values) + rng.normal(0, 15, size=(8, 8))
    new_v[rng.random((8, 8)) < 0.1] = np.nan
    np.fill_diagonal(new_v, 0)
    new = DelayMatrix(np.abs(new_v), old.labels)
    got = apply_delta(old, delta(old, new, t)).values
    for i in range(8):
        for j in range(8):
            o, n_, g = old.values[i, j], new.values[i, j], got[i, j]
            if math.isnan(n_) or math.isnan(o):
                assert math.isnan(g) == math.isnan(n_)
            elif abs(n_ - o) > t:
                assert g == n_
            else:
                assert g == o
    if t == 0:
        assert apply_delta(old, delta(old, new, 0)).equals(new)


def test_delta_bytes_round_trip(rng):
    old = random_matrix(rng, 5, integer=True).with_period(PeriodIndex(3, 21))
    new = DelayMatrix(np.rint(old.values * 1.5), old.labels)
    d = delta(old, new, 0)
    raw = delta_to_bytes(d)
    assert len(raw) == delta_wire_size(len(d))
    back = delta_from_bytes(raw)
    assert back.base_period == PeriodIndex(3, 21)
    assert back.updates == d.updates


def test_delta_smaller_than_full_matrix_below_break_even():
    # the wire encodings give: 11 + 10 c <= 6 + 4 n + 2 n^2  <=>  c <= (2 n^2 + 4 n - 5) / 10
    for n in (2, 5, 20, 100, 555):
        full = header_bytes(n) + payload_bytes(n)
        limit = (2 * n * n + 4 * n - 5) // 10
        assert delta_wire_size(limit) <= full
        assert delta_wire_size(limit + 1) > full


def test_estimate_distance_rules():
    m = DelayMatrix(np.array([[0.0, 50.0], [50.0, 0.0]]), (10, 20))
    a1, a2 = make_host_id("1.0.0.1", 10, 1), make_host_id("1.0.0.2", 10, 1)
    b = make_host_id("2.0.0.1", 20, 1)
    assert estimate_distance(a1, a2, m, 10) == 10
    assert estimate_distance(a1, b, m) == 50
    assert estimate_distance(a1, a1, m, 10) == 0
    with pytest.raises(UnknownAsnError):
        estimate_distance(a1, make_host_id("3.0.0.1", 30, 1), m)
    gap = DelayMatrix(np.array([[0.0, np.nan], [50.0, 0.0]]), (10, 20))
    with pytest.raises(MissingDistanceError):
        estimate_distance(a1, b, gap)


def test_service_readers_see_whole_matrices(rng):
    svc = MatrixService()
    base = random_matrix(rng, 30, integer=True)
    svc.rollover(base)
    deltas = []
    cur = base
    for _ in range(20):
        nxt = DelayMatrix(cur.values + 100 * (1 - np.eye(30)), cur.labels)
        deltas.append(delta(cur, nxt, 0))
        cur = nxt
    seen = []

    def reader():
        for _ in range(200):
            m = svc.udm
            off = m.values[~np.eye(30, dtype=bool)] - base.values[~np.eye(30, dtype=bool)]
            seen.append(len(np.unique(np.round(off, 6))))

    t = threading.Thread(target=reader)
    t.start()
    for d in deltas:
        svc.apply(d)
    t.join()
    assert set(seen) == {1}
    assert svc.udm.equals(cur)


def test_service_keeps_newest_pdm():
    svc = MatrixService()
    p_old = build_pdm(_link_series([50, 60]), 5)
    p_new = build_pdm(_link_series([50, 60, 70]), 5)
    assert svc.store_pdm(p_new)
    assert not svc.store_pdm(p_old)
    assert svc.pdm(5) is p_new
