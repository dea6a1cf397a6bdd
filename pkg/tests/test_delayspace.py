import ipaddress
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from conftest import random_matrix
from idms.delayspace import (AsnMappingTable, DelayMatrix, MatrixFormatError, MatrixSeries,
                             PeriodIndex, UnknownAsnError, UnmappedAddressError, asn_of,
                             dumps_matrix, from_bytes, header_bytes, load_matrix, load_series,
                             loads_matrix, lookup, payload_bytes, save_matrix, save_series,
                             to_bytes)


def test_two_by_two_text():
    m = loads_matrix("2\n100 200\n0 50\n50 0\n")
    assert lookup(m, 100, 200) == 50.0
    assert m.labels == (100, 200)


def test_minus_one_is_missing():
    m = loads_matrix("2\n1 2\n0 -1\n7 0\n")
    assert lookup(m, 1, 2) is None
    assert math.isnan(m.values[0, 1])


def test_nonzero_diagonal_names_the_cell():
    with pytest.raises(MatrixFormatError, match="row 1"):
        loads_matrix("2\n1 2\n0 5\n5 5\n")


def test_negative_entry_rejected():
    with pytest.raises(MatrixFormatError):
        loads_matrix("2\n1 2\n0 -3\n5 0\n")


@pytest.mark.parametrize("text", ["", "x\n1 2\n", "2\n1\n0 1\n1 0\n", "2\n1 2\n0 1\n",
                                  "2\n1 2\n0 a\n1 0\n", "2\n1 2\n0 1 2\n1 0\n"])
def test_malformed_text(text):
    with pytest.raises(MatrixFormatError):
        loads_matrix(text)


def test_degenerate_sizes_rejected():
    with pytest.raises(MatrixFormatError):
        DelayMatrix(np.zeros((0, 0)), ())
    with pytest.raises(MatrixFormatError):
        DelayMatrix(np.zeros((1, 1)), (5,))


def test_unsorted_or_duplicate_labels_rejected():
    with pytest.raises(MatrixFormatError):
        DelayMatrix(np.zeros((2, 2)), (2, 1))
    with pytest.raises(MatrixFormatError):
        DelayMatrix(np.zeros((2, 2)), (1, 1))


def test_lookup_diagonal_and_unknown():
    m = loads_matrix("2\n100 200\n0 50\n50 0\n")
    assert lookup(m, 100, 100) == 0
    with pytest.raises(UnknownAsnError):
        lookup(m, 100, 999)


def test_values_are_read_only():
    m = loads_matrix("2\n1 2\n0 1\n1 0\n")
    with pytest.raises(ValueError):
        m.values[0, 1] = 3.0


def test_file_round_trip_and_period_from_name(tmp_path, rng):
    m = random_matrix(rng, 3, missing=0.2)
    path = tmp_path / "period_2_7.dm"
    save_matrix(m, path)
    back = load_matrix(path)
    assert back.equals(m)
    assert back.period == PeriodIndex(2, 7)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 64), seed=st.integers(0, 2**32 - 1), missing=st.sampled_from([0.0, 0.1]))
def test_text_round_trip_property(n, seed, missing):
    m = random_matrix(np.random.default_rng(seed), n, missing=missing)
    assert loads_matrix(dumps_matrix(m)).equals(m)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 20), seed=st.integers(0, 2**32 - 1))
def test_permutation_leaves_lookups_unchanged(n, seed):
    rng = np.random.default_rng(seed)
    m = random_matrix(rng, n, missing=0.1)
    perm = rng.permutation(n)
    shuffled = DelayMatrix.from_unsorted(m.values[np.ix_(perm, perm)], [m.labels[p] for p in perm])
    for a in m.labels:
        for b in m.labels:
            assert lookup(shuffled, a, b) == lookup(m, a, b)


def test_binary_matches_oracle(rng):
    m = random_matrix(rng, 7, missing=0.2)
    vals = np.array(m.values)
    vals[0, 1] = 70000.0
    vals[1, 2] = 2.5
    m = DelayMatrix(vals, m.labels)
    assert to_bytes(m) == oracles.matrix_bytes(m.labels, vals.tolist())


def test_binary_round_trip_integer_values(rng):
    m = random_matrix(rng, 9, missing=0.1, integer=True)
    assert from_bytes(to_bytes(m)).equals(m)


def test_binary_sizes():
    assert payload_bytes(555) == 616_050
    assert header_bytes(555) == 4 + 2 + 4 * 555
    m = DelayMatrix(np.zeros((555, 555)), tuple(range(1, 556)))
    assert len(to_bytes(m)) == 616_050 + header_bytes(555)


def test_binary_truncated():
    data = to_bytes(loads_matrix("2\n1 2\n0 1\n1 0\n"))
    with pytest.raises(MatrixFormatError):
        from_bytes(data[:-1])
    with pytest.raises(MatrixFormatError):
        from_bytes(b"XXXX" + data[4:])


def _series(rng, days=2, hours=(0, 5)):
    base = random_matrix(rng, 4)
    return MatrixSeries(base.with_period(PeriodIndex(d, h)) for d in range(days) for h in hours)


def test_series_round_trip(tmp_path, rng):
    s = _series(rng)
    save_series(s, tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == sorted(f"period_{d}_{h}.dm" for d in range(2) for h in (0, 5))
    back = load_series(tmp_path)
    assert len(back) == 4 and all(a == b for a, b in zip(back, s))


def test_series_needs_increasing_periods(rng):
    m = random_matrix(rng, 3)
    with pytest.raises(ValueError):
        MatrixSeries([m.with_period(PeriodIndex(1, 0)), m.with_period(PeriodIndex(0, 5))])


def test_series_needs_identical_labels(rng):
    a = random_matrix(rng, 3).with_period(PeriodIndex(0, 0))
    b = random_matrix(rng, 3).with_period(PeriodIndex(0, 1))
    with pytest.raises(ValueError):
        MatrixSeries([a, b])


def test_series_at_hour(rng):
    s = _series(rng, days=3)
    assert [m.period.day for m in s.at_hour(5)] == [0, 1, 2]
    assert [m.period.day for m in s.at_hour(5, [0, 2])] == [0, 2]


def test_period_ordering_and_time():
    assert PeriodIndex(0, 23) < PeriodIndex(1, 0)
    p = PeriodIndex(3, 5)
    assert PeriodIndex.at(p.start_ms) == p
    assert PeriodIndex.at(p.start_ms + 3_599_999.0) == p
    with pytest.raises(ValueError):
        PeriodIndex(0, 24)


def test_asn_of_examples():
    t = AsnMappingTable([("10.0.0.0/8", 4837)])
    assert asn_of("10.1.2.3", t) == 4837
    t.add_prefix("10.1.0.0/16", 4134)
    assert asn_of("10.1.2.3", t) == 4134
    with pytest.raises(UnmappedAddressError):
        asn_of("192.168.0.1", AsnMappingTable())


def test_longest_prefix_matches_brute_force(rng):
    entries = []
    for _ in range(60):
        plen = int(rng.integers(4, 29))
        addr = int(rng.integers(0, 2**32))
        net = ipaddress.IPv4Network((addr, plen), strict=False)
        entries.append((net, int(rng.integers(1, 65000))))
    table = AsnMappingTable()
    seen = {}
    for net, asn in entries:
        if net in seen:
            continue
        seen[net] = asn
        table.add_prefix(net, asn)
    for _ in range(500):
        ip = ipaddress.IPv4Address(int(rng.integers(0, 2**32)))
        covering = [(net.prefixlen, asn) for net, asn in seen.items() if ip in net]
        if covering:
            assert table.asn_of(ip) == max(covering)[1]
        else:
            with pytest.raises(UnmappedAddressError):
                table.asn_of(ip)


def test_mapping_file_round_trip(tmp_path):
    t = AsnMappingTable([("10.0.0.0/8", 4837), ("10.1.0.0/16", 4134)], {4837: 1, 4134: 1})
    t.save(tmp_path / "p.txt", tmp_path / "c.txt")
    assert (tmp_path / "p.txt").read_text() == "10.0.0.0/8 4837\n10.1.0.0/16 4134\n"
    back = AsnMappingTable.load(tmp_path / "p.txt", tmp_path / "c.txt")
    assert back.prefixes() == t.prefixes()
    assert back.country_of(4134) == 1
