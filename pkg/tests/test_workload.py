import filecmp

import numpy as np
import pytest

from idms.delayspace import MatrixFormatError, PeriodIndex
from idms.metrics import link_errors
from idms.workload import (DIURNAL_SHAPE, LCN_HOUR, MCN_HOUR, ConfigError, WorkloadConfig,
                           generate, has_tiv, load_king, load_workload, parse_config,
                           save_workload)

SMALL = WorkloadConfig(n_ases=12, hosts_min=3, hosts_max=5, days=2, seed=3)


@pytest.fixture(scope="module")
def small():
    return generate(SMALL)


@pytest.mark.parametrize("key,value", [("n_ases", 2), ("n_isp_groups", 1), ("intra_bound_ms", 9.0),
                                       ("hosts_max", 1), ("congested_fraction", 1.5),
                                       ("peak_factor_min", 0.5), ("noise_bound_ms", -1.0)])
def test_invalid_config_names_key(key, value):
    with pytest.raises(ConfigError) as exc:
        generate(WorkloadConfig(**{key: value}))
    assert exc.value.key == key
    assert key in str(exc.value)


def test_parse_config():
    cfg = parse_config(WorkloadConfig, {"n_ases": "7", "asymmetric": "true", "noise_bound_ms": "2.5"})
    assert (cfg.n_ases, cfg.asymmetric, cfg.noise_bound_ms) == (7, True, 2.5)
    with pytest.raises(ConfigError, match="bogus"):
        parse_config(WorkloadConfig, {"bogus": "1"})
    with pytest.raises(ConfigError, match="n_ases"):
        parse_config(WorkloadConfig, {"n_ases": "many"})


def test_shape_has_trough_and_peak():
    assert DIURNAL_SHAPE.argmin() == LCN_HOUR
    assert DIURNAL_SHAPE.argmax() == MCN_HOUR
    assert DIURNAL_SHAPE.min() == 0.0 and DIURNAL_SHAPE.max() == 1.0


def test_generated_series_shape(small):
    assert len(small.series) == 24 * SMALL.days
    assert small.series.labels == small.truth.labels
    assert len(set(small.series.labels)) == SMALL.n_ases
    assert has_tiv(small.truth.matrix_at(0, LCN_HOUR))


def test_symmetric_by_default(small):
    r = small.truth.rtt
    assert np.array_equal(r, np.swapaxes(r, 2, 3))


def test_asymmetric_option():
    w = generate(WorkloadConfig(n_ases=8, hosts_min=1, hosts_max=1, days=1, asymmetric=True))
    assert not np.array_equal(w.truth.rtt, np.swapaxes(w.truth.rtt, 2, 3))


def test_intra_offsets_within_bound(small):
    for h in small.hosts:
        assert 0 < 2 * h.intra_offset < SMALL.intra_bound_ms
    cross = small.truth.rtt[:, :, ~np.eye(SMALL.n_ases, dtype=bool)]
    assert cross.min() >= SMALL.base_min_ms


def test_uncongested_links_are_flat(small):
    t = small.truth
    flat = ~t.congested
    assert np.all(t.factors[flat] == 1.0)
    assert np.all(t.factors[t.congested][:, LCN_HOUR] == 1.0)
    assert np.all(t.factors[t.congested][:, MCN_HOUR] > 1.0)


def test_day_to_day_noise_bounded(small):
    day1 = small.series.at_hour(LCN_HOUR, [0])[0]
    day2 = small.series.at_hour(LCN_HOUR, [1])[0]
    ae = link_errors(day1, day2).ae
    assert np.mean(ae < SMALL.noise_bound_ms) == 1.0


def test_same_seed_same_files(tmp_path):
    a = save_workload(generate(SMALL), tmp_path / "a")
    b = save_workload(generate(SMALL), tmp_path / "b")
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    _, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert mismatch == [] and errors == []
    assert sum(n.endswith(".dm") for n in names) == 24 * SMALL.days


def test_save_load_round_trip(tmp_path, small):
    save_workload(small, tmp_path)
    back = load_workload(tmp_path)
    assert back.config == SMALL
    assert back.hosts == small.hosts
    assert back.bootstrap_ip == small.bootstrap_ip
    assert back.congested_pairs == small.congested_pairs
    assert all(x == y for x, y in zip(back.series, small.series))
    assert np.array_equal(back.truth.rtt, small.truth.rtt)
    assert back.mapping.prefixes() == small.mapping.prefixes()


def test_load_missing_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_workload(tmp_path)


def test_load_king(tmp_path):
    p = tmp_path / "king.txt"
    p.write_text("0 50000 -1\n50000 0 1500\n-1 1500 0\n")
    m = load_king(p)
    assert m.labels == (1, 2, 3)
    assert m.values[0, 1] == 50.0 and m.values[1, 2] == 1.5
    assert np.isnan(m.values[0, 2])
    p.write_text("0 1\n1 0 2\n")
    with pytest.raises(MatrixFormatError):
        load_king(p)


def test_period_lookup_matches_truth(small):
    m = small.series[30]
    assert m.period == PeriodIndex(1, 6)
    assert np.array_equal(m.values, small.truth.matrix_at(1, 6))
