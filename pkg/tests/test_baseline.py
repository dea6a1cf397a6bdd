import numpy as np
import pytest

from conftest import random_matrix
from idms.baseline import (EuclideanCoord, FactorCoord, euclid_fit, mf_fit, predict,
                           reference_weights)
from idms.delayspace import DelayMatrix, UnknownAsnError
from idms.metrics import link_errors, tiv_set
from idms.workload import WorkloadConfig, generate

LINE = DelayMatrix(np.array([[0, 50, 100], [50, 0, 50], [100, 50, 0]], float), (1, 2, 3))
TIV = DelayMatrix(np.array([[0, 100, 30], [100, 0, 40], [30, 40, 0]], float), (1, 2, 3))


def test_collinear_embeds_well():
    model = euclid_fit(LINE, d=2, seed=0)
    assert model.summary(LINE).npred <= 0.05
    assert predict(model, 1, 1) == 0.0


def test_tiv_cannot_be_embedded():
    for seed in range(5):
        le = link_errors(TIV, euclid_fit(TIV, d=2, seed=seed).prediction())
        assert le.re.max() > 0.05


def test_euclid_has_no_tivs(rng):
    ref = random_matrix(rng, 15, symmetric=True)
    assert tiv_set(ref.values)
    pred = euclid_fit(ref, seed=1).prediction()
    assert tiv_set(pred) == set()


def test_bad_dims():
    with pytest.raises(ValueError):
        euclid_fit(LINE, d=0)
    with pytest.raises(ValueError):
        mf_fit(LINE, d=0, n_refs=2)
    with pytest.raises(ValueError):
        mf_fit(LINE, d=2, n_refs=3)


def test_unknown_asn():
    with pytest.raises(UnknownAsnError):
        euclid_fit(LINE, seed=0).predict(1, 9)


def test_mf_rank_one_recovered(rng):
    u, v = rng.uniform(1, 10, 20), rng.uniform(1, 10, 20)
    vals = np.outer(u, v)
    np.fill_diagonal(vals, 0.0)
    model = mf_fit(vals, d=1, n_refs=19, rounds=2000, tol=1e-14, weighted=False, seed=0)
    le = link_errors(DelayMatrix(vals, tuple(range(20))), model.prediction())
    assert le.re.max() < 1e-3


def test_mf_two_by_two_exact():
    m = DelayMatrix(np.array([[0.0, 30.0], [90.0, 0.0]]), (5, 6))
    model = mf_fit(m, d=2, n_refs=1, rounds=500, tol=1e-14)
    assert predict(model, 5, 6) == pytest.approx(30.0, rel=1e-6)
    assert predict(model, 6, 5) == pytest.approx(90.0, rel=1e-6)


def test_mf_predictions_nonnegative(rng):
    ref = random_matrix(rng, 30, missing=0.1)
    model = mf_fit(ref, d=4, n_refs=8, seed=2)
    assert (model.prediction() >= 0).all()
    assert (model.out_vecs >= 0).all() and (model.in_vecs >= 0).all()


def test_mf_can_represent_tivs():
    w = generate(WorkloadConfig(n_ases=40, hosts_min=1, hosts_max=1, days=1, seed=0))
    ref = w.series[5]
    pred = mf_fit(ref, d=10, n_refs=20, seed=0).prediction()
    assert len(tiv_set(pred)) > 0


def test_mf_loss_nonincreasing(rng):
    ref = random_matrix(rng, 25)
    hist = mf_fit(ref, d=3, n_refs=6, seed=4).loss_history
    assert all(b <= a * (1 + 1e-12) for a, b in zip(hist, hist[1:]))


def test_fits_deterministic(rng):
    ref = random_matrix(rng, 12)
    a, b = mf_fit(ref, d=3, n_refs=5, seed=9), mf_fit(ref, d=3, n_refs=5, seed=9)
    assert np.array_equal(a.prediction(), b.prediction())
    e1, e2 = euclid_fit(ref, seed=9), euclid_fit(ref, seed=9)
    assert np.array_equal(e1.positions, e2.positions)


def test_reference_weights_prefer_accurate_refs():
    vals = np.array([[0, 10, 10], [10, 0, 10], [10, 10, 0]], float)
    pred = vals.copy()
    pred[:, 2] = 20.0
    pred[2, :] = 20.0
    # node 1 is a reference for 0 (exact) and for 2 (off by 100 %)
    refs = np.array([[1], [0], [1]])
    w = reference_weights(vals, pred, refs)
    assert w[0] == 1.0 and w[2] == 1.0
    assert w[1] == pytest.approx(1 / 1.5)


def test_coordinates_and_csv(rng):
    ref = random_matrix(rng, 6)
    mf = mf_fit(ref, d=2, n_refs=3)
    eu = euclid_fit(ref, d=3)
    a = ref.labels[0]
    assert isinstance(mf.coords()[a], FactorCoord) and len(mf.coords()[a].out_vec) == 2
    assert isinstance(eu.coords()[a], EuclideanCoord) and len(eu.coords()[a].position) == 3
    lines = mf.to_csv().splitlines()
    assert lines[0] == "asn,kind,components..."
    assert len(lines) == 1 + 2 * 6
    assert lines[1].startswith(f"{a},out,")
