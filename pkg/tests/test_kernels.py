"""The numba and numpy kernel paths must agree."""
import os
import subprocess
import sys

import numpy as np
import pytest

import oracles
from conftest import random_matrix
from idms import kernels
from idms.kernels import NUMBA_KERNELS as NB, NUMPY_KERNELS as NP


@pytest.mark.parametrize("margin", [0.0, 40.0])
def test_triple_counts_agree(rng, margin):
    for _ in range(5):
        ref = random_matrix(rng, 15, missing=0.1).values
        est = ref * rng.uniform(0.8, 1.2, size=ref.shape)
        a = NB["tiv_triple_counts"](ref, est, margin)
        b = NP["tiv_triple_counts"](ref, est, margin)
        assert tuple(map(int, a)) == tuple(map(int, b))
        assert int(a[0]) == len(oracles.tiv_triples(ref.tolist(), margin))


def test_edge_mask_agrees(rng):
    m = random_matrix(rng, 20, missing=0.1).values
    assert np.array_equal(NB["tiv_edge_mask"](m, 0.0), NP["tiv_edge_mask"](m, 0.0))


def test_triples_agree_and_sorted(rng):
    m = random_matrix(rng, 12).values
    a = NB["tiv_triples"](m, 0.0)
    b = NP["tiv_triples"](m, 0.0)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
    keys = list(zip(a[0].tolist(), a[1].tolist(), a[2].tolist()))
    assert keys == sorted(keys)


def test_vivaldi_agrees(rng):
    m = random_matrix(rng, 10, symmetric=True).values
    nb = rng.integers(0, 9, size=(20, 10, 4))
    nb = nb + (nb >= np.arange(10)[None, :, None])
    pos = rng.normal(size=(10, 3)) * 20
    err = np.ones(10)
    p1, e1 = NB["vivaldi_relax"](m, nb, pos.copy(), err.copy(), 0.25, 0.25)
    p2, e2 = NP["vivaldi_relax"](m, nb, pos.copy(), err.copy(), 0.25, 0.25)
    assert np.allclose(p1, p2, atol=1e-9)
    assert np.allclose(e1, e2, atol=1e-12)


def test_hals_agrees_and_decreases(rng):
    n, d = 12, 3
    target = rng.uniform(1, 100, size=(n, n))
    weight = (rng.random((n, n)) < 0.6).astype(float)
    target = np.where(weight > 0, target, 0.0)
    out, inn = rng.random((n, d)), rng.random((n, d))
    o1, i1, o2, i2 = out.copy(), inn.copy(), out.copy(), inn.copy()
    before = kernels.weighted_sq_loss(target, weight, out, inn)
    NB["hals_sweep"](target, weight, o1, i1)
    NP["hals_sweep"](target, weight, o2, i2)
    assert np.allclose(o1, o2, atol=1e-9) and np.allclose(i1, i2, atol=1e-9)
    assert kernels.weighted_sq_loss(target, weight, o1, i1) <= before
    assert (o1 >= 0).all() and (i1 >= 0).all()


def test_env_flag_selects_numpy():
    code = "import idms._accel as a, idms.kernels as k; print(a.USE_NUMBA, k.hals_sweep is k._hals_sweep_np)"
    env = dict(os.environ, IDMS_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "True"]
