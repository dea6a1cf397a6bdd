"""Network-coordinate baselines fitted on an AS-level delay matrix.

``euclid_fit`` embeds nodes in R^d with a spring relaxation.  ``mf_fit``
learns nonnegative outgoing/incoming vectors whose dot product predicts the
RTT, each node seeing only a random set of reference nodes.  The reference
weighting is a simple stand-in for Phoenix's: after an unweighted pass, a
reference r gets weight ``1 / (1 + median RE of r's own entries)`` and the
fit is redone from that starting point.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .delayspace import DelayMatrix, UnknownAsnError
from .kernels import hals_sweep, vivaldi_relax, weighted_sq_loss
from .metrics import MetricSummary, link_errors

DEFAULT_DIMS = 10
DEFAULT_REFS = 32
DEFAULT_ROUNDS = 100
DEFAULT_TOL = 1e-6
EUCLID_DIMS = 5
EUCLID_ROUNDS = 400
EUCLID_NEIGHBORS = 16
VIVALDI_CC = 0.25
VIVALDI_CE = 0.25


@dataclass(frozen=True)
class EuclideanCoord:
    position: tuple
    error: float


@dataclass(frozen=True)
class FactorCoord:
    out_vec: tuple
    in_vec: tuple


class _Model:
    kind = ""
    labels: tuple

    def _idx(self, asn) -> int:
        try:
            return self._index[asn]
        except KeyError:
            raise UnknownAsnError(asn) from None

    def predict(self, i, j) -> float:
        a, b = self._idx(i), self._idx(j)
        if a == b:
            return 0.0
        return float(self._predict(a, b))

    def matrix(self) -> DelayMatrix:
        return DelayMatrix(self.prediction(), self.labels)

    def summary(self, reference: DelayMatrix) -> MetricSummary:
        return link_errors(reference, self.prediction()).summary()

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["asn", "kind", "components..."])
        for asn, row in zip(self.labels, self._rows()):
            for kind, comps in row:
                w.writerow([asn, kind] + [repr(float(c)) for c in comps])
        return buf.getvalue()


@dataclass(eq=False)
class EuclideanModel(_Model):
    labels: tuple
    positions: np.ndarray
    errors: np.ndarray
    kind = "euclid"

    def __post_init__(self):
        self._index = {a: i for i, a in enumerate(self.labels)}

    def coords(self) -> dict:
        return {a: EuclideanCoord(tuple(self.positions[i]), float(self.errors[i]))
                for a, i in self._index.items()}

    def _predict(self, a, b):
        return np.linalg.norm(self.positions[a] - self.positions[b])

    def prediction(self) -> np.ndarray:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        out = np.sqrt((diff * diff).sum(axis=2))
        np.fill_diagonal(out, 0.0)
        return out

    def _rows(self):
        for i in range(len(self.labels)):
            yield [("pos", self.positions[i]), ("err", [self.errors[i]])]


@dataclass(eq=False)
class FactorModel(_Model):
    labels: tuple
    out_vecs: np.ndarray
    in_vecs: np.ndarray
    refs: np.ndarray = None
    loss_history: list = field(default_factory=list)
    kind = "mf"

    def __post_init__(self):
        self._index = {a: i for i, a in enumerate(self.labels)}

    def coords(self) -> dict:
        return {a: FactorCoord(tuple(self.out_vecs[i]), tuple(self.in_vecs[i]))
                for a, i in self._index.items()}

    def _predict(self, a, b):
        return self.out_vecs[a] @ self.in_vecs[b]

    def prediction(self) -> np.ndarray:
        out = self.out_vecs @ self.in_vecs.T
        np.fill_diagonal(out, 0.0)
        return out

    def _rows(self):
        for i in range(len(self.labels)):
            yield [("out", self.out_vecs[i]), ("in", self.in_vecs[i])]


def predict(model: _Model, i, j) -> float:
    return model.predict(i, j)


def _values(m) -> tuple:
    if isinstance(m, DelayMatrix):
        return np.array(m.values), m.labels
    v = np.array(m, dtype=np.float64)
    return v, tuple(range(v.shape[0]))


# --------------------------------------------------------------------------
# Euclidean
# --------------------------------------------------------------------------

def _sample_neighbors(rng, rounds, n, k) -> np.ndarray:
    """``k`` distinct non-self neighbours per node per round."""
    out = np.empty((rounds, n, k), dtype=np.int64)
    for r in range(rounds):
        keys = rng.random((n, n - 1))
        pick = np.argsort(keys, axis=1)[:, :k]
        # indices 0..n-2 skip over self
        out[r] = pick + (pick >= np.arange(n)[:, None])
    return out


def euclid_fit(m, d: int = EUCLID_DIMS, rounds: int = EUCLID_ROUNDS, seed: int = 0,
               neighbors: int = EUCLID_NEIGHBORS) -> EuclideanModel:
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    values, labels = _values(m)
    n = values.shape[0]
    rng = np.random.default_rng(seed)
    k = min(neighbors, n - 1)
    scale = np.nanmean(values[~np.eye(n, dtype=bool)]) if n > 1 else 1.0
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    pos = rng.uniform(-0.5, 0.5, size=(n, d)) * scale
    err = np.ones(n)
    nb = _sample_neighbors(rng, rounds, n, k)
    pos, err = vivaldi_relax(values, nb, pos, err, VIVALDI_CC, VIVALDI_CE)
    return EuclideanModel(labels, np.asarray(pos), np.asarray(err))


# --------------------------------------------------------------------------
# matrix factorization
# --------------------------------------------------------------------------

def _reference_mask(rng, n, n_refs) -> tuple:
    refs = np.empty((n, n_refs), dtype=np.int64)
    for i in range(n):
        others = np.delete(np.arange(n), i)
        refs[i] = np.sort(rng.choice(others, size=n_refs, replace=False))
    mask = np.zeros((n, n))
    rows = np.repeat(np.arange(n), n_refs)
    mask[rows, refs.ravel()] = 1.0
    mask[refs.ravel(), rows] = 1.0  # i also measures r -> i
    return refs, mask


def _run_hals(target, weight, out, inn, rounds, tol) -> list:
    hist = [weighted_sq_loss(target, weight, out, inn)]
    for _ in range(rounds):
        hals_sweep(target, weight, out, inn)
        hist.append(weighted_sq_loss(target, weight, out, inn))
        if abs(hist[-2] - hist[-1]) < tol * max(1.0, hist[-2]):
            break
    return hist


def reference_weights(values, pred, refs) -> np.ndarray:
    """Per-node weight 1 / (1 + median RE over the entries the node serves as a reference)."""
    n = values.shape[0]
    w = np.ones(n)
    served = [[] for _ in range(n)]
    for i in range(n):
        for r in refs[i]:
            served[r].append(i)
    for r in range(n):
        res = []
        for i in served[r]:
            for a, b in ((i, r), (r, i)):
                t = values[a, b]
                if np.isfinite(t) and t > 0:
                    res.append(abs(t - pred[a, b]) / t)
        if res:
            w[r] = 1.0 / (1.0 + float(np.median(res)))
    return w


def mf_fit(m, d: int = DEFAULT_DIMS, n_refs: int = DEFAULT_REFS, rounds: int = DEFAULT_ROUNDS,
           seed: int = 0, tol: float = DEFAULT_TOL, weighted: bool = True) -> FactorModel:
    if d < 1:
        raise ValueError("dimension must be >= 1")
    values, labels = _values(m)
    n = values.shape[0]
    if not 1 <= n_refs <= n - 1:
        raise ValueError(f"n_refs must lie in [1, {n - 1}]")
    rng = np.random.default_rng(seed)
    refs, mask = _reference_mask(rng, n, n_refs)
    present = np.isfinite(values)
    np.fill_diagonal(present, False)
    mask = mask * present
    target = np.where(mask > 0, values, 0.0)

    scale = math.sqrt(max(float(target[mask > 0].mean()) if mask.any() else 1.0, 1e-12) / d)
    out = rng.uniform(0.5, 1.5, size=(n, d)) * scale
    inn = rng.uniform(0.5, 1.5, size=(n, d)) * scale
    hist = _run_hals(target, mask, out, inn, rounds, tol)
    if weighted:
        w = reference_weights(values, out @ inn.T, refs)
        # entries (i, r) and (r, i) take the weight of the reference side
        wr = np.zeros((n, n))
        rows = np.repeat(np.arange(n), n_refs)
        wr[rows, refs.ravel()] = w[refs.ravel()]
        wr[refs.ravel(), rows] = np.maximum(wr[refs.ravel(), rows], w[refs.ravel()])
        weight = wr * present
        hist = _run_hals(target, weight, out, inn, rounds, tol)
    return FactorModel(labels, out, inn, refs, hist)
