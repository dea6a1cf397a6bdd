"""Prediction error and triangle-inequality-violation (TIV) metrics.

A link (a, b) is evaluated only when a != b, the reference value is present
and positive, and the estimate is present.  Percentiles use the nearest-rank
rule: the p-th percentile of k sorted values is element ceil(p*k) (1-based).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .delayspace import DelayMatrix

OTIV_MARGIN = 0.0
PTIV_MARGIN = 40.0


class UndefinedRatioError(ValueError):
    """The reference matrix has no TIVs, so TIV_V / TIV_F are undefined."""


def abs_error(measured: float, predicted: float) -> float:
    return abs(measured - predicted)


def rel_error(measured: float, predicted: float) -> float | None:
    """|measured - predicted| / measured, or ``None`` for a zero-RTT link."""
    if measured == 0:
        return None
    return abs(measured - predicted) / measured


def nearest_rank(sorted_values: Sequence[float], pct: int) -> float:
    """Nearest-rank percentile; ``pct`` is an integer percentage."""
    k = len(sorted_values)
    rank = max(1, -(-pct * k // 100))
    return sorted_values[rank - 1]


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    median: float
    npred: float
    count: int


def summarize(res) -> MetricSummary:
    vals = np.sort(np.asarray(res, dtype=np.float64).ravel())
    k = vals.size
    if k == 0:
        raise ValueError("cannot summarize an empty list of errors")
    if k % 2:
        median = float(vals[k // 2])
    else:
        median = float((vals[k // 2 - 1] + vals[k // 2]) / 2.0)
    return MetricSummary(mean=float(vals.mean()), median=median,
                         npred=float(nearest_rank(vals, 90)), count=int(k))


# --------------------------------------------------------------------------
# per-link errors
# --------------------------------------------------------------------------

@dataclass
class LinkErrors:
    """AE/RE over the included links of a reference/estimate pair."""

    src: np.ndarray
    dst: np.ndarray
    measured: np.ndarray
    predicted: np.ndarray
    ae: np.ndarray
    re: np.ndarray
    excluded_missing: int = 0
    excluded_zero: int = 0

    def select(self, keep: np.ndarray) -> "LinkErrors":
        return LinkErrors(self.src[keep], self.dst[keep], self.measured[keep],
                          self.predicted[keep], self.ae[keep], self.re[keep],
                          self.excluded_missing, self.excluded_zero)

    def short(self, cutoff_ms: float) -> "LinkErrors":
        return self.select(self.measured < cutoff_ms)

    def summary(self) -> MetricSummary:
        return summarize(self.re)

    def to_csv(self, labels: Sequence[int]) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["src_asn", "dst_asn", "measured_ms", "predicted_ms", "ae_ms", "re"])
        for i in range(self.src.size):
            w.writerow([labels[self.src[i]], labels[self.dst[i]],
                        repr(float(self.measured[i])), repr(float(self.predicted[i])),
                        repr(float(self.ae[i])), repr(float(self.re[i]))])
        return buf.getvalue()


def _as_array(estimate, reference: DelayMatrix) -> np.ndarray:
    if isinstance(estimate, DelayMatrix):
        if estimate.labels != reference.labels:
            raise ValueError("estimate and reference label sets differ")
        return estimate.values
    if callable(estimate):
        n = reference.n
        out = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                if i != j:
                    v = estimate(i, j)
                    out[i, j] = np.nan if v is None else v
        return out
    arr = np.asarray(estimate, dtype=np.float64)
    if arr.shape != reference.values.shape:
        raise ValueError(f"estimate shape {arr.shape} != reference {reference.values.shape}")
    return arr


def link_errors(reference: DelayMatrix, estimate) -> LinkErrors:
    """Per-link AE and RE of ``estimate`` against ``reference``.

    ``estimate`` may be a DelayMatrix on the same labels, an n x n array, or
    a callable ``f(i, j) -> ms`` over label indices.
    """
    ref = reference.values
    est = _as_array(estimate, reference)
    off = ~np.eye(reference.n, dtype=bool)
    present = off & ~np.isnan(ref) & ~np.isnan(est)
    zero = present & (ref == 0.0)
    keep = present & ~zero
    src, dst = np.nonzero(keep)
    measured = ref[src, dst]
    predicted = est[src, dst]
    ae = np.abs(measured - predicted)
    return LinkErrors(src, dst, measured, predicted, ae, ae / measured,
                      excluded_missing=int((off & ~present).sum()),
                      excluded_zero=int(zero.sum()))


# --------------------------------------------------------------------------
# TIVs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TivTriple:
    """Ordered triple witnessing L(a,b) > L(a,c) + L(c,b) + margin.

    Equality and hashing use (a, b, c) only, so sets of triples from
    different matrices intersect by position.
    """

    a: int
    b: int
    c: int
    gain: float = field(default=0.0, compare=False)


def tiv_set(m, margin: float = OTIV_MARGIN, mode: str = "triple") -> set:
    """All TIV triples (``mode='triple'``) or violating (a, b) edges (``mode='edge'``)."""
    v = m.values if isinstance(m, DelayMatrix) else np.asarray(m, dtype=np.float64)
    if mode == "triple":
        ia, ib, ic, gain = kernels.tiv_triples(v, float(margin))
        return {TivTriple(int(a), int(b), int(c), float(g))
                for a, b, c, g in zip(ia, ib, ic, gain)}
    if mode == "edge":
        a, b = np.nonzero(kernels.tiv_edge_mask(v, float(margin)))
        return {(int(x), int(y)) for x, y in zip(a, b)}
    raise ValueError(f"unknown TIV mode {mode!r}")


@dataclass(frozen=True)
class TivAccuracy:
    victory: float
    failure: float
    n_reference: int
    n_estimate: int
    n_hit: int

    @property
    def missed(self) -> float:
        return (self.n_reference - self.n_hit) / self.n_reference


def tiv_accuracy(reference: DelayMatrix, estimate, margin: float = OTIV_MARGIN,
                 mode: str = "triple") -> TivAccuracy:
    ref = reference.values
    est = np.array(_as_array(estimate, reference), dtype=np.float64)
    np.fill_diagonal(est, 0.0)
    if mode == "triple":
        n_ref, n_est, n_hit = kernels.tiv_triple_counts(ref, est, float(margin))
    elif mode == "edge":
        r = kernels.tiv_edge_mask(ref, float(margin))
        e = kernels.tiv_edge_mask(est, float(margin))
        n_ref, n_est, n_hit = int(r.sum()), int(e.sum()), int((r & e).sum())
    else:
        raise ValueError(f"unknown TIV mode {mode!r}")
    n_ref, n_est, n_hit = int(n_ref), int(n_est), int(n_hit)
    if n_ref == 0:
        raise UndefinedRatioError("reference matrix contains no TIVs")
    return TivAccuracy(victory=n_hit / n_ref, failure=(n_est - n_hit) / n_ref,
                       n_reference=n_ref, n_estimate=n_est, n_hit=n_hit)


def tiv_victory(reference: DelayMatrix, estimate, margin: float = OTIV_MARGIN,
                mode: str = "triple") -> float:
    return tiv_accuracy(reference, estimate, margin, mode).victory


def tiv_failure(reference: DelayMatrix, estimate, margin: float = OTIV_MARGIN,
                mode: str = "triple") -> float:
    return tiv_accuracy(reference, estimate, margin, mode).failure


# --------------------------------------------------------------------------
# same-period similarity
# --------------------------------------------------------------------------

DEFAULT_AE_THRESHOLDS = (5.0, 10.0, 20.0, 50.0, 100.0)
DEFAULT_RE_THRESHOLDS = (0.01, 0.05, 0.1, 0.3, 0.5, 1.0)


@dataclass
class SimilarityReport:
    ae: np.ndarray
    re: np.ndarray
    threshold_ms: float = 20.0

    @property
    def count(self) -> int:
        return int(self.ae.size)

    def fraction_ae_below(self, threshold_ms: float) -> float:
        return float((self.ae < threshold_ms).mean()) if self.ae.size else 1.0

    def fraction_re_below(self, threshold: float) -> float:
        return float((self.re < threshold).mean()) if self.re.size else 1.0

    @property
    def fraction_under(self) -> float:
        return self.fraction_ae_below(self.threshold_ms)

    def cdf_rows(self, ae_thresholds=DEFAULT_AE_THRESHOLDS, re_thresholds=DEFAULT_RE_THRESHOLDS):
        rows = [("ae_ms", t, self.fraction_ae_below(t)) for t in ae_thresholds]
        rows += [("re", t, self.fraction_re_below(t)) for t in re_thresholds]
        return rows


def matrix_similarity(a: DelayMatrix, b: DelayMatrix, threshold_ms: float = 20.0) -> SimilarityReport:
    """AE/RE of ``b`` against ``a`` over links present in both."""
    if a.labels != b.labels:
        raise ValueError("matrices have different label sets")
    errs = link_errors(a, b)
    return SimilarityReport(ae=errs.ae, re=errs.re, threshold_ms=threshold_ms)
