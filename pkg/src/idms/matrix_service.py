"""UDM/PDM lifecycle: median PDMs, incremental deltas and distance lookup."""
from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .delayspace import (DelayMatrix, MatrixSeries, PeriodIndex, UnknownAsnError,
                         dequantize_ms, quantize_ms)

DELTA_MAGIC = b"IDD1"
DEFAULT_DELTA_THRESHOLD_MS = 20.0
DEFAULT_C_INTRA_MS = 10.0
DEFAULT_PDM_DAYS = 3


class MissingDistanceError(LookupError):
    """The matrix has no measurement for the requested AS pair."""


@dataclass(frozen=True, eq=False)
class Pdm:
    """Previous-days delay matrix for one hour of the day."""

    matrix: DelayMatrix
    hour: int
    source_days: tuple

    @property
    def stamp(self) -> tuple:
        # newest source day first decides recency; hour breaks ties
        return (max(self.source_days), self.hour)


def median_rule(values) -> float:
    """Median with the two-middle average for even counts; NaN if all missing."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    v = v[~np.isnan(v)]
    if v.size == 0:
        return math.nan
    k = v.size
    return float(v[k // 2]) if k % 2 else float((v[k // 2 - 1] + v[k // 2]) / 2.0)


def build_pdm(series, hour: int, days: Iterable[int] | None = None) -> Pdm:
    """Element-wise median over all matrices of ``series`` at ``hour``.

    An entry is missing when more than half of the sources miss it; otherwise
    it is the median of the sources that have it.
    """
    if isinstance(series, MatrixSeries):
        sources = series.at_hour(hour, days)
    else:
        wanted = None if days is None else set(days)
        sources = [m for m in series
                   if m.period is not None and m.period.hour == hour
                   and (wanted is None or m.period.day in wanted)]
    if not sources:
        raise ValueError(f"no source matrices for hour {hour}")
    labels = sources[0].labels
    if any(m.labels != labels for m in sources):
        raise ValueError("source matrices have different label sets")
    stack = np.stack([m.values for m in sources])
    k = stack.shape[0]
    missing = np.isnan(stack).sum(axis=0)
    # sorted NaN sink to the end, so the first k - missing slots hold the data
    ordered = np.sort(stack, axis=0)
    present = k - missing
    med = np.full(stack.shape[1:], np.nan)
    for cnt in np.unique(present):
        if cnt == 0:
            continue
        sel = present == cnt
        col = ordered[:, sel]
        if cnt % 2:
            med[sel] = col[cnt // 2]
        else:
            med[sel] = (col[cnt // 2 - 1] + col[cnt // 2]) / 2.0
    med[2 * missing > k] = np.nan
    np.fill_diagonal(med, 0.0)
    source_days = tuple(sorted(m.period.day for m in sources))
    period = PeriodIndex(source_days[-1] + 1, hour)
    return Pdm(DelayMatrix(med, labels, period), hour, source_days)


# --------------------------------------------------------------------------
# deltas
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MatrixDelta:
    """Changed entries relative to the matrix stamped ``base_period``."""

    base_period: PeriodIndex | None
    updates: tuple  # ((row_asn, col_asn, value_ms), ...) ; NaN value = now missing
    new_period: PeriodIndex | None = None

    def __len__(self):
        return len(self.updates)


def delta(old: DelayMatrix, new: DelayMatrix, threshold: float = DEFAULT_DELTA_THRESHOLD_MS) -> MatrixDelta:
    """Entries where |new - old| > threshold or the missing status flips."""
    if old.labels != new.labels:
        raise ValueError("delta needs matrices on the same label set")
    a, b = old.values, new.values
    na, nb = np.isnan(a), np.isnan(b)
    with np.errstate(invalid="ignore"):
        changed = (na != nb) | (~na & ~nb & (np.abs(b - a) > threshold))
    rows, cols = np.nonzero(changed)
    labels = old.labels
    updates = tuple((labels[i], labels[j], float(b[i, j])) for i, j in zip(rows, cols))
    return MatrixDelta(old.period, updates, new.period)


def apply_delta(old: DelayMatrix, d: MatrixDelta) -> DelayMatrix:
    values = np.array(old.values)
    for row, col, v in d.updates:
        values[old.index(row), old.index(col)] = v
    return DelayMatrix(values, old.labels, d.new_period if d.new_period is not None else old.period)


def delta_to_bytes(d: MatrixDelta) -> bytes:
    base = d.base_period or PeriodIndex(0, 0)
    if base.day > 0xFFFF:
        raise ValueError("day does not fit the u16 delta header")
    out = [DELTA_MAGIC, struct.pack("<HBI", base.day, base.hour, len(d.updates))]
    values = quantize_ms([v for _, _, v in d.updates])
    for (row, col, _), q in zip(d.updates, values):
        out.append(struct.pack("<IIH", row, col, int(q)))
    return b"".join(out)


def delta_from_bytes(data: bytes) -> MatrixDelta:
    if data[:4] != DELTA_MAGIC:
        raise ValueError("bad delta magic")
    day, hour, count = struct.unpack_from("<HBI", data, 4)
    off = 4 + struct.calcsize("<HBI")
    if len(data) != off + 10 * count:
        raise ValueError(f"expected {off + 10 * count} bytes, got {len(data)}")
    rows = []
    for k in range(count):
        row, col, q = struct.unpack_from("<IIH", data, off + 10 * k)
        rows.append((row, col, float(dequantize_ms([q])[0])))
    return MatrixDelta(PeriodIndex(day, hour), tuple(rows))


def delta_wire_size(count: int) -> int:
    return 4 + struct.calcsize("<HBI") + 10 * count


# --------------------------------------------------------------------------
# host distance estimation
# --------------------------------------------------------------------------

def estimate_distance(i, j, m: DelayMatrix, c_intra: float = DEFAULT_C_INTRA_MS) -> float:
    """Estimated RTT between hosts ``i`` and ``j`` (anything with ``.asn``)."""
    if i == j:
        return 0.0
    if i.asn == j.asn:
        if i.asn not in m:
            raise UnknownAsnError(i.asn)
        return float(c_intra)
    v = m.values[m.index(i.asn), m.index(j.asn)]
    if math.isnan(v):
        raise MissingDistanceError(f"no measurement between AS{i.asn} and AS{j.asn}")
    return float(v)


class MatrixService:
    """Holds the current UDM and PDMs for one node.

    Readers always get a complete, immutable matrix; a rollover swaps the
    reference under a lock, so a half-applied delta is never visible.
    """

    def __init__(self, c_intra: float = DEFAULT_C_INTRA_MS):
        self.c_intra = c_intra
        self._lock = threading.Lock()
        self._udm: DelayMatrix | None = None
        self._pdms: dict[int, Pdm] = {}

    @property
    def udm(self) -> DelayMatrix | None:
        return self._udm

    def pdm(self, hour: int) -> Pdm | None:
        return self._pdms.get(hour)

    def rollover(self, udm: DelayMatrix) -> None:
        with self._lock:
            self._udm = udm

    def apply(self, d: MatrixDelta) -> DelayMatrix:
        with self._lock:
            if self._udm is None:
                raise ValueError("no UDM to apply a delta to")
            self._udm = apply_delta(self._udm, d)
            return self._udm

    def store_pdm(self, pdm: Pdm) -> bool:
        """Keep ``pdm`` if it is newer than the stored one for its hour."""
        with self._lock:
            cur = self._pdms.get(pdm.hour)
            if cur is not None and cur.stamp >= pdm.stamp:
                return False
            self._pdms[pdm.hour] = pdm
            return True

    def estimate(self, i, j, hour: int | None = None) -> float:
        m = self._udm
        if hour is not None:
            p = self._pdms.get(hour)
            m = p.matrix if p is not None else None
        if m is None:
            raise LookupError("no matrix available")
        return estimate_distance(i, j, m, self.c_intra)
