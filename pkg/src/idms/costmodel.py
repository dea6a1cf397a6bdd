"""Closed-form message, byte and storage costs.

All formulas are evaluated in exact integer arithmetic where the inputs
allow it.  ``m`` is bytes per event, ``b`` bytes of per-message overhead,
``z`` the size of one UDM file and ``q`` the fraction of it that changes
between hours.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from fractions import Fraction

from .delayspace import header_bytes, payload_bytes

FIGURE_LS = (50, 100, 200, 555)
FIGURE_N = 10_000
PHOENIX_ROUNDS = 6
PHOENIX_MSGS_PER_ROUND = 64
MATRICES_PER_DAY = 24

# rough reference estimates for L = 555, kept only to annotate reports
ESTIMATE_MATRIX_BYTES = 500_000
ESTIMATE_DAY_BYTES = 12_000_000


@dataclass(frozen=True)
class CostParams:
    L: int = 555
    N: int = FIGURE_N
    p: float = 0.01
    m: int = 20
    b: int = 40
    z: int | None = None
    q: float = 0.1

    def __post_init__(self):
        if self.L < 2:
            raise ValueError("L must be >= 2")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        if not 0 <= self.q <= 1:
            raise ValueError("q must lie in [0, 1]")
        if self.m < 0 or self.b < 0:
            raise ValueError("m and b must be >= 0")

    @property
    def file_bytes(self) -> int:
        return 2 * self.L * self.L if self.z is None else self.z

    @property
    def supernodes(self):
        return _exact(self.N * Fraction(str(self.p)))


def _exact(x):
    """Fractions that happen to be integral come back as int."""
    if isinstance(x, Fraction) and x.denominator == 1:
        return int(x)
    return x if not isinstance(x, Fraction) else float(x)


def construction_messages(L: int) -> int:
    if L < 2:
        raise ValueError("L must be >= 2")
    return 2 * L * (L + 1)


def construction_bytes(L: int, m: int = 20, b: int = 40) -> int:
    if L < 2:
        raise ValueError("L must be >= 2")
    return 3 * L * (m + b) + 2 * L * (m + b) * (L - 1) + L * (b + m * (L - 1))


def broadcast_messages(N: int, p: float = 0.01):
    np_ = N * Fraction(str(p))
    if np_ < 1:
        raise ValueError("N * p must be >= 1")
    return _exact(2 * np_)


def broadcast_bytes(N: int, p: float = 0.01, m: int = 20, b: int = 40, z: int | None = None,
                    q: float = 0.1, L: int | None = None):
    if z is None:
        if L is None:
            raise ValueError("give z or L")
        z = 2 * L * L
    np_ = N * Fraction(str(p))
    if np_ < 1:
        raise ValueError("N * p must be >= 1")
    return _exact(np_ * (m + b) + np_ * z * Fraction(str(q)))


def phoenix_round_messages(N: int) -> int:
    if N < 1:
        raise ValueError("N must be >= 1")
    return PHOENIX_MSGS_PER_ROUND * N


def phoenix_messages(N: int, rounds: int = PHOENIX_ROUNDS) -> int:
    return rounds * phoenix_round_messages(N)


def phoenix_bytes(N: int, m: int = 20, b: int = 40, rounds: int = PHOENIX_ROUNDS) -> int:
    return phoenix_messages(N, rounds) * (m + b)


def matrix_bytes(L: int, header: bool = True) -> int:
    if L < 2:
        raise ValueError("L must be >= 2")
    return payload_bytes(L) + (header_bytes(L) if header else 0)


def storage_bytes(L: int, matrices_per_day: int = MATRICES_PER_DAY, header: bool = True) -> int:
    return matrices_per_day * matrix_bytes(L, header)


@dataclass(frozen=True)
class CostRow:
    L: int
    N: int
    construction_msgs: int
    construction_bytes: int
    broadcast_msgs: object
    broadcast_bytes: object
    phoenix_msgs: int
    phoenix_bytes: int

    @property
    def idms_msgs(self):
        return self.construction_msgs + self.broadcast_msgs

    @property
    def idms_bytes(self):
        return self.construction_bytes + self.broadcast_bytes


def cost_row(params: CostParams) -> CostRow:
    P = params
    return CostRow(P.L, P.N, construction_messages(P.L), construction_bytes(P.L, P.m, P.b),
                   broadcast_messages(P.N, P.p),
                   broadcast_bytes(P.N, P.p, P.m, P.b, P.file_bytes, P.q),
                   phoenix_messages(P.N), phoenix_bytes(P.N, P.m, P.b))


def figure_table(Ls=FIGURE_LS, N: int = FIGURE_N, base: CostParams = CostParams()) -> list:
    return [cost_row(replace(base, L=L, N=N)) for L in Ls]


def cost_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["L", "N", "idms_msgs", "idms_bytes", "phoenix_msgs", "phoenix_bytes"])
    for r in rows:
        w.writerow([r.L, r.N, r.idms_msgs, r.idms_bytes, r.phoenix_msgs, r.phoenix_bytes])
    return buf.getvalue()


def storage_note(L: int = 555) -> str:
    one = payload_bytes(L)
    day = MATRICES_PER_DAY * one
    return "\n".join([
        f"storage for L = {L}",
        f"  one matrix payload: {one} bytes (+{header_bytes(L)} header = {matrix_bytes(L)})",
        f"  one day payload ({MATRICES_PER_DAY} matrices): {day} bytes "
        f"(with headers {storage_bytes(L)})",
        f"  reference estimate ~500 KB per matrix: computed/estimate = {one / ESTIMATE_MATRIX_BYTES:.4f}",
        f"  reference estimate ~12 MB per day: computed/estimate = {day / ESTIMATE_DAY_BYTES:.4f}",
        "  the estimates are approximate; computed values are not adjusted to match them",
    ]) + "\n"
