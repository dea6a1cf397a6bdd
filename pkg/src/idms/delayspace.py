"""Delay matrices, measurement periods, ASN mapping tables and their file formats.

Text matrix format (whitespace separated)::

    n
    asn_1 ... asn_n
    v_11 ... v_1n        # milliseconds, -1 for missing
    ...

Binary matrix format (little-endian): ``IDM1`` magic, u16 n, n x u32 labels,
n*n x u16 entries row-major.  Entries are whole milliseconds; values above
65534 clamp and 65535 marks a missing entry.
"""
from __future__ import annotations

import ipaddress
import math
import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MISSING = float("nan")
BIN_MAGIC = b"IDM1"
U16_MISSING = 65535
U16_MAX_VALUE = 65534
MS_PER_HOUR = 3_600_000.0

_PERIOD_RE = re.compile(r"^period_(\d+)_(\d+)\.dm$")


class MatrixFormatError(ValueError):
    """Malformed matrix file or a matrix that breaks an invariant."""


class UnknownAsnError(KeyError):
    pass


class UnmappedAddressError(LookupError):
    pass


@dataclass(frozen=True, order=True)
class PeriodIndex:
    """One-hour measurement slot: ``day`` >= 0, ``hour`` in [0, 24)."""

    day: int
    hour: int

    def __post_init__(self):
        if self.day < 0 or not 0 <= self.hour < 24:
            raise ValueError(f"invalid period day={self.day} hour={self.hour}")

    @property
    def start_ms(self) -> float:
        return (self.day * 24 + self.hour) * MS_PER_HOUR

    @classmethod
    def at(cls, t_ms: float) -> "PeriodIndex":
        slot = int(t_ms // MS_PER_HOUR)
        return cls(slot // 24, slot % 24)

    def filename(self) -> str:
        return f"period_{self.day}_{self.hour}.dm"


def is_missing(x) -> bool:
    return x is None or (isinstance(x, float) and math.isnan(x))


@dataclass(frozen=True, eq=False)
class DelayMatrix:
    """Square RTT matrix (ms) among AS representatives.

    ``values`` uses NaN for missing entries.  Labels are unique ASNs sorted
    ascending; symmetry is not required.
    """

    values: np.ndarray
    labels: tuple
    period: PeriodIndex | None = None
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        labels = tuple(int(x) for x in self.labels)
        n = len(labels)
        if n < 2:
            raise MatrixFormatError("a delay matrix needs at least 2 ASes")
        if v.shape != (n, n):
            raise MatrixFormatError(f"shape {v.shape} does not match {n} labels")
        if len(set(labels)) != n:
            raise MatrixFormatError("duplicate ASN labels")
        if any(labels[i] >= labels[i + 1] for i in range(n - 1)):
            raise MatrixFormatError("labels must be sorted ascending")
        diag = np.diag(v)
        bad = np.nonzero(diag != 0.0)[0]
        if bad.size:
            i = int(bad[0])
            raise MatrixFormatError(f"nonzero diagonal at row {i}, column {i}: {diag[i]!r}")
        known = ~np.isnan(v)
        bad = np.argwhere(known & ~((v >= 0.0) & np.isfinite(v)))
        if bad.size:
            i, j = (int(x) for x in bad[0])
            raise MatrixFormatError(f"invalid entry at row {i}, column {j}: {v[i, j]!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_index", {a: i for i, a in enumerate(labels)})

    @classmethod
    def from_unsorted(cls, values, labels, period=None) -> "DelayMatrix":
        """Build from labels in any order, permuting rows/columns to sort them."""
        order = np.argsort(np.asarray(labels, dtype=np.int64), kind="stable")
        v = np.asarray(values, dtype=np.float64)[np.ix_(order, order)]
        return cls(v, tuple(int(labels[i]) for i in order), period)

    @property
    def n(self) -> int:
        return len(self.labels)

    def index(self, asn: int) -> int:
        try:
            return self._index[int(asn)]
        except KeyError:
            raise UnknownAsnError(asn) from None

    def __contains__(self, asn) -> bool:
        return int(asn) in self._index

    def with_period(self, period: PeriodIndex | None) -> "DelayMatrix":
        return DelayMatrix(self.values, self.labels, period)

    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    def same_labels(self, other: "DelayMatrix") -> bool:
        return self.labels == other.labels

    def equals(self, other: "DelayMatrix") -> bool:
        """Bit-exact value and label equality (NaN equal to NaN)."""
        return (self.labels == other.labels
                and np.array_equal(self.values, other.values, equal_nan=True))

    def __eq__(self, other):
        if not isinstance(other, DelayMatrix):
            return NotImplemented
        return self.equals(other) and self.period == other.period

    __hash__ = None


def lookup(m: DelayMatrix, a: int, b: int) -> float | None:
    """RTT from AS ``a`` to AS ``b``; ``None`` when the entry is missing."""
    i, j = m.index(a), m.index(b)
    if i == j:
        return 0.0
    v = float(m.values[i, j])
    return None if math.isnan(v) else v


# --------------------------------------------------------------------------
# text format
# --------------------------------------------------------------------------

def _fmt(v: float) -> str:
    if math.isnan(v):
        return "-1"
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def dumps_matrix(m: DelayMatrix) -> str:
    lines = [str(m.n), " ".join(str(a) for a in m.labels)]
    for row in m.values:
        lines.append(" ".join(_fmt(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def loads_matrix(text: str, period: PeriodIndex | None = None) -> DelayMatrix:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if len(rows) < 2:
        raise MatrixFormatError("missing header lines")
    try:
        n = int(rows[0][0])
        if len(rows[0]) != 1:
            raise ValueError
    except ValueError:
        raise MatrixFormatError(f"line 1: expected a single integer count, got {' '.join(rows[0])!r}") from None
    if n < 2:
        raise MatrixFormatError("a delay matrix needs at least 2 ASes")
    if len(rows[1]) != n:
        raise MatrixFormatError(f"line 2: expected {n} labels, got {len(rows[1])}")
    try:
        labels = [int(x) for x in rows[1]]
    except ValueError:
        raise MatrixFormatError("line 2: labels must be integers") from None
    body = rows[2:]
    if len(body) != n:
        raise MatrixFormatError(f"expected {n} value rows, got {len(body)}")
    values = np.empty((n, n))
    for i, row in enumerate(body):
        if len(row) != n:
            raise MatrixFormatError(f"row {i}: expected {n} values, got {len(row)}")
        for j, tok in enumerate(row):
            try:
                x = float(tok)
            except ValueError:
                raise MatrixFormatError(f"row {i}, column {j}: not a number: {tok!r}") from None
            if i != j and x == -1.0:
                x = MISSING
            values[i, j] = x
    return DelayMatrix(values, labels, period)


def load_matrix(path, period: PeriodIndex | None = None) -> DelayMatrix:
    path = Path(path)
    if period is None:
        match = _PERIOD_RE.match(path.name)
        if match:
            period = PeriodIndex(int(match.group(1)), int(match.group(2)))
    return loads_matrix(path.read_text(), period)


def save_matrix(m: DelayMatrix, path) -> None:
    Path(path).write_text(dumps_matrix(m))


# --------------------------------------------------------------------------
# binary format
# --------------------------------------------------------------------------

def quantize_ms(values) -> np.ndarray:
    """Round to whole ms as u16, clamping to 65534 and mapping NaN to 65535."""
    v = np.asarray(values, dtype=np.float64)
    out = np.full(v.shape, U16_MISSING, dtype=np.uint16)
    known = ~np.isnan(v)
    out[known] = np.clip(np.rint(v[known]), 0, U16_MAX_VALUE).astype(np.uint16)
    return out


def dequantize_ms(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.uint16)
    out = raw.astype(np.float64)
    out[raw == U16_MISSING] = MISSING
    return out


def header_bytes(n: int) -> int:
    return len(BIN_MAGIC) + 2 + 4 * n


def payload_bytes(n: int) -> int:
    return 2 * n * n


def to_bytes(m: DelayMatrix) -> bytes:
    if m.n > 0xFFFF:
        raise MatrixFormatError("binary format holds at most 65535 ASes")
    head = BIN_MAGIC + struct.pack("<H", m.n) + struct.pack(f"<{m.n}I", *m.labels)
    return head + quantize_ms(m.values).astype("<u2").tobytes()


def from_bytes(data: bytes, period: PeriodIndex | None = None) -> DelayMatrix:
    if data[:4] != BIN_MAGIC:
        raise MatrixFormatError("bad magic")
    (n,) = struct.unpack_from("<H", data, 4)
    want = header_bytes(n) + payload_bytes(n)
    if len(data) != want:
        raise MatrixFormatError(f"expected {want} bytes for n={n}, got {len(data)}")
    labels = struct.unpack_from(f"<{n}I", data, 6)
    raw = np.frombuffer(data, dtype="<u2", offset=header_bytes(n)).reshape(n, n)
    return DelayMatrix(dequantize_ms(raw), labels, period)


# --------------------------------------------------------------------------
# series
# --------------------------------------------------------------------------

class MatrixSeries(Sequence):
    """Delay matrices over strictly increasing periods, all on one label set."""

    def __init__(self, matrices: Iterable[DelayMatrix]):
        items = list(matrices)
        for m in items:
            if m.period is None:
                raise ValueError("series matrices need a period stamp")
        for prev, cur in zip(items, items[1:]):
            if not prev.period < cur.period:
                raise ValueError(f"periods not strictly increasing: {prev.period} then {cur.period}")
            if prev.labels != cur.labels:
                raise ValueError(f"label mismatch at {cur.period}")
        self._items = items

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)

    @property
    def labels(self) -> tuple:
        return self._items[0].labels if self._items else ()

    def at_hour(self, hour: int, days: Iterable[int] | None = None) -> list:
        wanted = None if days is None else set(days)
        return [m for m in self._items
                if m.period.hour == hour and (wanted is None or m.period.day in wanted)]

    def get(self, period: PeriodIndex) -> DelayMatrix:
        for m in self._items:
            if m.period == period:
                return m
        raise KeyError(period)


def save_series(series: MatrixSeries, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for m in series:
        save_matrix(m, directory / m.period.filename())


def load_series(directory) -> MatrixSeries:
    found = []
    for name in os.listdir(directory):
        match = _PERIOD_RE.match(name)
        if match:
            period = PeriodIndex(int(match.group(1)), int(match.group(2)))
            found.append((period, name))
    if not found:
        raise FileNotFoundError(f"no period_<day>_<hour>.dm files in {directory}")
    found.sort()
    return MatrixSeries(load_matrix(Path(directory) / name, period) for period, name in found)


# --------------------------------------------------------------------------
# prefix -> ASN -> country tables
# --------------------------------------------------------------------------

class AsnMappingTable:
    """IPv4 prefix to ASN table (longest-prefix match) plus ASN to country number."""

    def __init__(self, prefixes: Iterable[tuple] = (), countries: dict | None = None):
        self._by_len: dict[int, dict[int, int]] = {}
        self.countries: dict[int, int] = dict(countries or {})
        for net, asn in prefixes:
            self.add_prefix(net, asn)

    def add_prefix(self, net, asn: int) -> None:
        net = ipaddress.IPv4Network(net, strict=False)
        bucket = self._by_len.setdefault(net.prefixlen, {})
        key = int(net.network_address)
        if key in bucket and bucket[key] != asn:
            raise ValueError(f"conflicting entries for {net}")
        bucket[key] = int(asn)

    def prefixes(self) -> list:
        out = []
        for plen, bucket in self._by_len.items():
            for key, asn in bucket.items():
                out.append((ipaddress.IPv4Network((key, plen)), asn))
        out.sort(key=lambda e: (int(e[0].network_address), e[0].prefixlen))
        return out

    def asn_of(self, ip) -> int:
        addr = int(ipaddress.IPv4Address(ip))
        for plen in sorted(self._by_len, reverse=True):
            mask = (0xFFFFFFFF << (32 - plen)) & 0xFFFFFFFF if plen else 0
            asn = self._by_len[plen].get(addr & mask)
            if asn is not None:
                return asn
        raise UnmappedAddressError(f"no prefix covers {ip}")

    def country_of(self, asn: int) -> int:
        try:
            return self.countries[int(asn)]
        except KeyError:
            raise UnknownAsnError(asn) from None

    def save(self, prefix_path, country_path) -> None:
        Path(prefix_path).write_text("".join(f"{net} {asn}\n" for net, asn in self.prefixes()))
        Path(country_path).write_text(
            "".join(f"{asn} {cn}\n" for asn, cn in sorted(self.countries.items())))

    @classmethod
    def load(cls, prefix_path, country_path) -> "AsnMappingTable":
        table = cls()
        for ln, line in enumerate(Path(prefix_path).read_text().splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                net, asn = line.split()
                table.add_prefix(net, int(asn))
            except ValueError as exc:
                raise MatrixFormatError(f"{prefix_path}:{ln}: {exc}") from None
        for ln, line in enumerate(Path(country_path).read_text().splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                asn, cn = (int(x) for x in line.split())
            except ValueError:
                raise MatrixFormatError(f"{country_path}:{ln}: expected 'ASN CN'") from None
            table.countries[asn] = cn
        return table


def asn_of(ip, table: AsnMappingTable) -> int:
    return table.asn_of(ip)
