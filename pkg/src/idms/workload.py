"""Synthetic multi-day AS delay space and King-format loading.

ASes sit at random points of a unit square and belong to ISP groups.  Within
a group the base RTT is a metric (offset plus scaled distance); between
groups a per-group-pair peering penalty and a per-link jitter are added, so
a detour through a third group can beat the direct path.  A fraction of
inter-group links is congested and follows a diurnal factor curve with its
trough at 05:00 and peaks at 10-11 and 21:00.  Each (day, hour) matrix adds
uniform noise in [0, noise_bound].
"""
from __future__ import annotations

import dataclasses
import ipaddress
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .delayspace import (AsnMappingTable, DelayMatrix, MatrixFormatError, MatrixSeries,
                         PeriodIndex, load_series, save_series)
from .kernels import tiv_edge_mask
from .simnet import GroundTruth, Host

LCN_HOUR = 5
MCN_HOUR = 21

# diurnal congestion shape, 0 at the trough, 1 at the evening peak
_SHAPE_HOURS = [0, 3, 5, 7, 9, 10, 11, 13, 15, 17, 19, 21, 22, 24]
_SHAPE_VALUES = [0.35, 0.1, 0.0, 0.2, 0.6, 0.85, 0.85, 0.6, 0.55, 0.6, 0.8, 1.0, 0.8, 0.35]
DIURNAL_SHAPE = np.interp(np.arange(24), _SHAPE_HOURS, _SHAPE_VALUES)

META_NAME = "ground_truth.meta"
HOSTS_NAME = "hosts.csv"
PREFIX_NAME = "prefixes.txt"
COUNTRY_NAME = "asn_cn.txt"


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class WorkloadConfig:
    n_ases: int = 100
    hosts_min: int = 10
    hosts_max: int = 30
    n_isp_groups: int = 4
    congested_fraction: float = 0.3
    base_min_ms: float = 8.0
    base_scale_ms: float = 30.0
    group_penalty_max_ms: float = 50.0
    link_jitter_max_ms: float = 60.0
    peak_factor_min: float = 1.3
    peak_factor_max: float = 2.0
    intra_bound_ms: float = 6.0
    days: int = 4
    noise_bound_ms: float = 4.0
    asymmetric: bool = False
    country: int = 1
    seed: int = 0
    max_attempts: int = 50

    def validate(self) -> None:
        for key in ("n_ases", "hosts_min", "hosts_max", "n_isp_groups", "days", "max_attempts"):
            if getattr(self, key) < 1:
                raise ConfigError(key, "must be >= 1")
        if self.n_ases < 3:
            raise ConfigError("n_ases", "at least 3 ASes are needed to form a TIV")
        if self.n_ases > 65535:
            raise ConfigError("n_ases", "at most 65535 ASes")
        if self.hosts_max < self.hosts_min:
            raise ConfigError("hosts_max", "must be >= hosts_min")
        if self.hosts_max > 253:
            raise ConfigError("hosts_max", "at most 253 hosts fit one /24")
        if self.n_isp_groups < 2:
            raise ConfigError("n_isp_groups", "TIVs need at least two ISP groups (no inter-group pairs otherwise)")
        if self.n_isp_groups > self.n_ases:
            raise ConfigError("n_isp_groups", "more groups than ASes")
        if not 0.0 <= self.congested_fraction <= 1.0:
            raise ConfigError("congested_fraction", "must lie in [0, 1]")
        for key in ("base_min_ms", "base_scale_ms", "group_penalty_max_ms", "link_jitter_max_ms",
                    "intra_bound_ms", "noise_bound_ms"):
            if not getattr(self, key) >= 0:
                raise ConfigError(key, "must be >= 0")
        if self.peak_factor_min < 1.0:
            raise ConfigError("peak_factor_min", "diurnal factors must be >= 1")
        if self.peak_factor_max < self.peak_factor_min:
            raise ConfigError("peak_factor_max", "must be >= peak_factor_min")
        if not self.intra_bound_ms < self.base_min_ms:
            raise ConfigError("intra_bound_ms", "must be below base_min_ms")
        if not 0 <= self.country < 256:
            raise ConfigError("country", "must fit 8 bits")


@dataclass
class Workload:
    config: WorkloadConfig
    truth: GroundTruth
    series: MatrixSeries
    hosts: list
    mapping: AsnMappingTable
    bootstrap_ip: str
    congested_pairs: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.truth, self.series, self.hosts, self.mapping))


def _prefix(i: int) -> ipaddress.IPv4Network:
    return ipaddress.IPv4Network((0x0A000000 | (i << 8), 24))


def _sym(rng, n, low, high, symmetric=True):
    x = rng.uniform(low, high, size=(n, n))
    if symmetric:
        x = np.triu(x, 1)
        x = x + x.T
    np.fill_diagonal(x, 0.0)
    return x


def _draw(cfg: WorkloadConfig, rng: np.random.Generator) -> Workload:
    L = cfg.n_ases
    sym = not cfg.asymmetric
    asns = np.sort(rng.choice(np.arange(1000, 65000), size=L, replace=False))
    groups = rng.permutation(np.arange(L) % cfg.n_isp_groups)
    pos = rng.random((L, 2))
    dist = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2))
    geo = cfg.base_min_ms + cfg.base_scale_ms * dist
    penalty = _sym(rng, cfg.n_isp_groups, 0.0, cfg.group_penalty_max_ms)
    inter = groups[:, None] != groups[None, :]
    jitter = _sym(rng, L, 0.0, cfg.link_jitter_max_ms, sym)
    base = geo + inter * (penalty[groups[:, None], groups[None, :]] + jitter)
    np.fill_diagonal(base, 0.0)

    draw = rng.random((L, L))
    if sym:
        draw = np.triu(draw, 1) + np.triu(draw, 1).T
    congested = inter & (draw < cfg.congested_fraction)
    np.fill_diagonal(congested, False)
    peak = _sym(rng, L, cfg.peak_factor_min, cfg.peak_factor_max, sym)
    factors = np.ones((L, L, 24))
    factors[congested] = 1.0 + (peak[congested][:, None] - 1.0) * DIURNAL_SHAPE[None, :]

    noise = rng.uniform(0.0, cfg.noise_bound_ms, size=(cfg.days, 24, L, L))
    if sym:
        noise = np.triu(noise, 1) + np.swapaxes(np.triu(noise, 1), 2, 3)
    rtt = base[None, None] * np.moveaxis(factors, 2, 0)[None] + noise
    idx = np.arange(L)
    rtt[:, :, idx, idx] = 0.0

    labels = tuple(int(a) for a in asns)
    mapping = AsnMappingTable(countries={a: cfg.country for a in labels})
    hosts = []
    host_map = {}
    counts = rng.integers(cfg.hosts_min, cfg.hosts_max + 1, size=L)
    for i, asn in enumerate(labels):
        net = _prefix(i)
        mapping.add_prefix(net, asn)
        caps = rng.random(counts[i])
        offs = rng.uniform(0.05, 0.45, size=counts[i]) * cfg.intra_bound_ms
        for k in range(counts[i]):
            ip = str(net.network_address + k + 1)
            h = Host(ip, asn, float(caps[k]), float(offs[k]))
            hosts.append(h)
            host_map[ip] = h
    bootstrap_ip = str(_prefix(0).network_address + 254)
    host_map[bootstrap_ip] = Host(bootstrap_ip, labels[0], 0.0, 0.0)

    truth = GroundTruth(labels, rtt, host_map, base=base, factors=factors,
                        congested=congested, intra_bound=cfg.intra_bound_ms)
    series = MatrixSeries(DelayMatrix(rtt[d, h], labels, PeriodIndex(d, h))
                          for d in range(cfg.days) for h in range(24))
    pairs = [(labels[i], labels[j]) for i, j in zip(*np.nonzero(np.triu(congested) if sym else congested))]
    return Workload(cfg, truth, series, hosts, mapping, bootstrap_ip, pairs)


def has_tiv(values: np.ndarray, margin: float = 0.0) -> bool:
    return bool(tiv_edge_mask(np.asarray(values, dtype=np.float64), margin).any())


def generate(cfg: WorkloadConfig = WorkloadConfig()) -> Workload:
    """Draw a workload; redraw until the 05:00 matrix of day 0 holds a TIV."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.max_attempts):
        w = _draw(cfg, rng)
        if has_tiv(w.truth.matrix_at(0, LCN_HOUR)):
            return w
    raise ConfigError("max_attempts", f"no TIV in {cfg.max_attempts} draws; config cannot produce one")


# --------------------------------------------------------------------------
# workload directory
# --------------------------------------------------------------------------

def config_lines(cfg) -> list:
    out = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        out.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return out


def save_workload(w: Workload, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_series(w.series, directory)
    w.mapping.save(directory / PREFIX_NAME, directory / COUNTRY_NAME)
    rows = ["ip,asn,capacity,intra_offset_ms"]
    rows += [f"{h.ip},{h.asn},{h.capacity!r},{h.intra_offset!r}" for h in w.hosts]
    (directory / HOSTS_NAME).write_text("\n".join(rows) + "\n")
    meta = config_lines(w.config)
    meta.append(f"bootstrap_ip = {w.bootstrap_ip}")
    meta.append("congested = " + " ".join(f"{a}-{b}" for a, b in w.congested_pairs))
    (directory / META_NAME).write_text("\n".join(meta) + "\n")
    return directory


def load_workload(directory) -> Workload:
    directory = Path(directory)
    if not (directory / META_NAME).exists():
        raise FileNotFoundError(f"{directory} has no {META_NAME}")
    meta = {}
    for line in (directory / META_NAME).read_text().splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    cfg = parse_config(WorkloadConfig, {k: v for k, v in meta.items()
                                        if k in {f.name for f in dataclasses.fields(WorkloadConfig)}})
    series = load_series(directory)
    mapping = AsnMappingTable.load(directory / PREFIX_NAME, directory / COUNTRY_NAME)
    hosts, host_map = [], {}
    for line in (directory / HOSTS_NAME).read_text().splitlines()[1:]:
        ip, asn, cap, off = line.split(",")
        h = Host(ip, int(asn), float(cap), float(off))
        hosts.append(h)
        host_map[ip] = h
    bootstrap_ip = meta["bootstrap_ip"]
    host_map[bootstrap_ip] = Host(bootstrap_ip, mapping.asn_of(bootstrap_ip), 0.0, 0.0)
    labels = series.labels
    days = max(m.period.day for m in series) + 1
    rtt = np.full((days, 24, len(labels), len(labels)), np.nan)
    for m in series:
        rtt[m.period.day, m.period.hour] = m.values
    pairs = []
    for tok in meta.get("congested", "").split():
        a, b = tok.split("-")
        pairs.append((int(a), int(b)))
    truth = GroundTruth(labels, rtt, host_map, intra_bound=cfg.intra_bound_ms)
    return Workload(cfg, truth, series, hosts, mapping, bootstrap_ip, pairs)


def parse_config(cls, raw: dict):
    """Coerce ``key -> str`` pairs onto the fields of dataclass ``cls``."""
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in names:
            raise ConfigError(key, "unknown key")
        kind = type(getattr(cls(), key))
        try:
            if kind is bool:
                low = str(value).strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError
                kwargs[key] = low in ("true", "1", "yes")
            elif kind is int:
                kwargs[key] = int(value)
            elif kind is float:
                kwargs[key] = float(value)
            else:
                kwargs[key] = value
        except ValueError:
            raise ConfigError(key, f"cannot parse {value!r} as {kind.__name__}") from None
    return cls(**kwargs)


# --------------------------------------------------------------------------
# King data
# --------------------------------------------------------------------------

def load_king(path) -> DelayMatrix:
    """Square matrix of RTTs in microseconds, one row per line; negatives are missing.

    Labels are 1..n; asymmetric entries are kept as they are.
    """
    rows = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        try:
            rows.append([float(tok) for tok in s.replace(",", " ").split()])
        except ValueError:
            raise MatrixFormatError(f"{path}:{ln}: non-numeric token") from None
    n = len(rows)
    if n < 2:
        raise MatrixFormatError(f"{path}: need at least 2 rows")
    for i, r in enumerate(rows):
        if len(r) != n:
            raise MatrixFormatError(f"{path}: row {i} has {len(r)} values, expected {n}")
    us = np.array(rows)
    ms = np.where(us < 0, np.nan, us / 1000.0)
    np.fill_diagonal(ms, 0.0)
    return DelayMatrix(ms, tuple(range(1, n + 1)))
