"""Two-tier overlay: locality-prefixed host ids, SN/ON membership and leaders.

Host ids are 160-bit integers laid out as country (8 bits) | ASN (32 bits) |
hash of the IPv4 address (120 bits), so all hosts of one AS share a prefix
and sort next to each other.
"""
from __future__ import annotations

import bisect
import csv
import enum
import hashlib
import io
import ipaddress
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .delayspace import AsnMappingTable, DelayMatrix, UnmappedAddressError
from .matrix_service import DEFAULT_C_INTRA_MS, Pdm, estimate_distance

CN_BITS = 8
ASN_BITS = 32
SUFFIX_BITS = 120
ID_BITS = CN_BITS + ASN_BITS + SUFFIX_BITS
ID_SPACE = 1 << ID_BITS
DEFAULT_K = 2


class JoinRefusedError(RuntimeError):
    pass


class NoSupernodeError(LookupError):
    """No live supernode can serve the request."""


@dataclass(frozen=True, order=True)
class HostId:
    cn: int
    asn: int
    suffix: int

    def __post_init__(self):
        if not 0 <= self.cn < (1 << CN_BITS):
            raise ValueError(f"country number {self.cn} out of range")
        if not 0 <= self.asn < (1 << ASN_BITS):
            raise ValueError(f"ASN {self.asn} out of range")
        if not 0 <= self.suffix < (1 << SUFFIX_BITS):
            raise ValueError("suffix out of range")

    @property
    def value(self) -> int:
        return (self.cn << (ASN_BITS + SUFFIX_BITS)) | (self.asn << SUFFIX_BITS) | self.suffix

    @property
    def locality(self) -> int:
        """The 40-bit country|ASN prefix."""
        return self.value >> SUFFIX_BITS

    @classmethod
    def from_value(cls, value: int) -> "HostId":
        return cls(value >> (ASN_BITS + SUFFIX_BITS),
                   (value >> SUFFIX_BITS) & ((1 << ASN_BITS) - 1),
                   value & ((1 << SUFFIX_BITS) - 1))

    def hex(self) -> str:
        return f"{self.value:040x}"

    def __str__(self):
        return self.hex()


def make_host_id(ip, asn: int, cn: int) -> HostId:
    packed = ipaddress.IPv4Address(ip).packed
    suffix = int.from_bytes(hashlib.sha1(packed).digest()[:SUFFIX_BITS // 8], "big")
    return HostId(cn, asn, suffix)


class Role(enum.Enum):
    BOOTSTRAP = "bootstrap"
    SN = "sn"
    ON = "on"


@dataclass(eq=False)
class NodeState:
    id: HostId
    role: Role
    ip: str
    asn: int
    alive: bool = True
    associated_sns: list = field(default_factory=list)  # ON only
    routing_table: frozenset = frozenset()              # SN only: live SN ids
    served_ons: set = field(default_factory=set)        # SN only
    udm: DelayMatrix | None = None
    pdm: Pdm | None = None
    slice_index: int | None = None
    has_tables: bool = False

    @property
    def cn(self) -> int:
        return self.id.cn


# --------------------------------------------------------------------------
# pure helpers
# --------------------------------------------------------------------------

def assign_sns(on_id: HostId, sns_in_asn: Sequence[HostId], k: int = DEFAULT_K) -> list:
    """The ``k`` clockwise successors of ``on_id`` on the sorted SN id ring."""
    ring = sorted(sns_in_asn)
    if not ring:
        raise NoSupernodeError(f"no supernode in AS{on_id.asn}")
    if len(ring) <= k:
        start = bisect.bisect_right(ring, on_id) % len(ring)
        return ring[start:] + ring[:start]
    start = bisect.bisect_right(ring, on_id)
    return [ring[(start + s) % len(ring)] for s in range(k)]


def default_slice_count(m: int) -> int:
    return max(1, math.isqrt(m - 1) + 1) if m > 1 else 1


@dataclass(frozen=True)
class SliceAssignment:
    asn: int
    slices: tuple  # tuple of tuples of SN ids, each sorted
    leaders: tuple
    as_leader: HostId

    @property
    def k(self) -> int:
        return len(self.slices)

    def slice_of(self, sn: HostId) -> int:
        for s, members in enumerate(self.slices):
            if sn in members:
                return s
        raise KeyError(sn)


def elect_slices(asn: int, sns: Iterable[HostId], k_s: int | None = None) -> SliceAssignment:
    """Split the sorted SN ids into ``k_s`` contiguous, near-equal slices."""
    ordered = sorted(set(sns))
    m = len(ordered)
    if m == 0:
        raise ValueError(f"AS{asn} has no supernodes")
    if k_s is None:
        k_s = default_slice_count(m)
    if not 1 <= k_s <= m:
        raise ValueError(f"slice count {k_s} not in [1, {m}]")
    base, extra = divmod(m, k_s)
    slices, pos = [], 0
    for s in range(k_s):
        size = base + (1 if s < extra else 0)
        slices.append(tuple(ordered[pos:pos + size]))
        pos += size
    leaders = tuple(sl[0] for sl in slices)
    return SliceAssignment(asn, tuple(slices), leaders, ordered[0])


class ChordRing:
    """Successor ring with ceil(log2 N) fingers at power-of-two rank offsets.

    Fingers are recomputed from the member list, which stands in for the
    stabilisation protocol between membership events.
    """

    def __init__(self, ids: Iterable[HostId]):
        self.ids = sorted(set(ids))
        self._pos = {h: i for i, h in enumerate(self.ids)}
        n = len(self.ids)
        self.n_fingers = max(1, math.ceil(math.log2(n))) if n > 1 else 0

    def __len__(self):
        return len(self.ids)

    def successor(self, key: HostId | int) -> HostId:
        v = key.value if isinstance(key, HostId) else key
        vals = [h.value for h in self.ids]
        i = bisect.bisect_left(vals, v)
        return self.ids[i % len(self.ids)]

    def fingers(self, node: HostId) -> list:
        p, n = self._pos[node], len(self.ids)
        return [self.ids[(p + (1 << f)) % n] for f in range(self.n_fingers)]

    def route(self, start: HostId, key: HostId | int) -> list:
        """Greedy clockwise path from ``start`` to the key's successor."""
        if not self.ids:
            raise ValueError("empty ring")
        n = len(self.ids)
        target = self._pos[self.successor(key)]
        cur = self._pos[start]
        path = [start]
        while cur != target:
            remaining = (target - cur) % n
            step = 1 << (remaining.bit_length() - 1)
            cur = (cur + step) % n
            path.append(self.ids[cur])
        return path


# --------------------------------------------------------------------------
# membership
# --------------------------------------------------------------------------

class Overlay:
    """Global membership view, mutated only by the simulation loop."""

    def __init__(self, mapping: AsnMappingTable, bootstrap_ip: str, k: int = DEFAULT_K,
                 slice_count=None, c_intra: float = DEFAULT_C_INTRA_MS):
        self.mapping = mapping
        self.k = k
        self.slice_count = slice_count  # None -> ceil(sqrt(m)); int -> fixed (capped at m)
        self.c_intra = c_intra
        self.nodes: dict[HostId, NodeState] = {}
        self._by_ip: dict[str, HostId] = {}
        asn = mapping.asn_of(bootstrap_ip)
        bid = make_host_id(bootstrap_ip, asn, mapping.country_of(asn))
        self.bootstrap = NodeState(bid, Role.BOOTSTRAP, str(bootstrap_ip), asn, has_tables=True)
        self.nodes[bid] = self.bootstrap
        self._by_ip[str(bootstrap_ip)] = bid
        self._slices: dict[int, SliceAssignment] = {}
        self._members: dict[int, list] = {}
        self._deferred = False  # populate() refreshes SN state once at the end

    # ---- queries --------------------------------------------------------

    def node(self, host_id: HostId) -> NodeState:
        return self.nodes[host_id]

    def by_ip(self, ip) -> NodeState:
        return self.nodes[self._by_ip[str(ip)]]

    def _pool(self, asn):
        if asn is None:
            return [self.nodes[h] for members in self._members.values() for h in members]
        return [self.nodes[h] for h in self._members.get(asn, ())]

    def live_sns(self, asn: int | None = None) -> list:
        return sorted(n.id for n in self._pool(asn) if n.role is Role.SN and n.alive)

    def ons(self, asn: int | None = None, live_only: bool = True) -> list:
        return sorted(n.id for n in self._pool(asn)
                      if n.role is Role.ON and (n.alive or not live_only))

    def asns(self) -> list:
        return sorted(self._members)

    def slices(self, asn: int) -> SliceAssignment:
        return self._slices[asn]

    def all_slices(self) -> dict:
        return dict(self._slices)

    def on_ring(self, asn: int) -> ChordRing:
        return ChordRing(self.ons(asn))

    def on_ring_route(self, start: HostId, key: HostId | int) -> list:
        return self.on_ring(start.asn).route(start, key)

    # ---- joins ----------------------------------------------------------

    def join(self, ip, as_sn: bool = False) -> NodeState:
        ip = str(ipaddress.IPv4Address(ip))
        if ip in self._by_ip:
            raise JoinRefusedError(f"{ip} already joined")
        try:
            asn = self.mapping.asn_of(ip)
            cn = self.mapping.country_of(asn)
        except (UnmappedAddressError, KeyError) as exc:
            raise JoinRefusedError(f"cannot map {ip}: {exc}") from None
        hid = make_host_id(ip, asn, cn)
        if hid in self.nodes:
            raise JoinRefusedError(f"host id collision for {ip}")
        promote = as_sn or not self.live_sns(asn)
        node = NodeState(hid, Role.SN if promote else Role.ON, ip, asn, has_tables=True)
        self.nodes[hid] = node
        self._by_ip[ip] = hid
        self._members.setdefault(asn, []).append(hid)
        if not promote:
            self._associate(node)
        elif not self._deferred:
            self._sn_membership_changed(asn)
        return node

    def populate(self, hosts: Iterable, sn_ratio: float = 0.01) -> None:
        """Join ``hosts`` (objects with ip, asn, capacity); top ``sn_ratio`` per AS become SNs."""
        by_asn: dict[int, list] = {}
        for h in hosts:
            by_asn.setdefault(h.asn, []).append(h)
        sn_ips, on_ips = [], []
        for asn in sorted(by_asn):
            group = sorted(by_asn[asn], key=lambda h: (-h.capacity, int(ipaddress.IPv4Address(h.ip))))
            n_sn = max(1, math.ceil(sn_ratio * len(group) - 1e-9))
            sn_ips += [h.ip for h in group[:n_sn]]
            on_ips += [h.ip for h in group[n_sn:]]
        self._deferred = True
        try:
            for ip in sn_ips:
                self.join(ip, as_sn=True)
        finally:
            self._deferred = False
        self._refresh_routing()
        for asn in sorted(by_asn):
            self._refresh_slices(asn)
        for ip in on_ips:
            self.join(ip)

    def _associate(self, on: NodeState) -> None:
        live = self.live_sns(on.asn)
        if not live:
            on.associated_sns = []
            return
        keep = [s for s in on.associated_sns if self.nodes[s].alive and self.nodes[s].role is Role.SN]
        for s in assign_sns(on.id, live, self.k):
            if len(keep) >= min(self.k, len(live)):
                break
            if s not in keep:
                keep.append(s)
        for s in on.associated_sns:
            if s not in keep and s in self.nodes:
                self.nodes[s].served_ons.discard(on.id)
        on.associated_sns = keep
        for s in keep:
            self.nodes[s].served_ons.add(on.id)

    def _sn_membership_changed(self, asn: int) -> None:
        self._refresh_routing()
        self._refresh_slices(asn)

    def _refresh_routing(self) -> None:
        # every SN holds the full live view; one shared immutable copy
        live_all = frozenset(self.live_sns())
        for sid in live_all:
            self.nodes[sid].routing_table = live_all

    def _refresh_slices(self, asn: int) -> None:
        live = self.live_sns(asn)
        if live:
            k_s = default_slice_count(len(live)) if self.slice_count is None else min(self.slice_count, len(live))
            sa = elect_slices(asn, live, k_s)
            self._slices[asn] = sa
            for s, members in enumerate(sa.slices):
                for sid in members:
                    self.nodes[sid].slice_index = s
        else:
            self._slices.pop(asn, None)

    # ---- failures -------------------------------------------------------

    def mark_failed(self, host_id: HostId) -> None:
        """The node stops responding; the overlay has not noticed yet."""
        self.nodes[host_id].alive = False

    def handle_sn_failure(self, failed: HostId) -> None:
        node = self.nodes[failed]
        node.alive = False
        self._sn_membership_changed(node.asn)
        for oid in sorted(node.served_ons):
            on = self.nodes[oid]
            if on.alive:
                self._associate(on)
        node.served_ons.clear()

    def handle_on_failure(self, failed: HostId) -> None:
        node = self.nodes[failed]
        node.alive = False
        for s in node.associated_sns:
            self.nodes[s].served_ons.discard(failed)

    def handle_failure(self, failed: HostId) -> None:
        if self.nodes[failed].role is Role.SN:
            self.handle_sn_failure(failed)
        elif self.nodes[failed].role is Role.ON:
            self.handle_on_failure(failed)

    def rejoin(self, host_id: HostId) -> NodeState:
        node = self.nodes[host_id]
        node.alive = True
        if node.role is Role.SN:
            self._sn_membership_changed(node.asn)
        elif node.role is Role.ON:
            node.associated_sns = []
            self._associate(node)
        return node

    def maintenance(self) -> int:
        """Refill every live ON that has fewer than min(k, live SNs) live SNs."""
        fixed = 0
        for oid in self.ons():
            on = self.nodes[oid]
            live = [s for s in on.associated_sns if self.nodes[s].alive]
            want = min(self.k, len(self.live_sns(on.asn)))
            if len(live) < want or len(live) != len(on.associated_sns):
                self._associate(on)
                fixed += 1
        return fixed

    # ---- service --------------------------------------------------------

    def serving_sn(self, on_id: HostId) -> NodeState:
        for s in self.nodes[on_id].associated_sns:
            sn = self.nodes[s]
            if sn.alive and sn.udm is not None:
                return sn
        raise NoSupernodeError(f"no live associated supernode for {on_id}")

    def query_estimate(self, on_id: HostId, other: HostId) -> float:
        """Ask a live associated SN for the UDM-based distance to ``other``."""
        sn = self.serving_sn(on_id)
        return estimate_distance(on_id, other, sn.udm, self.c_intra)

    # ---- dumps ----------------------------------------------------------

    def membership_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["host_id_hex", "role", "asn", "cn", "ip", "associated_sns"])
        for hid in sorted(self.nodes):
            n = self.nodes[hid]
            w.writerow([hid.hex(), n.role.value, n.asn, n.cn, n.ip,
                        ";".join(s.hex() for s in n.associated_sns)])
        return buf.getvalue()
