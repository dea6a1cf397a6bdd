"""Message-level UDM construction, UDM broadcast and PDM distribution.

Message accounting (``m`` bytes per event, ``b`` bytes overhead per message):

construction, per AS with L ASes in total
    MeasureReq, MeasureAck, ResultAck    1 event each           3L (m+b)
    Probe + ProbeReply to the L-1 others 1 event each           2L(L-1) (m+b)
    MeasureResult                        L-1 events             L (b + m(L-1))

which totals 2L(L+1) messages.  Broadcast sends one push per SN plus one
PushAck; a MatrixPush body is 2 bytes per entry (2 L^2) and a DeltaPush body
is 2 bytes per changed entry.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .delayspace import DelayMatrix, PeriodIndex
from .matrix_service import DEFAULT_DELTA_THRESHOLD_MS, MatrixDelta, Pdm, apply_delta, delta
from .overlay import HostId, Overlay
from .simnet import ProbeTimeout, Simulator

DEFAULT_M = 20
DEFAULT_B = 40
DEFAULT_SAMPLES = 3
CONSTRUCTION_DEADLINE_MS = 10_000.0
BROADCAST_HORIZON_MS = 60_000.0


class Kind(enum.Enum):
    MEASURE_REQ = "MeasureReq"
    MEASURE_ACK = "MeasureAck"
    PROBE = "Probe"
    PROBE_REPLY = "ProbeReply"
    MEASURE_RESULT = "MeasureResult"
    RESULT_ACK = "ResultAck"
    MATRIX_PUSH = "MatrixPush"
    DELTA_PUSH = "DeltaPush"
    PUSH_ACK = "PushAck"
    PDM_PUSH = "PdmPush"


class ConstructionAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class Message:
    kind: Kind
    src: HostId
    dst: HostId
    size: int
    body: object = None


def make_message(kind: Kind, src, dst, body_bytes: int, b: int, body=None) -> Message:
    return Message(kind, src, dst, b + body_bytes, body)


@dataclass
class ProtocolLog:
    entries: list = field(default_factory=list)
    counts: Counter = field(default_factory=Counter)
    total_bytes: int = 0
    receipts: Counter = field(default_factory=Counter)   # broadcast: pushes received per SN
    depth: dict = field(default_factory=dict)            # broadcast: tree depth per SN

    def record(self, t: float, msg: Message) -> None:
        self.entries.append((t, msg))
        self.counts[msg.kind] += 1
        self.total_bytes += msg.size

    @property
    def messages(self) -> int:
        return len(self.entries)

    def recount(self) -> tuple:
        return Counter(m.kind for _, m in self.entries), sum(m.size for _, m in self.entries)

    def extend(self, other: "ProtocolLog") -> None:
        for t, m in other.entries:
            self.record(t, m)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_ms", "kind", "src", "dst", "bytes"])
        for t, m in self.entries:
            w.writerow([repr(float(t)), m.kind.value, m.src.hex(), m.dst.hex(), m.size])
        return buf.getvalue()

    def summary(self) -> str:
        parts = [f"{k.value}={self.counts[k]}" for k in Kind if self.counts[k]]
        return f"messages={self.messages} bytes={self.total_bytes} " + " ".join(parts)


def _register(overlay: Overlay, sim: Simulator) -> None:
    for hid, node in overlay.nodes.items():
        if hid not in sim.locations:
            sim.register(hid, node.ip)


# --------------------------------------------------------------------------
# UDM construction
# --------------------------------------------------------------------------

def run_udm_construction(overlay: Overlay, sim: Simulator, period: PeriodIndex,
                         samples: int = DEFAULT_SAMPLES, m: int = DEFAULT_M, b: int = DEFAULT_B,
                         asns=None) -> tuple:
    """Build the L x L UDM for ``period`` by simulated probing.

    The bootstrap picks the lowest-id live SN of every AS; each picked SN
    probes the picked SN of every other AS.  Returns ``(udm, log)``.
    """
    _register(overlay, sim)
    labels = tuple(sorted(asns if asns is not None else overlay.asns()))
    L = len(labels)
    selected = {}
    for asn in labels:
        live = [s for s in overlay.live_sns(asn) if sim.is_alive(s)]
        if not live:
            raise ConstructionAborted(f"AS{asn} has no live supernode")
        selected[asn] = live[0]
    index = {a: i for i, a in enumerate(labels)}
    boot = overlay.bootstrap.id
    log = ProtocolLog()
    values = np.full((L, L), np.nan)
    np.fill_diagonal(values, 0.0)
    rows_done = set()
    t0 = max(period.start_ms, sim.now)

    def send(kind, src, dst, body_bytes, body=None, at=None, on_deliver=None, on_drop=None):
        msg = make_message(kind, src, dst, body_bytes, b, body)
        t = sim.now if at is None else at
        log.record(t, msg)
        sim.send(msg, t, on_deliver, on_drop)
        return msg

    def on_request(msg):
        asn = msg.body
        sn = msg.dst
        send(Kind.MEASURE_ACK, sn, boot, m)
        pending = {}
        for other in labels:
            if other == asn:
                continue
            target = selected[other]
            probe = make_message(Kind.PROBE, sn, target, m, b, other)
            try:
                rtt = sim.probe(sn, target, sim.now, samples)
            except ProbeTimeout:
                log.record(sim.now, probe)
                sim.count_timeout(probe)
                pending[other] = math.nan
                continue
            pending[other] = None
            log.record(sim.now, probe)
            sim.send(probe, sim.now, lambda p, rtt=rtt: on_probe(p, rtt))
        state = {"pending": pending, "asn": asn, "sent": False}
        probes_state[sn] = state
        sim.schedule(sim.now + sim.timeout_ms, finish, sn)
        maybe_finish(sn)

    def on_probe(p, rtt):
        send(Kind.PROBE_REPLY, p.dst, p.src, m, (p.body, rtt), on_deliver=on_reply)

    def on_reply(r):
        other, rtt = r.body
        state = probes_state[r.dst]
        if state["pending"].get(other, 0) is None:
            state["pending"][other] = rtt
        maybe_finish(r.dst)

    def maybe_finish(sn):
        state = probes_state[sn]
        if all(v is not None for v in state["pending"].values()):
            finish(sn)

    def finish(sn):
        state = probes_state[sn]
        if state["sent"] or not sim.is_alive(sn):
            return
        state["sent"] = True
        row = {o: (math.nan if v is None else v) for o, v in state["pending"].items()}
        send(Kind.MEASURE_RESULT, sn, boot, m * (L - 1), (state["asn"], row), on_deliver=on_result)

    def on_result(msg):
        asn, row = msg.body
        send(Kind.RESULT_ACK, boot, msg.src, m)
        i = index[asn]
        for other, v in row.items():
            values[i, index[other]] = v
        rows_done.add(asn)

    probes_state = {}
    sim.advance(t0)
    for asn in labels:
        send(Kind.MEASURE_REQ, boot, selected[asn], m, asn, at=t0, on_deliver=on_request)
    sim.run(until=t0 + CONSTRUCTION_DEADLINE_MS)
    return DelayMatrix(values, labels, period), log


# --------------------------------------------------------------------------
# UDM broadcast
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BroadcastPayload:
    udm: DelayMatrix
    delta: MatrixDelta | None = None


def _push_kind(payload: BroadcastPayload, node) -> Kind:
    # a delta only helps a node that holds exactly the delta's base matrix
    if (payload.delta is not None and node.udm is not None
            and node.udm.period == payload.delta.base_period):
        return Kind.DELTA_PUSH
    return Kind.MATRIX_PUSH


def _push_body_bytes(kind: Kind, payload: BroadcastPayload) -> int:
    if kind is Kind.DELTA_PUSH:
        return 2 * len(payload.delta)
    return 2 * payload.udm.n * payload.udm.n


def run_udm_broadcast(overlay: Overlay, sim: Simulator, udm: DelayMatrix,
                      previous: DelayMatrix | None = None,
                      threshold: float = DEFAULT_DELTA_THRESHOLD_MS,
                      m: int = DEFAULT_M, b: int = DEFAULT_B, at: float | None = None) -> ProtocolLog:
    """Push ``udm`` bootstrap -> AS leaders -> slice leaders -> slice members.

    With ``previous`` given, SNs that hold ``previous`` receive only the
    entries that moved by more than ``threshold``.  SNs missed because a
    forwarder died are reached in repair rounds after re-election.
    """
    _register(overlay, sim)
    d = delta(previous, udm, threshold) if previous is not None else None
    payload = BroadcastPayload(udm, d)
    boot = overlay.bootstrap.id
    log = ProtocolLog()
    t0 = sim.now if at is None else max(at, sim.now)
    sim.advance(t0)

    def push(src, dst, depth):
        node = overlay.node(dst)
        kind = _push_kind(payload, node)
        msg = make_message(kind, src, dst, _push_body_bytes(kind, payload), b, depth)
        log.record(sim.now, msg)
        sim.send(msg, sim.now, on_push)

    def on_push(msg):
        node = overlay.node(msg.dst)
        log.receipts[msg.dst] += 1
        log.depth.setdefault(msg.dst, msg.body)
        if msg.kind is Kind.DELTA_PUSH and node.udm is not None:
            node.udm = apply_delta(node.udm, payload.delta)
        else:
            node.udm = payload.udm
        ack = make_message(Kind.PUSH_ACK, msg.dst, msg.src, m, b)
        log.record(sim.now, ack)
        sim.send(ack, sim.now)
        forward(msg.dst, msg.body)

    def forward(sid, depth):
        node = overlay.node(sid)
        sa = overlay.all_slices().get(node.asn)
        if sa is None:
            return
        if sid == sa.as_leader:
            for leader in sa.leaders[1:]:
                if leader in targets:
                    push(sid, leader, depth + 1)
        if sid in sa.leaders:
            for member in sa.slices[sa.leaders.index(sid)][1:]:
                if member in targets:
                    push(sid, member, depth + 1)

    def start_round(asns):
        for asn in asns:
            sa = overlay.all_slices().get(asn)
            if sa is not None and sa.as_leader in targets:
                push(boot, sa.as_leader, 1)

    def stale():
        return {s for s in overlay.live_sns()
                if sim.is_alive(s) and overlay.node(s).udm is not payload.udm
                and not _has(overlay.node(s), udm)}

    targets = set(overlay.live_sns())
    start_round(sorted(overlay.all_slices()))
    sim.run(until=sim.now + BROADCAST_HORIZON_MS)
    for _ in range(8):
        missing = stale()
        if not missing:
            break
        # forwarders died: let the overlay notice, re-elect, resend to the gaps only
        for sid in list(overlay.live_sns()):
            if not sim.is_alive(sid):
                overlay.handle_sn_failure(sid)
        targets = missing | {s for s in overlay.live_sns() if sim.is_alive(s)}
        start_round(sorted({overlay.node(s).asn for s in missing}))
        sim.run(until=sim.now + BROADCAST_HORIZON_MS)
    return log


def _has(node, udm: DelayMatrix) -> bool:
    return node.udm is not None and node.udm.period == udm.period


def stored_periods(overlay: Overlay) -> dict:
    return {sid: (overlay.node(sid).udm.period if overlay.node(sid).udm is not None else None)
            for sid in overlay.live_sns()}


# --------------------------------------------------------------------------
# PDM distribution
# --------------------------------------------------------------------------

def _schedule_pdm(overlay: Overlay, sim: Simulator, sn: HostId, pdm: Pdm | None, b: int,
                  log: ProtocolLog) -> None:
    node = overlay.node(sn)
    if pdm is not None:
        node.pdm = pdm
    if node.pdm is None or not node.served_ons:
        return
    body = 2 * node.pdm.matrix.n * node.pdm.matrix.n

    def on_push(msg):
        on = overlay.node(msg.dst)
        if on.pdm is None or on.pdm.stamp < msg.body.stamp:
            on.pdm = msg.body

    for oid in sorted(node.served_ons):
        msg = make_message(Kind.PDM_PUSH, sn, oid, body, b, node.pdm)
        log.record(sim.now, msg)
        sim.send(msg, sim.now, on_push)


def run_pdm_distribution(overlay: Overlay, sim: Simulator, sn: HostId, pdm: Pdm | None = None,
                         b: int = DEFAULT_B) -> ProtocolLog:
    """The SN pushes its PDM to every ON it serves; ONs keep the newest build."""
    _register(overlay, sim)
    log = ProtocolLog()
    _schedule_pdm(overlay, sim, sn, pdm, b, log)
    sim.run(until=sim.now + BROADCAST_HORIZON_MS)
    return log


def distribute_pdm(overlay: Overlay, sim: Simulator, pdm: Pdm, b: int = DEFAULT_B) -> ProtocolLog:
    """Every live SN pushes ``pdm`` to its ONs in parallel; one horizon in total."""
    _register(overlay, sim)
    log = ProtocolLog()
    for sid in overlay.live_sns():
        if sim.is_alive(sid):
            _schedule_pdm(overlay, sim, sid, pdm, b, log)
    sim.run(until=sim.now + BROADCAST_HORIZON_MS)
    return log
