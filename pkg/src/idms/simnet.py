"""Deterministic discrete-event network: ground-truth delays, delivery, probes, failures.

Time is in milliseconds of simulated time.  Hour ``h`` of day ``d`` starts at
``(24 d + h) * 3.6e6``.
"""
from __future__ import annotations

import csv
import heapq
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .delayspace import MS_PER_HOUR

DEFAULT_JITTER = 0.1          # samples are truth * U[1, 1 + jitter]
DEFAULT_TIMEOUT_MS = 3000.0
DEFAULT_DETECTION_DELAY_MS = 5000.0


class ProbeTimeout(Exception):
    pass


class UnknownHostError(KeyError):
    pass


@dataclass(frozen=True)
class Host:
    ip: str
    asn: int
    capacity: float = 1.0
    intra_offset: float = 0.0  # half of this host's contribution to intra-AS RTT


@dataclass
class GroundTruth:
    """Time-varying RTT model.

    ``rtt[day, hour]`` is the inter-AS matrix of that period, i.e.
    base * diurnal factor plus the bounded day-to-day noise.  Days beyond the
    table wrap around.  Hosts in the same AS see ``offset_a + offset_b``.
    """

    labels: tuple
    rtt: np.ndarray                      # (days, 24, L, L)
    hosts: dict                          # ip -> Host
    base: np.ndarray | None = None       # (L, L)
    factors: np.ndarray | None = None    # (L, L, 24)
    congested: np.ndarray | None = None  # (L, L) bool
    intra_bound: float = math.inf
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self._index = {a: i for i, a in enumerate(self.labels)}

    @property
    def days(self) -> int:
        return self.rtt.shape[0]

    def host(self, ip) -> Host:
        try:
            return self.hosts[str(ip)]
        except KeyError:
            raise UnknownHostError(ip) from None

    def as_rtt(self, asn_a: int, asn_b: int, t: float) -> float:
        slot = int(t // MS_PER_HOUR)
        day, hour = (slot // 24) % self.days, slot % 24
        return float(self.rtt[day, hour, self._index[asn_a], self._index[asn_b]])

    def matrix_at(self, day: int, hour: int) -> np.ndarray:
        return self.rtt[day % self.days, hour]


def ground_truth_rtt(truth: GroundTruth, a, b, t: float) -> float:
    ha, hb = truth.host(a), truth.host(b)
    if ha.ip == hb.ip:
        return 0.0
    if ha.asn == hb.asn:
        return ha.intra_offset + hb.intra_offset
    return truth.as_rtt(ha.asn, hb.asn, t)


def probe_rtt(truth: GroundTruth, src, dst, t: float, samples: int, rng: np.random.Generator,
              jitter: float = DEFAULT_JITTER, timeout_ms: float = DEFAULT_TIMEOUT_MS) -> float:
    """Median of ``samples`` noisy RTT draws; raises ProbeTimeout past the timeout."""
    if samples < 1:
        raise ValueError("need at least one sample")
    true = ground_truth_rtt(truth, src, dst, t)
    if jitter > 0:
        draws = true * rng.uniform(1.0, 1.0 + jitter, size=samples)
    else:
        draws = np.full(samples, true)
    if np.any(draws > timeout_ms):
        raise ProbeTimeout(f"probe {src}->{dst} exceeded {timeout_ms} ms")
    return float(np.median(draws))


class EventQueue:
    """Min-heap on (time, insertion sequence)."""

    def __init__(self):
        self._heap = []
        self._seq = itertools.count()

    def push(self, time: float, event) -> None:
        heapq.heappush(self._heap, (time, next(self._seq), event))

    def pop(self):
        time, _, event = heapq.heappop(self._heap)
        return time, event

    def peek_time(self) -> float:
        return self._heap[0][0]

    def __len__(self):
        return len(self._heap)


class Simulator:
    """Single-threaded event loop over a GroundTruth."""

    def __init__(self, truth: GroundTruth, seed: int = 0, jitter: float = DEFAULT_JITTER,
                 timeout_ms: float = DEFAULT_TIMEOUT_MS,
                 detection_delay_ms: float = DEFAULT_DETECTION_DELAY_MS, trace: bool = False):
        self.truth = truth
        self.rng = np.random.default_rng(seed)
        self.jitter = jitter
        self.timeout_ms = timeout_ms
        self.detection_delay_ms = detection_delay_ms
        self.now = 0.0
        self.queue = EventQueue()
        self.locations: dict = {}
        self.failed: set = set()
        self.stats = {"sent": 0, "delivered": 0, "dropped": 0, "timed_out": 0}
        self.tracing = trace
        self.trace: list = []

    # ---- plumbing -------------------------------------------------------

    def register(self, node_id, ip) -> None:
        self.truth.host(ip)
        self.locations[node_id] = str(ip)

    def ip_of(self, node_id) -> str:
        try:
            return self.locations[node_id]
        except KeyError:
            raise UnknownHostError(node_id) from None

    def log(self, t: float, event_type: str, node, detail: str = "") -> None:
        if self.tracing:
            self.trace.append((t, event_type, str(node), detail))

    def schedule(self, t: float, fn: Callable, *args) -> None:
        if t < self.now:
            raise ValueError(f"cannot schedule at {t} before clock {self.now}")
        self.queue.push(t, (fn, args))

    def advance(self, t: float) -> None:
        if t < self.now:
            raise ValueError("clock cannot move backwards")
        self.now = t

    def run(self, until: float | None = None) -> None:
        while self.queue and (until is None or self.queue.peek_time() <= until):
            t, (fn, args) = self.queue.pop()
            self.now = t
            fn(*args)
        if until is not None and until > self.now:
            self.now = until

    def rtt(self, a, b, t: float | None = None) -> float:
        return ground_truth_rtt(self.truth, self.ip_of(a), self.ip_of(b), self.now if t is None else t)

    def one_way(self, a, b, t: float | None = None) -> float:
        return self.rtt(a, b, t) / 2.0

    def is_alive(self, node_id) -> bool:
        return node_id not in self.failed

    # ---- messages -------------------------------------------------------

    def send(self, msg, t: float | None = None, on_deliver: Callable | None = None,
             on_drop: Callable | None = None) -> float:
        """Schedule delivery of ``msg`` one-way-latency after ``t``."""
        t = self.now if t is None else t
        self.stats["sent"] += 1
        if not self.is_alive(msg.src):
            self.stats["dropped"] += 1
            self.log(t, "drop", msg.dst, f"{msg.kind.value} sender down")
            if on_drop:
                on_drop(msg)
            return math.inf
        arrive = t + self.one_way(msg.src, msg.dst, t)
        self.log(t, "send", msg.src, f"{msg.kind.value} -> {msg.dst}")
        self.schedule(arrive, self._deliver, msg, on_deliver, on_drop)
        return arrive

    def _deliver(self, msg, on_deliver, on_drop) -> None:
        if not self.is_alive(msg.dst):
            self.stats["dropped"] += 1
            self.log(self.now, "drop", msg.dst, f"{msg.kind.value} receiver down")
            if on_drop:
                on_drop(msg)
            return
        self.stats["delivered"] += 1
        self.log(self.now, "deliver", msg.dst, msg.kind.value)
        if on_deliver:
            on_deliver(msg)

    def count_timeout(self, msg) -> None:
        self.stats["sent"] += 1
        self.stats["timed_out"] += 1
        self.log(self.now, "timeout", msg.dst, msg.kind.value)

    def probe(self, src, dst, t: float | None = None, samples: int = 3) -> float:
        t = self.now if t is None else t
        return probe_rtt(self.truth, self.ip_of(src), self.ip_of(dst), t, samples, self.rng,
                         self.jitter, self.timeout_ms)

    # ---- failures -------------------------------------------------------

    def fail_node(self, node_id, t: float, overlay=None) -> None:
        """Node stops receiving at ``t``; the overlay learns of it after the detection delay."""
        def down():
            self.failed.add(node_id)
            self.log(self.now, "fail", node_id)
            if overlay is not None:
                overlay.mark_failed(node_id)
                self.schedule(self.now + self.detection_delay_ms, detect)

        def detect():
            if node_id in self.failed:
                self.log(self.now, "detect", node_id)
                overlay.handle_failure(node_id)
        self.schedule(t, down)

    def recover_node(self, node_id, t: float, overlay=None) -> None:
        def up():
            self.failed.discard(node_id)
            self.log(self.now, "recover", node_id)
            if overlay is not None:
                overlay.rejoin(node_id)
        self.schedule(t, up)

    def every(self, interval: float, fn: Callable, start: float, until: float) -> None:
        """Run ``fn()`` at ``start``, ``start + interval``, ... up to ``until``."""
        t = start
        while t <= until:
            self.schedule(t, fn)
            t += interval

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_ms", "event_type", "node", "detail"])
        for t, kind, node, detail in self.trace:
            w.writerow([repr(float(t)), kind, node, detail])
        return buf.getvalue()
