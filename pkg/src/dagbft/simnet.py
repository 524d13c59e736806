"""Deterministic discrete-event network simulator.

Implements the partial-synchrony contract (unknown GST, known delta: any
message sent at or after GST is delivered within delta), bounded per-node
memory with a fallback reserve, and delivery-suppression (DDoS) windows.
Identical seed and configuration produce a bit-identical event trace; the
running trace hash is the determinism witness.

Time is simulated milliseconds.  The simulator is single-threaded; event
(time, sequence-number) order is the total order of execution.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field

DAG = "dag"
FALLBACK = "fallback"

WILD = "wild"  # pre-GST default: seeded delay in [0, 20*delta]
CALM = "calm"  # pre-GST delays drawn like post-GST ones


@dataclass
class Envelope:
    seq: int
    src: int
    dst: int
    send_time: int
    deliver_time: int
    lane: str
    message: object


@dataclass
class MemoryMeter:
    """Bounded mempool accounting: a DAG pool plus a fallback-only reserve."""

    limit: int
    reserve: int
    used: int = 0
    reserve_used: int = 0
    exhausted: bool = False
    exhausted_at: int | None = None
    fallback_peak: int = 0
    reserve_overflow: bool = False

    def charge(self, nbytes: int, lane: str = DAG, now: int = 0, force: bool = False) -> bool:
        if lane == FALLBACK:
            if self.reserve_used + nbytes > self.reserve:
                if not force:
                    return False
                self.reserve_overflow = True
            self.reserve_used += nbytes
            self.fallback_peak = max(self.fallback_peak, self.reserve_used)
            return True
        if self.exhausted or self.used >= self.limit:
            if not self.exhausted:
                self.exhausted = True
                self.exhausted_at = now
            return False
        self.used += nbytes
        return True

    def refund(self, nbytes: int, lane: str = DAG) -> None:
        if lane == FALLBACK:
            self.reserve_used = max(0, self.reserve_used - nbytes)
            return
        self.used = max(0, self.used - nbytes)
        if self.exhausted and self.used < self.limit:
            self.exhausted = False

    def reset_fallback_instance(self) -> None:
        self.reserve_used = 0


@dataclass
class DdosWindow:
    target: int
    start: int
    end: int | None  # None: open-ended until released


class Simulator:
    def __init__(
        self,
        seed: int,
        n: int,
        delta: int = 100,
        gst: int = 0,
        pre_gst_profile: str = WILD,
        mem_limit: int = 8 * 1024 * 1024,
        fallback_reserve: int = 4 * 1024 * 1024,
    ):
        self.n = n
        self.delta = delta
        self.gst = gst
        self.pre_gst_profile = pre_gst_profile
        self.now = 0
        self._seq = 0
        self._heap: list[tuple[int, int, str, object]] = []
        self._cancelled: set[int] = set()
        self._delay_rng = random.Random(seed ^ 0x5EED)
        self.handlers: dict[int, object] = {}
        self.meters = {
            i: MemoryMeter(limit=mem_limit, reserve=fallback_reserve) for i in range(n)
        }
        self.windows: list[DdosWindow] = []
        self._parked: dict[int, list[Envelope]] = {}
        self._hash = hashlib.sha256()
        self.trace_sink = None  # optional callable(str line)
        self.counters = {
            "sent": 0,
            "delivered": 0,
            "sender_exhausted": 0,
            "receiver_exhausted": 0,
            "suppressed": 0,
        }
        self.delivery_violations: list[tuple[int, int, int]] = []
        self.exhausted_dag_sends: list[tuple[int, int]] = []

    # -- time & events ------------------------------------------------------

    def _push(self, time: int, kind: str, payload: object) -> int:
        self._seq += 1
        heapq.heappush(self._heap, (time, self._seq, kind, payload))
        return self._seq

    def schedule(self, delay: int, fn, *args) -> int:
        return self._push(self.now + max(0, delay), "timer", (fn, args))

    def cancel(self, handle: int) -> None:
        self._cancelled.add(handle)

    def pending(self) -> bool:
        return bool(self._heap)

    # -- tracing ------------------------------------------------------------

    def trace_event(self, kind: str, src: int, dst: int, info: str) -> None:
        line = f"{self.now}|{kind}|{src}|{dst}|{info}"
        self._hash.update(line.encode())
        self._hash.update(b"\n")
        if self.trace_sink is not None:
            self.trace_sink(line)

    def trace_hash(self) -> str:
        return self._hash.hexdigest()

    # -- ddos windows ---------------------------------------------------------

    def add_ddos_window(self, target: int, start: int, end: int | None) -> DdosWindow:
        w = DdosWindow(target, start, end)
        self.windows.append(w)
        if end is not None:
            self._push(end, "flush", target)
        return w

    def release_ddos(self, target: int) -> None:
        """Close any open-ended window on target as of now and flush its backlog."""
        for w in self.windows:
            if w.target == target and w.end is None:
                w.end = self.now
        self._push(self.now, "flush", target)

    def _suppressed(self, dst: int, time: int) -> bool:
        for w in self.windows:
            if w.target == dst and time >= w.start and (w.end is None or time < w.end):
                return True
        return False

    # -- messaging ------------------------------------------------------------

    def _delay(self) -> int:
        if self.now >= self.gst or self.pre_gst_profile == CALM:
            return self._delay_rng.randint(1, self.delta)
        return self._delay_rng.randint(0, 20 * self.delta)

    def send(self, src: int, dst: int, message: object, lane: str = DAG) -> Envelope | None:
        if lane == DAG and self.meters[src].exhausted:
            self.counters["sender_exhausted"] += 1
            self.exhausted_dag_sends.append((self.now, src))
            return None
        self._seq += 1
        env = Envelope(
            seq=self._seq,
            src=src,
            dst=dst,
            send_time=self.now,
            deliver_time=self.now + self._delay(),
            lane=lane,
            message=message,
        )
        self.counters["sent"] += 1
        heapq.heappush(self._heap, (env.deliver_time, env.seq, "msg", env))
        return env

    def broadcast(self, src: int, message: object, lane: str = DAG, include_self: bool = True):
        for dst in range(self.n):
            if dst == src and not include_self:
                continue
            self.send(src, dst, message, lane)

    # -- the event loop ---------------------------------------------------------

    def _deliver(self, env: Envelope) -> None:
        if self._suppressed(env.dst, self.now):
            self.counters["suppressed"] += 1
            self._parked.setdefault(env.dst, []).append(env)
            return
        if env.lane == DAG and self.meters[env.dst].exhausted:
            self.counters["receiver_exhausted"] += 1
            self.trace_event("drop_exhausted", env.src, env.dst, type(env.message).__name__)
            return
        if env.send_time >= self.gst and env.deliver_time - env.send_time > self.delta:
            self.delivery_violations.append((env.seq, env.send_time, env.deliver_time))
        self.counters["delivered"] += 1
        self.trace_event(
            "deliver", env.src, env.dst, getattr(env.message, "trace_info", type(env.message).__name__)
        )
        handler = self.handlers.get(env.dst)
        if handler is not None:
            handler(env)

    def _flush(self, target: int) -> None:
        backlog = self._parked.pop(target, [])
        for env in backlog:
            env.deliver_time = self.now + self._delay_rng.randint(1, self.delta)
            self._seq += 1
            env.seq = self._seq
            heapq.heappush(self._heap, (env.deliver_time, env.seq, "msg", env))

    def step(self) -> tuple[int, list[Envelope]]:
        """Advance to the next event time; run everything due at that tick."""
        if not self._heap:
            return self.now, []
        tick = self._heap[0][0]
        self.now = max(self.now, tick)
        delivered: list[Envelope] = []
        while self._heap and self._heap[0][0] == tick:
            _, seq, kind, payload = heapq.heappop(self._heap)
            if kind == "timer":
                if seq in self._cancelled:
                    self._cancelled.discard(seq)
                    continue
                fn, args = payload
                fn(*args)
            elif kind == "flush":
                self._flush(payload)
            else:
                env = payload
                self._deliver(env)
                delivered.append(env)
        return tick, delivered

    def run(self, until: int) -> None:
        while self._heap and self._heap[0][0] <= until:
            self.step()
        self.now = max(self.now, until)
