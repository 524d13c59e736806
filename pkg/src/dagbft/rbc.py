"""Bracha-style reliable broadcast, multiplexed per (instance) at each node.

Thresholds: echo quorum 2f+1, ready amplification f+1, delivery 2f+1.
The instance id is a tuple whose last element is the designated sender
(e.g. (round, creator) for vertices, (view, slot) for agreement slots).

Two events surface to the host: `on_first`, fired exactly once per instance
on first receipt of the sender's initial proposal, and `on_deliver`, fired
exactly once per instance after the ready quorum with a known payload.
Payloads are any object exposing `.digest` and `.byte_size`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import simnet


@dataclass(frozen=True)
class RbcInit:
    instance: tuple
    payload: object

    @property
    def trace_info(self) -> str:
        return f"rbc_init:{self.instance}:{self.payload.digest.hex()[:8]}"


@dataclass(frozen=True)
class RbcEcho:
    instance: tuple
    payload: object

    @property
    def trace_info(self) -> str:
        return f"rbc_echo:{self.instance}:{self.payload.digest.hex()[:8]}"


@dataclass(frozen=True)
class RbcReady:
    instance: tuple
    digest: bytes

    @property
    def trace_info(self) -> str:
        return f"rbc_ready:{self.instance}:{self.digest.hex()[:8]}"


@dataclass
class RbcInstance:
    first_fired: bool = False
    echoed: bool = False
    ready_digest: bytes | None = None
    delivered: bool = False
    payloads: dict[bytes, object] = field(default_factory=dict)
    echo_from: dict[bytes, set[int]] = field(default_factory=dict)
    ready_from: dict[bytes, set[int]] = field(default_factory=dict)
    broadcast_done: bool = False


class RbcHost:
    """Per-node multiplexer of Bracha instances over the simulated network."""

    def __init__(
        self,
        node: int,
        net: simnet.Simulator,
        n: int,
        f: int,
        on_deliver,
        on_first=None,
        lane: str = simnet.DAG,
        send_filter=None,
    ):
        self.node = node
        self.net = net
        self.n = n
        self.f = f
        self.quorum = 2 * f + 1
        self.on_deliver = on_deliver
        self.on_first = on_first
        self.lane = lane
        self.send_filter = send_filter  # (instance, phase) -> bool, None allows all
        self.instances: dict[tuple, RbcInstance] = {}
        self.malformed = 0

    def _inst(self, instance: tuple) -> RbcInstance:
        st = self.instances.get(instance)
        if st is None:
            st = self.instances[instance] = RbcInstance()
        return st

    def _allowed(self, instance: tuple, phase: str) -> bool:
        return self.send_filter is None or self.send_filter(instance, phase)

    def broadcast(self, instance: tuple, payload) -> bool:
        """Sender-side entry; rejects a duplicate broadcast for the instance."""
        if instance[-1] != self.node:
            return False
        st = self._inst(instance)
        if st.broadcast_done:
            return False
        st.broadcast_done = True
        self.net.broadcast(self.node, RbcInit(instance, payload), lane=self.lane)
        return True

    def handle(self, src: int, msg) -> None:
        if isinstance(msg, RbcInit):
            self._on_init(src, msg)
        elif isinstance(msg, RbcEcho):
            self._on_echo(src, msg)
        elif isinstance(msg, RbcReady):
            self._on_ready(src, msg)
        else:
            self.malformed += 1

    def _on_init(self, src: int, msg: RbcInit) -> None:
        if src != msg.instance[-1] or msg.payload is None:
            self.malformed += 1
            return
        st = self._inst(msg.instance)
        st.payloads.setdefault(msg.payload.digest, msg.payload)
        if not st.first_fired:
            st.first_fired = True
            if self.on_first is not None:
                self.on_first(msg.instance, msg.payload)
        if not st.echoed:
            st.echoed = True
            if self._allowed(msg.instance, "echo"):
                self.net.broadcast(
                    self.node, RbcEcho(msg.instance, msg.payload), lane=self.lane
                )
        self._maybe_deliver(msg.instance, st, msg.payload.digest)

    def _on_echo(self, src: int, msg: RbcEcho) -> None:
        if msg.payload is None:
            self.malformed += 1
            return
        st = self._inst(msg.instance)
        d = msg.payload.digest
        st.payloads.setdefault(d, msg.payload)
        st.echo_from.setdefault(d, set()).add(src)
        if len(st.echo_from[d]) >= self.quorum:
            self._send_ready(msg.instance, st, d)
        self._maybe_deliver(msg.instance, st, d)

    def _on_ready(self, src: int, msg: RbcReady) -> None:
        st = self._inst(msg.instance)
        d = msg.digest
        st.ready_from.setdefault(d, set()).add(src)
        if len(st.ready_from[d]) >= self.f + 1:
            self._send_ready(msg.instance, st, d)
        self._maybe_deliver(msg.instance, st, d)

    def _send_ready(self, instance: tuple, st: RbcInstance, digest: bytes) -> None:
        if st.ready_digest is not None:
            return
        st.ready_digest = digest
        if self._allowed(instance, "ready"):
            self.net.broadcast(self.node, RbcReady(instance, digest), lane=self.lane)

    def _maybe_deliver(self, instance: tuple, st: RbcInstance, digest: bytes) -> None:
        if st.delivered:
            return
        ready = st.ready_from.get(digest, ())
        if len(ready) >= self.quorum and digest in st.payloads:
            st.delivered = True
            self.on_deliver(instance, st.payloads[digest])
