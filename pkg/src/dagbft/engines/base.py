"""Shared plumbing for the two DAG engines.

An engine instance is one simulated node: it owns the node's DAG store,
drives round advancement and vertex creation, exposes the ordered ledger,
and hosts the fallback manager.  Subclasses implement dissemination
(reliable broadcast vs best-effort), the commit rules, and the two
fallback adapter methods (`fallback_vote_check`, `finalize_fallback`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .. import simnet
from ..core import DagStore, Vertex, VertexRef, genesis_vertices

OP = "OP"
FP = "FP"


@dataclass(frozen=True)
class SyncRequest:
    refs: tuple[VertexRef, ...]

    @property
    def trace_info(self) -> str:
        return f"sync_req:{len(self.refs)}"


@dataclass(frozen=True)
class SyncReply:
    vertices: tuple[Vertex, ...]

    @property
    def trace_info(self) -> str:
        return f"sync_rep:{len(self.vertices)}"


@dataclass
class EngineParams:
    n: int
    f: int
    leader_timeout: int  # simulated ms a node waits for a round's leader vertex
    delta: int = 100
    max_payload: int = 128 * 1024  # per-vertex payload cap, bytes

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1


def leader_of(round_: int, n: int) -> int:
    """Predefined round-robin leader schedule."""
    return round_ % n


@dataclass
class TxBuffer:
    chunks: list[bytes] = field(default_factory=list)
    size: int = 0

    def push(self, data: bytes) -> None:
        self.chunks.append(data)
        self.size += len(data)

    def drain(self, cap: int) -> bytes:
        """Take up to cap bytes; the rest stays queued for later vertices."""
        take: list[bytes] = []
        taken = 0
        while self.chunks and taken + len(self.chunks[0]) <= cap:
            chunk = self.chunks.pop(0)
            taken += len(chunk)
            take.append(chunk)
        if not take and self.chunks and cap > 0:
            chunk = self.chunks.pop(0)
            take.append(chunk[:cap])
            self.chunks.insert(0, chunk[cap:])
            taken = cap
        self.size -= taken
        return b"".join(take)


class EngineBase:
    allow_missing = False

    def __init__(self, node, net: simnet.Simulator, params: EngineParams, recorder, strategy):
        self.node = node
        self.net = net
        self.params = params
        self.n = params.n
        self.f = params.f
        self.quorum = params.quorum
        self.recorder = recorder
        self.strategy = strategy
        self.is_byzantine = node in strategy.byzantine(params.n, params.f)
        self.store = DagStore(params.n, params.f, allow_missing=self.allow_missing)
        self.mode = OP
        self.current_round = 1
        self.created: dict[int, Vertex] = {}
        self.skipped_rounds: set[int] = set()
        self.timed_out: set[int] = set()
        self.resume_refs: list[VertexRef] | None = None  # decided blocks after a fallback
        self.latest_by_creator: dict[int, int] = {}
        self.leader_overrides: dict[int, tuple[int, bytes]] = {}
        self.ordered_log: list[bytes] = []
        self.fallback_billed: set[bytes] = set()
        self.txs = TxBuffer()
        self.dag_queue: list[tuple[int, object]] = []
        self.sync_requested: dict[bytes, str] = {}
        self.fallback_billed_outstanding = 0
        self.fallback = None  # attached by the harness when the fallback is enabled

    # -- helpers ------------------------------------------------------------

    @property
    def meter(self) -> simnet.MemoryMeter:
        return self.net.meters[self.node]

    def leader_of(self, round_: int) -> int:
        override = self.leader_overrides.get(round_)
        if override is not None:
            return override[0]
        return leader_of(round_, self.n)

    def leader_vertex(self, round_: int) -> Vertex | None:
        override = self.leader_overrides.get(round_)
        if override is not None:
            return self.store.by_digest.get(override[1])
        return self.store.get(round_, leader_of(round_, self.n))

    def enqueue_txs(self, data: bytes) -> None:
        self.txs.push(data)

    def last_created(self) -> tuple[int, Vertex]:
        r = max(self.created)
        return r, self.created[r]

    def creation_refs(self, r: int) -> list[VertexRef]:
        """References for a new round-r vertex: every stored round r-1 vertex,
        or the decided fallback blocks right after a view finalizes."""
        if self.resume_refs is not None:
            return list(self.resume_refs)
        return [
            v.ref
            for v in sorted(self.store.round_vertices(r - 1).values(), key=lambda v: v.creator)
        ]

    def _note_vertex(self, v: Vertex) -> None:
        prev = self.latest_by_creator.get(v.creator, 0)
        if v.round > prev:
            self.latest_by_creator[v.creator] = v.round

    # -- message entry point ---------------------------------------------------

    def dispatch(self, env: simnet.Envelope) -> None:
        """Synchronization runs in both modes (the fallback path depends on
        it); other DAG-lane traffic is queued while on the fallback path."""
        msg = env.message
        if isinstance(msg, SyncRequest):
            self._on_sync_request(env.src, msg, lane=env.lane)
            return
        if isinstance(msg, SyncReply):
            self._on_sync_reply(env.src, msg, lane=env.lane)
            return
        if env.lane == simnet.FALLBACK:
            if self.fallback is not None:
                self.fallback.handle(env.src, msg)
            return
        if self.mode == FP:
            self.dag_queue.append((env.src, msg))
            return
        self.handle_dag(env.src, msg)

    def handle_dag(self, src: int, msg) -> None:
        raise NotImplementedError

    def _drain_dag_queue(self) -> None:
        while self.dag_queue and self.mode == OP:
            src, msg = self.dag_queue.pop(0)
            self.handle_dag(src, msg)

    # -- deterministic missing-vertex synchronization ----------------------------

    def request_sync(self, refs: list[VertexRef], lane: str = simnet.DAG) -> None:
        """Fetch missing vertices from all peers; duplicates are discarded on
        reply.  A ref already requested on the DAG lane may be re-requested on
        the fallback lane (the reply may have been parked by a mode switch)."""
        fresh = []
        for r in refs:
            prior = self.sync_requested.get(r.digest)
            if prior is None or (prior == simnet.DAG and lane == simnet.FALLBACK):
                fresh.append(r)
        if not fresh:
            return
        for r in fresh:
            self.sync_requested[r.digest] = lane
        msg = SyncRequest(tuple(sorted(fresh, key=lambda r: (r.round, r.creator, r.digest))))
        self.recorder.event("sync_request", self.node, refs=len(fresh))
        self.net.broadcast(self.node, msg, lane=lane, include_self=False)

    def _on_sync_request(self, src: int, msg: SyncRequest, lane: str) -> None:
        held = [self.store.resolve(r) for r in msg.refs]
        held = [v for v in held if v is not None]
        if held:
            self.net.send(self.node, src, SyncReply(tuple(held)), lane=lane)

    def _on_sync_reply(self, src: int, msg: SyncReply, lane: str) -> None:
        ingest_lane = simnet.FALLBACK if self.mode == FP else lane
        for v in sorted(msg.vertices, key=lambda v: (v.round, v.creator)):
            self.ingest_synced(v, ingest_lane)

    def ingest_synced(self, v: Vertex, lane: str) -> None:
        raise NotImplementedError

    # -- ordering ----------------------------------------------------------------

    def order_leader(self, leader: Vertex, kind: str) -> list[Vertex]:
        """Order a committed leader's unordered causal history, then the leader."""
        history = self.store.causal_history(leader.ref)
        for v in history:
            self.ordered_log.append(v.digest)
            lane = simnet.FALLBACK if v.digest in self.fallback_billed else simnet.DAG
            self.meter.refund(v.byte_size, lane)
            if lane == simnet.DAG:
                self.recorder.committed(self.node, v.byte_size)
            else:
                self.fallback_billed_outstanding -= v.byte_size
        self.store.mark_ordered(history)
        self.recorder.event(
            "leader_committed",
            self.node,
            round=leader.round,
            creator=leader.creator,
            kind=kind,
            ordered=len(history),
            digest=leader.digest,
        )
        self.net.trace_event("commit", self.node, -1, f"r{leader.round}:{leader.digest.hex()[:8]}")
        return history

    # -- vertex acceptance accounting ---------------------------------------------

    def charge_vertex(self, v: Vertex, lane: str = simnet.DAG) -> bool:
        # Fallback-path storage is protocol-critical and sized by the reserve
        # formula; an overflow is recorded and audited rather than dropped.
        ok = self.meter.charge(
            v.byte_size, lane, now=self.net.now, force=(lane == simnet.FALLBACK)
        )
        if not ok and lane == simnet.DAG:
            self.recorder.event("exhausted_reject", self.node, round=v.round)
        return ok

    def accept_vertex(self, v: Vertex, lane: str = simnet.DAG) -> bool:
        """Meter and insert a vertex whose structure has been validated."""
        if self.store.has(v.ref):
            return False
        if not self.charge_vertex(v, lane):
            return False
        res = self.store.insert(v)
        if not res.accepted:
            self.meter.refund(v.byte_size, lane)
            if res.status == "equivocation":
                self.recorder.event(
                    "equivocation_detected", self.node, round=v.round, creator=v.creator
                )
            return False
        if lane == simnet.FALLBACK:
            self.fallback_billed.add(v.digest)
            self.fallback_billed_outstanding += v.byte_size
        else:
            self.recorder.proposed(self.node, v.byte_size)
        self._note_vertex(v)
        if self.fallback is not None:
            self.fallback.on_uncommitted_bytes(self.meter.used)
        return True

    # -- fallback-path transitions ---------------------------------------------

    def enter_fallback_path(self) -> None:
        self.mode = FP
        self.recorder.set_fallback(self.node, True)

    def resume_optimistic_path(self) -> None:
        self.mode = OP
        self.recorder.set_fallback(self.node, False)

    # -- bootstrap ----------------------------------------------------------------

    def start(self) -> None:
        for g in genesis_vertices(self.n):
            self.accept_vertex(g)
            if g.creator == self.node:
                self.created[g.round] = g
        self.after_genesis()

    def after_genesis(self) -> None:
        raise NotImplementedError
