"""Certified-DAG engine: RBC-disseminated vertices, leader-predecessor rule,
direct commits from RBC first messages, recursive indirect commits.

A vertex is inserted only once all referenced parents are stored, so every
stored vertex has its full causal history locally (pending vertices wait in
a buffer).  The leader of round r+1 references the round-r leader vertex or
carries a certificate of 2f+1 signed no-vote messages.
"""

from __future__ import annotations

from dataclasses import dataclass

from .. import simnet
from ..core import (
    MissingHistory,
    NoVoteCertificate,
    Signature,
    Vertex,
    VertexRef,
    no_vote_digest,
    structurally_valid,
)
from ..rbc import RbcHost, RbcInit, RbcEcho, RbcReady
from .base import FP, OP, EngineBase, leader_of


@dataclass(frozen=True)
class NoVote:
    round: int
    leader: int
    signature: Signature

    @property
    def trace_info(self) -> str:
        return f"no_vote:{self.round}"


class CertifiedEngine(EngineBase):
    allow_missing = False

    def __init__(self, node, net, params, recorder, strategy, keychain):
        super().__init__(node, net, params, recorder, strategy)
        self.keychain = keychain
        self.sign = keychain.signer_for(node)
        self.rbc = RbcHost(
            node,
            net,
            params.n,
            params.f,
            on_deliver=self._on_rbc_deliver,
            on_first=self._on_rbc_first,
            send_filter=self._rbc_filter,
        )
        self.first_msgs: dict[int, dict[int, Vertex]] = {}
        self.no_votes: dict[int, dict[int, Signature]] = {}
        self.pending_parents: dict[bytes, list[Vertex]] = {}
        self.pending_set: set[bytes] = set()
        self.creation_blocked = False
        self.pending_finalize: tuple[int, list] | None = None
        # Only certified (delivered) vertices may be referenced: a reference to
        # an undelivered vertex would be uninsertable at every other node.
        self.referencable: set[bytes] = set()

    # -- dissemination ------------------------------------------------------

    def _rbc_filter(self, instance: tuple, phase: str) -> bool:
        if not self.is_byzantine:
            return True
        round_, creator = instance
        is_leader_inst = creator == leader_of(round_, self.n)
        return not self.strategy.withhold_rbc_vote(
            self.node, is_leader_inst, self.net.now
        )

    def handle_dag(self, src: int, msg) -> None:
        if isinstance(msg, (RbcInit, RbcEcho, RbcReady)):
            self.rbc.handle(src, msg)
        elif isinstance(msg, NoVote):
            self._on_no_vote(src, msg)

    def _on_rbc_first(self, instance: tuple, vertex) -> None:
        round_, creator = instance
        if not isinstance(vertex, Vertex) or (vertex.round, vertex.creator) != instance:
            return
        self.first_msgs.setdefault(round_, {})[creator] = vertex
        self.try_commit(round_ - 1)

    def _on_rbc_deliver(self, instance: tuple, vertex) -> None:
        if not isinstance(vertex, Vertex) or (vertex.round, vertex.creator) != instance:
            return
        if structurally_valid(vertex, self.quorum) is not None:
            return
        self.referencable.add(vertex.digest)
        if self.store.has(vertex.ref):
            self._after_insert(vertex)
            return
        self._insert_or_buffer(vertex, lane=simnet.DAG)

    def _insert_or_buffer(self, v: Vertex, lane: str) -> None:
        if self.store.has(v.ref) or v.digest in self.pending_set:
            return
        absent = [r for r in v.references if not self.store.has(r)]
        if absent:
            self.pending_set.add(v.digest)
            for r in absent:
                self.pending_parents.setdefault(r.digest, []).append(v)
            if self.mode == FP or self.pending_finalize is not None:
                self.request_sync(absent, lane=simnet.FALLBACK)
            return
        self._insert_now(v, lane)

    def _insert_now(self, v: Vertex, lane: str) -> None:
        if not self.accept_vertex(v, lane):
            return
        self._after_insert(v)
        for waiter in self.pending_parents.pop(v.digest, []):
            self.pending_set.discard(waiter.digest)
            self._insert_or_buffer(waiter, lane)

    def _after_insert(self, v: Vertex) -> None:
        self.try_commit(v.round)
        if self.creation_blocked:
            self._maybe_create_vertex()
        if self.fallback is not None:
            self.fallback.revalidate_deferred()
        if self.pending_finalize is not None:
            self._try_finalize()
        self._advance_check()

    def ingest_synced(self, v: Vertex, lane: str) -> None:
        if structurally_valid(v, self.quorum) is not None:
            return
        self.referencable.add(v.digest)
        self._insert_or_buffer(v, lane)

    # -- round advancement and vertex creation --------------------------------

    def after_genesis(self) -> None:
        for v in self.store.by_digest.values():
            self.referencable.add(v.digest)
        self._advance_check()

    def _delivered_round(self, r: int) -> list[Vertex]:
        return [
            v
            for v in self.store.round_vertices(r).values()
            if v.digest in self.referencable
        ]

    def _advance_check(self) -> None:
        if self.mode == FP:
            return
        while True:
            r = self.current_round
            vertices = self._delivered_round(r)
            if len(vertices) < self.quorum:
                return
            lv = self.leader_vertex(r)
            leader_seen = lv is not None and lv.digest in self.referencable
            if not leader_seen and r not in self.timed_out:
                self._arm_leader_timer(r)
                return
            self.current_round = r + 1
            self._arm_leader_timer(r + 1)
            self._maybe_create_vertex()
            if self.mode == FP:
                return

    def _arm_leader_timer(self, r: int) -> None:
        if r in self.timed_out:
            return
        if getattr(self, "_armed_round", 0) >= r:
            return
        self._armed_round = r
        self.net.schedule(self.params.leader_timeout, self._on_leader_timeout, r)

    def _on_leader_timeout(self, r: int) -> None:
        self.timed_out.add(r)
        if getattr(self, "_armed_round", 0) == r:
            self._armed_round = 0
        self._advance_check()
        if self.creation_blocked:
            self._maybe_create_vertex()

    def _maybe_create_vertex(self) -> None:
        r = self.current_round
        if (
            self.mode == FP
            or r in self.created
            or r in self.skipped_rounds
            or self.meter.exhausted
        ):
            return
        self.creation_blocked = False
        i_am_leader = self.leader_of(r) == self.node
        if self.is_byzantine and self.strategy.skip_own_vertex(
            self.node, r, i_am_leader, self.net.now
        ):
            self.skipped_rounds.add(r)
            self.resume_refs = None
            return
        resuming = self.resume_refs is not None
        refs = self.creation_refs(r)
        if not resuming and len(refs) < self.quorum:
            self.creation_blocked = True
            return
        prev_leader = None if resuming else self.leader_vertex(r - 1)
        aux = None
        if i_am_leader and not self.is_byzantine:
            referenced = prev_leader is not None and any(
                x.digest == prev_leader.digest for x in refs
            )
            if not referenced:
                aux = self._form_nvc(r - 1)
                if aux is None:
                    self.creation_blocked = True
                    return
        if self.is_byzantine:
            lref = prev_leader.ref if prev_leader is not None else None
            filtered = self.strategy.reference_filter(
                self.node, r, refs, lref, self.quorum, self.net.now
            )
            if filtered is None:
                self.creation_blocked = True
                return
            refs = filtered
        payload = self.txs.drain(self.params.max_payload)
        v = Vertex(r, self.node, payload, tuple(refs), aux)
        self.created[r] = v
        self.resume_refs = None
        self.recorder.event("vertex_created", self.node, round=r)
        self._insert_now(v, lane=simnet.DAG)
        if self.meter.exhausted:
            return
        if self.is_byzantine and self.strategy.equivocates(self.node, r, self.net.now):
            alt = Vertex(r, self.node, payload + b"|alt", tuple(refs), aux)
            self.recorder.event("equivocation_emitted", self.node, round=r)
            for dst in range(self.n):
                variant = v if dst % 2 == 0 or dst == self.node else alt
                self.net.send(self.node, dst, RbcInit((r, self.node), variant), lane=simnet.DAG)
        else:
            self.rbc.broadcast((r, self.node), v)
        self._maybe_send_no_vote(r - 1, v)
        if self.fallback is not None:
            self.fallback.on_own_vertex(r)

    def _maybe_send_no_vote(self, r: int, created: Vertex) -> None:
        """After creating the round r+1 vertex, tell L_{r+1} if it skipped v_L^r."""
        if r < 1:
            return
        leader = leader_of(r, self.n)
        lv = self.store.get(r, leader)
        if lv is not None and created.references_vertex(lv.ref):
            return
        sig = self.sign(no_vote_digest(r, leader))
        nv = NoVote(r, leader, sig)
        target = leader_of(r + 1, self.n)
        if target == self.node:
            self._record_no_vote(self.node, nv)
        else:
            self.net.send(self.node, target, nv, lane=simnet.DAG)

    def _on_no_vote(self, src: int, msg: NoVote) -> None:
        if msg.signature.digest != no_vote_digest(msg.round, msg.leader):
            return
        if not self.keychain.verify(msg.signature) or msg.signature.signer != src:
            return
        self._record_no_vote(src, msg)

    def _record_no_vote(self, src: int, msg: NoVote) -> None:
        self.no_votes.setdefault(msg.round, {})[src] = msg.signature
        if self.creation_blocked:
            self._maybe_create_vertex()

    def _form_nvc(self, r: int) -> NoVoteCertificate | None:
        """2f+1 no-vote messages for round r, cross-checked against the DAG."""
        leader = leader_of(r, self.n)
        sigs = []
        for signer, sig in sorted(self.no_votes.get(r, {}).items()):
            w = self.store.get(r + 1, signer)
            lv = self.store.get(r, leader)
            if w is not None and lv is not None and w.references_vertex(lv.ref):
                continue  # contradicted by the signer's own round r+1 vertex
            sigs.append(sig)
        own = self.created.get(r + 1)
        if own is None and self.node not in self.no_votes.get(r, {}):
            sigs.append(self.sign(no_vote_digest(r, leader)))
        if len(sigs) < self.quorum:
            return None
        return NoVoteCertificate(r, tuple(sigs[: self.quorum]))

    # -- commit rules -----------------------------------------------------------

    def try_commit(self, r: int) -> None:
        if r < 1 or r <= self.store.committed_round:
            return
        v_l = self.leader_vertex(r)
        if v_l is None:
            return
        support = self.first_msgs.get(r + 1, {})
        votes = sum(1 for w in support.values() if w.references_vertex(v_l.ref))
        if votes >= self.quorum:
            self.recorder.event(
                "direct_commit", self.node, round=r, votes=votes,
                digest=v_l.digest.hex()[:16],
            )
            self.commit_leader(v_l, "direct")

    def commit_leader(self, v: Vertex, kind: str) -> None:
        if v.round <= self.store.committed_round:
            return
        stack: list[tuple[Vertex, str]] = [(v, kind)]
        cur = v
        rr = v.round - 1
        while rr > self.store.committed_round:
            vs = self.leader_vertex(rr)
            if vs is not None and self.store.path_exists(cur.ref, vs.ref):
                stack.append((vs, "indirect"))
                cur = vs
            rr -= 1
        self.store.committed_round = v.round
        for leader, k in reversed(stack):
            self.store.leader_stack.append(leader)
            self.order_leader(leader, k)
        if self.fallback is not None:
            self.fallback.on_commit()

    def creation_refs(self, r: int):
        if self.resume_refs is not None:
            return list(self.resume_refs)
        return [
            v.ref
            for v in sorted(self._delivered_round(r - 1), key=lambda v: v.creator)
        ]

    # -- fallback adapter ---------------------------------------------------------

    def fallback_vote_check(self, sb) -> tuple[str, list[VertexRef]]:
        """Certified-engine PoST validity: the wrapped vertex must be the
        creator's newest delivered vertex, or newer with locally resolving
        references (so its history is verifiable and available)."""
        v = sb.vertex
        if v.creator != sb.creator:
            return "reject:creator_mismatch", []
        if structurally_valid(v, self.quorum) is not None:
            return "reject:malformed", []
        latest = self.latest_by_creator.get(sb.creator, 0)
        if v.round < latest:
            return "reject:stale_vertex", []
        if v.round == latest:
            known = self.store.get(v.round, v.creator)
            if known is not None and known.digest == v.digest:
                return "ok", []
            return "reject:stale_vertex", []
        absent = [r for r in v.references if not self.store.has(r)]
        if absent:
            return "defer", absent
        return "ok", []

    def finalize_fallback(self, view: int, blocks: list) -> None:
        self.pending_finalize = (view, blocks)
        self._try_finalize()

    def _try_finalize(self) -> None:
        if self.pending_finalize is None:
            return
        view, blocks = self.pending_finalize
        absent: list[VertexRef] = []
        for sb in blocks:
            absent.extend(r for r in sb.vertex.references if not self.store.has(r))
        if absent:
            self.request_sync(absent, lane=simnet.FALLBACK)
            return
        self.pending_finalize = None
        for sb in blocks:
            self.referencable.add(sb.vertex.digest)
            if not self.store.has(sb.vertex.ref):
                self._insert_now(sb.vertex, lane=simnet.FALLBACK)
        r_fb = max(sb.vertex.round for sb in blocks)
        predefined = [sb for sb in blocks if sb.vertex.creator == leader_of(r_fb, self.n)]
        if predefined:
            sb_l = predefined[0]
        else:
            top = [sb for sb in blocks if sb.vertex.round == r_fb]
            sb_l = min(top, key=lambda sb: sb.vertex.digest)
            rr = r_fb - 1
            if rr > self.store.committed_round:
                union_refs = sorted(
                    {ref for sb in blocks for ref in sb.vertex.references},
                    key=lambda r: (r.round, r.creator, r.digest),
                )
                pred = next(
                    (
                        ref
                        for ref in union_refs
                        if ref.round == rr and ref.creator == leader_of(rr, self.n)
                    ),
                    None,
                )
                if pred is not None:
                    pv = self.store.resolve(pred)
                    if pv is not None:
                        self.commit_leader(pv, "fallback")
        self.leader_overrides[r_fb] = (sb_l.creator, sb_l.vertex.digest)
        self.recorder.event(
            "fallback_leader",
            self.node,
            round=r_fb,
            creator=sb_l.creator,
            predefined=bool(predefined),
        )
        if self.store.committed_round < r_fb:
            self.commit_leader(sb_l.vertex, "fallback")
        self.resume_refs = sorted(
            (sb.vertex.ref for sb in blocks), key=lambda r: (r.round, r.creator)
        )
        self.current_round = r_fb + 2
        self.resume_optimistic_path()
        self.fallback.finalized(view, r_fb)
        self.recorder.event("finalize_done", self.node, view=view, r_fb=r_fb)
        self._drain_dag_queue()
        self._maybe_create_vertex()
        self._advance_check()
