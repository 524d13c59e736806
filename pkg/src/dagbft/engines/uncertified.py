"""Uncertified-DAG engine: best-effort vertex broadcast, skip/certificate
pattern classification, direct and indirect leader decisions, decided-prefix
finalization, and deterministic synchronization of missing vertices.

Statuses are per leader slot and immutable once decided.  Equivocation is
tolerated: the first vertex received per (round, creator) is canonical,
later siblings are evidence only, and patterns are evaluated per digest.
"""

from __future__ import annotations

from dataclasses import dataclass

from .. import simnet
from ..core import MissingHistory, Vertex, VertexRef, structurally_valid
from .base import FP, OP, EngineBase, leader_of

TO_COMMIT = "to-commit"
TO_SKIP = "to-skip"


@dataclass(frozen=True)
class VertexMsg:
    vertex: Vertex

    @property
    def trace_info(self) -> str:
        v = self.vertex
        return f"vertex:{v.round}:{v.creator}:{v.digest.hex()[:8]}"


@dataclass(frozen=True)
class LeaderStatus:
    round: int
    status: str  # TO_COMMIT | TO_SKIP
    vertex: VertexRef | None
    rule: str  # direct | indirect | fallback

    @property
    def committing(self) -> bool:
        return self.status == TO_COMMIT


def classify_pattern(store, quorum: int, ref: VertexRef) -> str:
    """Classify one vertex: 'skip', 'certified', or 'neither'.

    Certified: >= quorum round r+1 vertices reference it.  Skip: >= quorum
    round r+1 vertices do not reference it.
    """
    nxt = store.round_vertices(ref.round + 1)
    referencing = sum(1 for w in nxt.values() if w.references_vertex(ref))
    not_referencing = sum(1 for w in nxt.values() if not w.references_vertex(ref))
    if referencing >= quorum:
        return "certified"
    if not_referencing >= quorum:
        return "skip"
    return "neither"


class UncertifiedEngine(EngineBase):
    allow_missing = True

    def __init__(self, node, net, params, recorder, strategy, keychain):
        super().__init__(node, net, params, recorder, strategy)
        self.keychain = keychain
        self.sign = keychain.signer_for(node)
        self.statuses: dict[int, LeaderStatus] = {}
        self.dirty: set[int] = set()
        self.blocked: set[int] = set()
        self.creation_blocked = False
        self.pending_finalize: tuple[int, list] | None = None

    # -- dissemination ------------------------------------------------------

    def handle_dag(self, src: int, msg) -> None:
        if isinstance(msg, VertexMsg):
            if msg.vertex.creator != src:
                return
            self._ingest(msg.vertex, lane=simnet.DAG)

    def ingest_synced(self, v: Vertex, lane: str) -> None:
        self._ingest(v, lane)

    def _ingest(self, v: Vertex, lane: str) -> None:
        if structurally_valid(v, self.quorum) is not None:
            return
        if self.store.has(v.ref):
            return
        if not self.accept_vertex(v, lane):
            return
        missing = [r for r in v.references if not self.store.has(r)]
        if missing:
            self.request_sync(
                missing, lane=simnet.FALLBACK if self.mode == FP else simnet.DAG
            )
        self._mark_dirty(v.round)
        if self.creation_blocked:
            self._maybe_create_vertex()
        if self.fallback is not None:
            self.fallback.revalidate_deferred()
        if self.pending_finalize is not None:
            self._try_finalize()
        self._advance_check()
        self.try_decide()

    # -- round advancement ----------------------------------------------------

    def after_genesis(self) -> None:
        self._advance_check()
        self.try_decide()

    def _advance_check(self) -> None:
        if self.mode == FP:
            return
        while True:
            r = self.current_round
            vertices = self.store.round_vertices(r)
            if len(vertices) < self.quorum:
                return
            if self.leader_vertex(r) is None and r not in self.timed_out:
                self._arm_leader_timer(r)
                return
            self.current_round = r + 1
            self._arm_leader_timer(r + 1)
            self._maybe_create_vertex()
            if self.mode == FP:
                return

    def _arm_leader_timer(self, r: int) -> None:
        if r in self.timed_out or self.leader_vertex(r) is not None:
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
        if self.is_byzantine:
            prev_leader = None if resuming else self.leader_vertex(r - 1)
            lref = prev_leader.ref if prev_leader is not None else None
            filtered = self.strategy.reference_filter(
                self.node, r, refs, lref, self.quorum, self.net.now
            )
            if filtered is None:
                self.creation_blocked = True
                return
            refs = filtered
        payload = self.txs.drain(self.params.max_payload)
        v = Vertex(r, self.node, payload, tuple(refs))
        self.created[r] = v
        self.resume_refs = None
        self.recorder.event("vertex_created", self.node, round=r)
        if self.is_byzantine and self.strategy.equivocates(self.node, r, self.net.now):
            alt = Vertex(r, self.node, payload + b"|alt", tuple(refs))
            self.recorder.event("equivocation_emitted", self.node, round=r)
            for dst in range(self.n):
                if dst == self.node:
                    continue
                variant = v if dst % 2 == 0 else alt
                self.net.send(self.node, dst, VertexMsg(variant), lane=simnet.DAG)
            self._ingest(v, lane=simnet.DAG)
        else:
            self._ingest(v, lane=simnet.DAG)
            if not self.meter.exhausted:
                self.net.broadcast(
                    self.node, VertexMsg(v), lane=simnet.DAG, include_self=False
                )
        if self.fallback is not None:
            self.fallback.on_own_vertex(r)

    # -- decision rules -----------------------------------------------------------

    def _mark_dirty(self, round_: int) -> None:
        for r in (round_ - 1, round_ - 2):
            if r > self.store.committed_round and r not in self.statuses:
                self.dirty.add(r)
        self.dirty.update(self.blocked)
        self.blocked.clear()

    def _slot_candidates(self, r: int, leader: int) -> dict[bytes, VertexRef]:
        out: dict[bytes, VertexRef] = {}
        canon = self.store.get(r, leader)
        if canon is not None:
            out[canon.digest] = canon.ref
        for w in self.store.round_vertices(r + 1).values():
            for ref in w.references:
                if ref.round == r and ref.creator == leader:
                    out.setdefault(ref.digest, ref)
        return out

    def try_direct_decide(self, r: int) -> LeaderStatus | None:
        leader = leader_of(r, self.n)
        nxt = self.store.round_vertices(r + 1)
        nn = self.store.round_vertices(r + 2)
        for digest in sorted(self._slot_candidates(r, leader)):
            ref = self._slot_candidates(r, leader)[digest]
            certificates = 0
            for u in nn.values():
                links = 0
                for wref in u.references:
                    if wref.round != r + 1:
                        continue
                    w = self.store.resolve(wref)
                    if w is not None and w.references_vertex(ref):
                        links += 1
                if links >= self.quorum:
                    certificates += 1
            if certificates >= self.quorum:
                return LeaderStatus(r, TO_COMMIT, ref, "direct")
        unlinked = sum(
            1
            for w in nxt.values()
            if not any(x.round == r and x.creator == leader for x in w.references)
        )
        if unlinked >= self.quorum:
            return LeaderStatus(r, TO_SKIP, None, "direct")
        return None

    def try_indirect_decide(self, r: int) -> LeaderStatus | None:
        leader = leader_of(r, self.n)
        for rp in range(r + 3, self.current_round + 1):
            st = self.statuses.get(rp)
            if st is None:
                return None  # anchor candidate still undecided
            if st.status == TO_SKIP:
                continue
            anchor = st.vertex
            try:
                ancestry = self.store.ancestry(anchor, floor_round=r + 1)
            except MissingHistory as exc:
                self.blocked.add(r)
                self.request_sync(
                    exc.missing,
                    lane=simnet.FALLBACK if self.mode == FP else simnet.DAG,
                )
                return None
            support: dict[bytes, int] = {}
            refs_by_digest: dict[bytes, VertexRef] = {}
            for w in ancestry.values():
                if w.round != r + 1:
                    continue
                for ref in w.references:
                    if ref.round == r and ref.creator == leader:
                        support[ref.digest] = support.get(ref.digest, 0) + 1
                        refs_by_digest.setdefault(ref.digest, ref)
            for digest in sorted(support):
                if support[digest] >= self.quorum:
                    return LeaderStatus(r, TO_COMMIT, refs_by_digest[digest], "indirect")
            return LeaderStatus(r, TO_SKIP, None, "indirect")
        return None

    def try_decide(self) -> None:
        progressed = True
        while progressed:
            progressed = False
            for r in sorted(self.dirty, reverse=True):
                self.dirty.discard(r)
                if (
                    r <= self.store.committed_round
                    or r > self.current_round
                    or r in self.statuses
                ):
                    continue
                status = self.try_direct_decide(r)
                if status is None:
                    status = self.try_indirect_decide(r)
                if status is None:
                    continue
                self.statuses[r] = status
                self.recorder.event(
                    "leader_decided",
                    self.node,
                    round=r,
                    status=status.status,
                    rule=status.rule,
                )
                for below in range(self.store.committed_round + 1, r):
                    if below not in self.statuses:
                        self.dirty.add(below)
                progressed = True
        self._finalize_prefix()

    def _finalize_prefix(self) -> None:
        while True:
            r = self.store.committed_round + 1
            if r > self.current_round:
                return
            st = self.statuses.get(r)
            if st is None:
                return
            if st.status == TO_SKIP:
                self.store.committed_round = r
                continue
            v = self.store.resolve(st.vertex)
            if v is None:
                self.request_sync(
                    [st.vertex],
                    lane=simnet.FALLBACK if self.mode == FP else simnet.DAG,
                )
                return
            try:
                self.store.leader_stack.append(v)
                self.order_leader(v, st.rule)
            except MissingHistory as exc:
                self.store.leader_stack.pop()
                self.request_sync(
                    exc.missing,
                    lane=simnet.FALLBACK if self.mode == FP else simnet.DAG,
                )
                return
            self.store.committed_round = r
            if self.fallback is not None:
                self.fallback.on_commit()

    # -- fallback adapter ------------------------------------------------------------

    def _missing_closure(self, v: Vertex) -> list[VertexRef]:
        absent: dict[bytes, VertexRef] = {}
        stack = list(v.references)
        seen: set[bytes] = set()
        while stack:
            ref = stack.pop()
            if ref.digest in seen:
                continue
            seen.add(ref.digest)
            w = self.store.by_digest.get(ref.digest)
            if w is None:
                absent[ref.digest] = ref
            elif w.digest not in self.store.ordered:
                stack.extend(w.references)
        return sorted(absent.values(), key=lambda r: (r.round, r.creator, r.digest))

    def fallback_vote_check(self, sb) -> tuple[str, list[VertexRef]]:
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
            if known is None or known.digest != v.digest:
                return "reject:stale_vertex", []
        if v.round - self.current_round <= 1:
            missing = self._missing_closure(v)
            if missing:
                return "defer", missing
        return "ok", []

    def finalize_fallback(self, view: int, blocks: list) -> None:
        self.pending_finalize = (view, blocks)
        self._try_finalize()

    def _insert_decided(self, v: Vertex) -> None:
        if self.store.has(v.ref):
            return
        if self.store.get(v.round, v.creator) is not None:
            if self.charge_vertex(v, simnet.FALLBACK) and self.store.insert_extra(v):
                self.fallback_billed.add(v.digest)
                self.fallback_billed_outstanding += v.byte_size
            return
        self.accept_vertex(v, lane=simnet.FALLBACK)

    def _try_finalize(self) -> None:
        if self.pending_finalize is None:
            return
        view, blocks = self.pending_finalize
        for sb in blocks:
            self._insert_decided(sb.vertex)
        absent: dict[bytes, VertexRef] = {}
        for sb in blocks:
            for ref in self._missing_closure(sb.vertex):
                absent[ref.digest] = ref
        if absent:
            self.request_sync(sorted(absent.values(), key=lambda r: (r.round, r.creator)),
                              lane=simnet.FALLBACK)
            return
        self.pending_finalize = None
        r_fb = max(sb.vertex.round for sb in blocks)
        predefined = [sb for sb in blocks if sb.vertex.creator == leader_of(r_fb, self.n)]
        if predefined:
            sb_l = predefined[0]
        else:
            top = [sb for sb in blocks if sb.vertex.round == r_fb]
            sb_l = min(top, key=lambda sb: sb.vertex.digest)
        self.leader_overrides[r_fb] = (sb_l.creator, sb_l.vertex.digest)
        prior = self.statuses.get(r_fb)
        if prior is not None and prior.status == TO_SKIP:
            self.recorder.event("fallback_conflict", self.node, round=r_fb)
        self.statuses[r_fb] = LeaderStatus(r_fb, TO_COMMIT, sb_l.vertex.ref, "fallback")
        self.recorder.event(
            "fallback_leader",
            self.node,
            round=r_fb,
            creator=sb_l.creator,
            predefined=bool(predefined),
        )
        for r in range(self.store.committed_round + 1, r_fb):
            if r not in self.statuses:
                self.dirty.add(r)
        self.resume_refs = sorted(
            (sb.vertex.ref for sb in blocks), key=lambda r: (r.round, r.creator)
        )
        self.current_round = r_fb + 2
        self.resume_optimistic_path()
        self.fallback.finalized(view, r_fb)
        self.recorder.event("finalize_done", self.node, view=view, r_fb=r_fb)
        self.try_decide()
        self._drain_dag_queue()
        self._maybe_create_vertex()
        self._advance_check()
