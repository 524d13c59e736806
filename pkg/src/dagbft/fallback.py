"""Bounded-memory fallback: stuck-proof blocks, trigger conditions, and the
per-node manager that runs the propose/vote scheme and one common-subset
instance per fallback view.

A node switches to the fallback path when its uncommitted bytes exceed the
configured limit, when it has seen a current-view stuck-proof block and not
committed anything for the stuck timeout, or (test convenience, mirroring
a fixed-round trigger) when its own vertex round reaches a configured
round.  The manager owns the view counter r_fb: views are the round numbers
decided by past instances, strictly increasing, identical at all correct
nodes.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, replace

from . import simnet
from .core import QuorumCertificate, Vertex

POST_HEADER_BYTES = 4 + 4 + 4


def post_digest(view: int, creator: int, vertex: Vertex) -> bytes:
    head = struct.pack("<II", view, creator)
    return hashlib.sha256(b"post|" + head + vertex.digest).digest()


@dataclass(frozen=True, eq=False)
class PoSTBlock:
    """Proof-of-stuck: the creator's fallback view and its last created vertex."""

    view: int
    vertex: Vertex
    creator: int
    cert: QuorumCertificate | None = None

    @property
    def digest(self) -> bytes:
        return post_digest(self.view, self.creator, self.vertex)

    @property
    def byte_size(self) -> int:
        size = POST_HEADER_BYTES + self.vertex.byte_size
        if self.cert is not None:
            size += self.cert.wire_size
        return size

    def with_cert(self, cert: QuorumCertificate) -> "PoSTBlock":
        return replace(self, cert=cert)

    @property
    def trace_info(self) -> str:
        return f"post:{self.view}:{self.creator}:r{self.vertex.round}"


@dataclass(frozen=True)
class PostMsg:
    block: PoSTBlock

    @property
    def trace_info(self) -> str:
        return self.block.trace_info


@dataclass(frozen=True)
class PostSig:
    view: int
    creator: int  # whose block is being certified
    signature: object

    @property
    def trace_info(self) -> str:
        return f"post_sig:{self.view}:{self.creator}:{self.signature.signer}"


@dataclass
class FallbackConfig:
    enabled: bool = True
    limit_bytes: int = 4 * 1024 * 1024  # production suggestion is tens of GB
    t_st: int = 5000  # simulated ms; production suggestion is on the order of an hour
    trigger_round: int | None = None


class FallbackManager:
    def __init__(self, engine, cfg: FallbackConfig, acs_host, keychain, net, recorder, strategy):
        self.engine = engine
        self.cfg = cfg
        self.acs = acs_host
        self.keychain = keychain
        self.net = net
        self.recorder = recorder
        self.strategy = strategy
        self.node = engine.node
        self.quorum = engine.quorum
        self.r_fb = 0
        self.my_post: PoSTBlock | None = None
        self.my_sigs: dict[int, object] = {}
        self.proposed = False
        self.first_post: dict[tuple[int, int], bytes] = {}
        self.signed: set[tuple[int, int]] = set()
        self.deferred: list[PoSTBlock] = []
        self.future_posts: list[PoSTBlock] = []
        self.pending_decisions: dict[int, list] = {}
        self.post_seen_at: int | None = None
        self.last_commit_at = 0
        self._t_handle: int | None = None
        self._round_trigger_used = False
        # byte-limit grace after a finalize: the decided backlog drains over
        # the next couple of rounds, and re-triggering before the node even
        # proposed its resume vertex would livelock at desk-scale limits
        self.cooldown_until = 0
        self.invalid_posts = 0
        self.decided: list[tuple[int, int, int]] = []  # (view, r_fb, |V|)

    # -- trigger conditions -----------------------------------------------------

    def _may_trigger(self) -> bool:
        if not self.cfg.enabled or self.engine.mode != "OP":
            return False
        if self.engine.is_byzantine and not self.strategy.joins_fallback(self.node):
            return False
        return True

    def on_uncommitted_bytes(self, nbytes: int) -> None:
        if self.net.now < self.cooldown_until:
            return
        if self._may_trigger() and nbytes > self.cfg.limit_bytes:
            self.trigger("byte_limit")

    def on_own_vertex(self, round_: int) -> None:
        if (
            self.cfg.trigger_round is not None
            and not self._round_trigger_used
            and round_ >= self.cfg.trigger_round
            and self._may_trigger()
        ):
            self._round_trigger_used = True
            self.trigger("round_trigger")

    def on_commit(self) -> None:
        self.last_commit_at = self.net.now
        self._rearm()

    def _post_seen(self) -> None:
        if self.post_seen_at is None:
            self.post_seen_at = self.net.now
            self._rearm()

    def _rearm(self) -> None:
        if self._t_handle is not None:
            self.net.cancel(self._t_handle)
            self._t_handle = None
        if self.post_seen_at is None or self.engine.mode != "OP":
            return
        deadline = max(self.post_seen_at, self.last_commit_at) + self.cfg.t_st
        self._t_handle = self.net.schedule(max(0, deadline - self.net.now), self._fire)

    def _fire(self) -> None:
        self._t_handle = None
        if self.post_seen_at is None or not self._may_trigger():
            return
        if self.net.now - max(self.post_seen_at, self.last_commit_at) >= self.cfg.t_st:
            self.trigger("stuck_timeout")
        else:
            self._rearm()

    def trigger(self, reason: str) -> None:
        if not self._may_trigger():
            return
        self.engine.enter_fallback_path()
        if self._t_handle is not None:
            self.net.cancel(self._t_handle)
            self._t_handle = None
        round_, vertex = self.engine.last_created()
        sb = PoSTBlock(self.r_fb, vertex, self.node)
        if self.engine.is_byzantine:
            fake = self.strategy.make_post(self.node, self.r_fb, vertex)
            if fake is not None:
                sb = fake
        self.my_post = sb
        self.my_sigs = {}
        self.proposed = False
        self.recorder.event(
            "fallback_triggered", self.node, reason=reason, view=self.r_fb, round=round_
        )
        self.net.trace_event("fallback", self.node, -1, f"{reason}:{self.r_fb}")
        self.net.broadcast(self.node, PostMsg(sb), lane=simnet.FALLBACK, include_self=False)
        self._accept_own_signature()

    def _accept_own_signature(self) -> None:
        sig = self.engine.sign(self.my_post.digest)
        self.my_sigs[self.node] = sig
        self._maybe_propose()

    # -- message handling ----------------------------------------------------------

    def handle(self, src: int, msg) -> None:
        if isinstance(msg, PostMsg):
            self._on_post(src, msg.block)
        elif isinstance(msg, PostSig):
            self._on_post_sig(src, msg)
        else:
            self.acs.handle(src, msg)

    def _on_post(self, src: int, sb: PoSTBlock) -> None:
        if sb.view > self.r_fb:
            self.future_posts.append(sb)
            return
        if sb.view < self.r_fb:
            self.invalid_posts += 1
            self.recorder.event("post_rejected", self.node, reason="view_mismatch", src=src)
            return
        key = (sb.view, sb.creator)
        first = self.first_post.get(key)
        if first is not None:
            if first != sb.digest:
                self.invalid_posts += 1
                self.recorder.event("post_rejected", self.node, reason="duplicate", src=src)
            return
        if not self.net.meters[self.node].charge(sb.byte_size, simnet.FALLBACK):
            return
        self.first_post[key] = sb.digest
        self._post_seen()
        self._consider(sb)

    def _consider(self, sb: PoSTBlock) -> None:
        verdict, missing = self.engine.fallback_vote_check(sb)
        if verdict == "ok":
            self._sign_and_send(sb)
        elif verdict == "defer":
            self.deferred.append(sb)
            if missing:
                self.engine.request_sync(missing, lane=simnet.FALLBACK)
        else:
            self.invalid_posts += 1
            self.recorder.event(
                "post_rejected", self.node, reason=verdict.split(":", 1)[1], src=sb.creator
            )

    def revalidate_deferred(self) -> None:
        if not self.deferred:
            return
        still = []
        for sb in self.deferred:
            if sb.view != self.r_fb:
                continue
            verdict, missing = self.engine.fallback_vote_check(sb)
            if verdict == "ok":
                self._sign_and_send(sb)
            elif verdict == "defer":
                still.append(sb)
            else:
                self.invalid_posts += 1
                self.recorder.event(
                    "post_rejected", self.node, reason=verdict.split(":", 1)[1],
                    src=sb.creator,
                )
        self.deferred = still

    def _sign_and_send(self, sb: PoSTBlock) -> None:
        key = (sb.view, sb.creator)
        if key in self.signed:
            return
        if self.engine.is_byzantine and not self.strategy.signs_posts(self.node):
            return
        self.signed.add(key)
        sig = self.engine.sign(sb.digest)
        self.recorder.event("post_signed", self.node, creator=sb.creator, view=sb.view)
        if sb.creator == self.node:
            self.my_sigs[self.node] = sig
            self._maybe_propose()
        else:
            self.net.send(
                self.node, sb.creator, PostSig(sb.view, sb.creator, sig),
                lane=simnet.FALLBACK,
            )

    def _on_post_sig(self, src: int, msg: PostSig) -> None:
        if self.my_post is None or msg.creator != self.node or msg.view != self.my_post.view:
            return
        sig = msg.signature
        if sig.signer != src or sig.digest != self.my_post.digest:
            return
        if not self.keychain.verify(sig):
            return
        self.my_sigs[src] = sig
        self._maybe_propose()

    def _maybe_propose(self) -> None:
        if self.proposed or self.my_post is None or len(self.my_sigs) < self.quorum:
            return
        cert = self.keychain.form_certificate(list(self.my_sigs.values()), self.quorum)
        self.my_post = self.my_post.with_cert(cert)
        self.proposed = True
        self.recorder.event(
            "post_certified", self.node, view=self.my_post.view, signers=len(self.my_sigs)
        )
        self.acs.propose(self.my_post.view, self.my_post)

    # -- decision ---------------------------------------------------------------------

    def on_acs_decide(self, view: int, blocks: list) -> None:
        if view != self.r_fb:
            self.pending_decisions.setdefault(view, blocks)
            return
        digest = hashlib.sha256(b"".join(sorted(sb.digest for sb in blocks))).hexdigest()
        self.recorder.event(
            "acs_decision_received",
            self.node,
            view=view,
            size=len(blocks),
            creators=tuple(sorted(sb.creator for sb in blocks)),
            vhash=digest[:16],
        )
        self.engine.finalize_fallback(view, blocks)

    def finalized(self, view: int, new_r_fb: int) -> None:
        """Engine completed finalize for `view`; advance to the next view."""
        meter = self.net.meters[self.node]
        footprint = meter.fallback_peak
        self.recorder.event(
            "acs_decided",
            self.node,
            view=view,
            r_fb=new_r_fb,
            footprint=footprint,
        )
        self.decided.append((view, new_r_fb, footprint))
        meter.reset_fallback_instance()
        meter.fallback_peak = meter.reserve_used
        self.r_fb = new_r_fb
        self.my_post = None
        self.my_sigs = {}
        self.proposed = False
        self.post_seen_at = None
        self.last_commit_at = self.net.now
        self.cooldown_until = self.net.now + self.cfg.t_st
        self.deferred = [sb for sb in self.deferred if sb.view >= self.r_fb]
        self._rearm()
        carried = [sb for sb in self.future_posts if sb.view == self.r_fb]
        self.future_posts = [sb for sb in self.future_posts if sb.view > self.r_fb]
        for sb in carried:
            key = (sb.view, sb.creator)
            if key not in self.first_post:
                self.first_post[key] = sb.digest
                self._post_seen()
                self._consider(sb)
        stash = self.pending_decisions.pop(self.r_fb, None)
        if stash is not None:
            self.on_acs_decide(self.r_fb, stash)
