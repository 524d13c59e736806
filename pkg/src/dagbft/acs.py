"""Agreement on a common subset, one instance per fallback view.

Reference composition: n reliable-broadcast slots carrying counter-signed
fallback proposals, plus n coin-based binary agreements deciding which slots
enter the output set V.  Contract: |V| >= n-f, V includes proposals from at
least n-2f correct proposers, all correct nodes decide the identical V, and
every correct node decides if all correct nodes propose.

The binary agreement is the round-based bv-broadcast/aux protocol driven by
a common coin.  The coin is a seeded hash, identical at every node; with a
non-adaptive (trace-deterministic) adversary this is a perfect coin.  A node
that decided keeps participating in later rounds so that thresholds keep
being met for stragglers; all instances of a view halt together when the
view's output is decided locally.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from . import simnet
from .rbc import RbcHost, RbcInit, RbcEcho, RbcReady

ABA_MSG_BYTES = 48
RBC_CTRL_BYTES = 48


class CommonCoin:
    def __init__(self, seed: int):
        self.seed = seed

    def value(self, view: int, slot: int, round_: int) -> int:
        h = hashlib.sha256(b"coin|%d|%d|%d|%d" % (self.seed, view, slot, round_))
        return h.digest()[0] & 1


@dataclass(frozen=True)
class AbaBval:
    view: int
    slot: int
    round: int
    value: int

    @property
    def trace_info(self) -> str:
        return f"aba_bval:{self.view}:{self.slot}:{self.round}:{self.value}"


@dataclass(frozen=True)
class AbaAux:
    view: int
    slot: int
    round: int
    value: int

    @property
    def trace_info(self) -> str:
        return f"aba_aux:{self.view}:{self.slot}:{self.round}:{self.value}"


@dataclass
class _AbaRound:
    bval_sent: set[int] = field(default_factory=set)
    bin_values: set[int] = field(default_factory=set)
    bval_from: dict[int, set[int]] = field(default_factory=dict)
    aux_sent: bool = False
    aux_from: dict[int, int] = field(default_factory=dict)
    advanced: bool = False


class BinaryAgreement:
    """Single-slot binary agreement: agreement, validity, coin-based termination."""

    def __init__(self, me: int, n: int, f: int, view: int, slot: int, coin, send_fn, on_decide):
        self.me = me
        self.n = n
        self.f = f
        self.quorum = 2 * f + 1
        self.view = view
        self.slot = slot
        self.coin = coin
        self.send = send_fn  # broadcast to all nodes including self
        self.on_decide = on_decide
        self.est: int | None = None
        self.round = 0
        self.rounds: dict[int, _AbaRound] = {}
        self.decided: int | None = None
        self.halted = False

    def _round(self, r: int) -> _AbaRound:
        st = self.rounds.get(r)
        if st is None:
            st = self.rounds[r] = _AbaRound()
        return st

    def input(self, value: int) -> None:
        if self.est is not None or self.halted:
            return
        self.est = value
        self.round = 1
        self._send_bval(1, value)

    def _send_bval(self, r: int, v: int) -> None:
        st = self._round(r)
        if v in st.bval_sent:
            return
        st.bval_sent.add(v)
        self.send(AbaBval(self.view, self.slot, r, v))

    def handle(self, src: int, msg) -> None:
        if self.halted:
            return
        if isinstance(msg, AbaBval):
            st = self._round(msg.round)
            st.bval_from.setdefault(msg.value, set()).add(src)
            support = len(st.bval_from[msg.value])
            if support >= self.f + 1 and self.est is not None:
                self._send_bval(msg.round, msg.value)
            if support >= self.quorum:
                st.bin_values.add(msg.value)
            self._try_round(msg.round)
        elif isinstance(msg, AbaAux):
            st = self._round(msg.round)
            st.aux_from.setdefault(src, msg.value)
            self._try_round(msg.round)

    def _try_round(self, r: int) -> None:
        if self.est is None or r != self.round or self.halted:
            return
        st = self._round(r)
        if not st.bin_values or st.advanced:
            return
        if not st.aux_sent:
            st.aux_sent = True
            v = self.est if self.est in st.bin_values else sorted(st.bin_values)[0]
            self.send(AbaAux(self.view, self.slot, r, v))
        good = {src: v for src, v in st.aux_from.items() if v in st.bin_values}
        if len(good) < self.quorum:
            return
        vals = set(good.values())
        c = self.coin.value(self.view, self.slot, r)
        if len(vals) == 1:
            v = vals.pop()
            self.est = v
            if v == c and self.decided is None:
                self.decided = v
                self.on_decide(self.slot, v)
        else:
            self.est = c
        st.advanced = True
        self.round = r + 1
        self._send_bval(self.round, self.est)
        self._try_round(self.round)

    def halt(self) -> None:
        self.halted = True


@dataclass
class _ViewState:
    rbc: RbcHost
    abas: dict[int, BinaryAgreement]
    proposals: dict[int, object] = field(default_factory=dict)
    inputs: set[int] = field(default_factory=set)
    decisions: dict[int, int] = field(default_factory=dict)
    invalid_slots: set[int] = field(default_factory=set)
    done: bool = False


class AcsHost:
    """Per-node host running at most one common-subset instance per view."""

    def __init__(self, me: int, net: simnet.Simulator, n: int, f: int, keychain, coin,
                 proposal_digest, on_decide, charge=None):
        self.me = me
        self.net = net
        self.n = n
        self.f = f
        self.quorum = 2 * f + 1
        self.keychain = keychain
        self.coin = coin
        self.proposal_digest = proposal_digest  # callable(proposal) -> bytes
        self.on_decide = on_decide  # callable(view, list_of_proposals)
        self.charge = charge or (lambda nbytes: True)
        self.views: dict[int, _ViewState] = {}
        self.rejected_proposals = 0

    # -- wiring ---------------------------------------------------------------

    def _view(self, view: int) -> _ViewState:
        st = self.views.get(view)
        if st is not None:
            return st
        rbc = RbcHost(
            self.me,
            self.net,
            self.n,
            self.f,
            on_deliver=lambda inst, payload: self._on_slot(inst[0], inst[1], payload),
            lane=simnet.FALLBACK,
        )
        abas = {
            slot: BinaryAgreement(
                self.me, self.n, self.f, view, slot, self.coin,
                send_fn=lambda msg: self.net.broadcast(self.me, msg, lane=simnet.FALLBACK),
                on_decide=lambda slot_, value, view_=view: self._on_aba(view_, slot_, value),
            )
            for slot in range(self.n)
        }
        st = self.views[view] = _ViewState(rbc=rbc, abas=abas)
        return st

    def valid_proposal(self, proposal) -> bool:
        cert = getattr(proposal, "cert", None)
        if cert is None:
            return False
        return self.keychain.verify_certificate(
            cert, self.proposal_digest(proposal), self.quorum
        )

    def propose(self, view: int, proposal) -> bool:
        """RBC-broadcast a counter-signed proposal into this node's slot."""
        if not self.valid_proposal(proposal):
            self.rejected_proposals += 1
            return False
        st = self._view(view)
        return st.rbc.broadcast((view, self.me), proposal)

    def handle(self, src: int, msg) -> None:
        if isinstance(msg, (RbcInit, RbcEcho, RbcReady)):
            view = msg.instance[0]
            st = self._view(view)
            if st.done:
                return
            self.charge(RBC_CTRL_BYTES)
            st.rbc.handle(src, msg)
        elif isinstance(msg, (AbaBval, AbaAux)):
            st = self._view(msg.view)
            if st.done:
                return
            self.charge(ABA_MSG_BYTES)
            aba = st.abas[msg.slot]
            aba.handle(src, msg)
            self._check_done(msg.view)

    # -- protocol steps ---------------------------------------------------------

    def _on_slot(self, view: int, slot: int, proposal) -> None:
        st = self._view(view)
        if st.done:
            return
        if not self.valid_proposal(proposal) or proposal.creator != slot:
            st.invalid_slots.add(slot)
            self.rejected_proposals += 1
            return
        if slot not in st.proposals:
            st.proposals[slot] = proposal
            self.charge(getattr(proposal, "byte_size", 0))
        if slot not in st.inputs:
            st.inputs.add(slot)
            st.abas[slot].input(1)
        self._check_done(view)

    def _on_aba(self, view: int, slot: int, value: int) -> None:
        st = self._view(view)
        st.decisions[slot] = value
        ones = sum(1 for v in st.decisions.values() if v == 1)
        if ones >= self.n - self.f:
            for s, aba in st.abas.items():
                if s not in st.inputs:
                    st.inputs.add(s)
                    aba.input(0)
        self._check_done(view)

    def _check_done(self, view: int) -> None:
        st = self._view(view)
        if st.done or len(st.decisions) < self.n:
            return
        accepted = [s for s in range(self.n) if st.decisions.get(s) == 1]
        if any(s not in st.proposals for s in accepted):
            return  # totality will deliver the remaining payloads
        st.done = True
        for aba in st.abas.values():
            aba.halt()
        self.on_decide(view, [st.proposals[s] for s in accepted])
