"""Per-node DAG store with path/causal-history queries and equivocation tracking.

One store per simulated node; single writer.  Vertices are immutable after
insertion.  The first vertex accepted for a (round, creator) slot is the
canonical one; later conflicting vertices are kept only as evidence and the
creator is flagged as an equivocator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .vertex import GENESIS_ROUND, Vertex, VertexRef

ACCEPTED = "accepted"
DUPLICATE = "duplicate"
EQUIVOCATION = "equivocation"
INSUFFICIENT_REFERENCES = "insufficient_references"
MALFORMED = "malformed"


@dataclass(frozen=True)
class InsertResult:
    status: str

    @property
    def accepted(self) -> bool:
        return self.status == ACCEPTED


class MissingHistory(Exception):
    """Causal history cannot be produced; .missing lists the absent refs."""

    def __init__(self, missing: list[VertexRef]):
        super().__init__(f"{len(missing)} ancestors missing")
        self.missing = missing


def structurally_valid(v: Vertex, quorum: int) -> str | None:
    """Return a rejection reason, or None if the vertex shape is acceptable.

    Normal vertices reference >= quorum round r-1 vertices.  The first vertex
    created after a fallback sits two rounds above its highest reference (it
    references the decided fallback blocks), which is the only other shape a
    correct node produces.
    """
    if v.round == GENESIS_ROUND:
        return None if not v.references else MALFORMED
    if len({(r.round, r.creator) for r in v.references}) != len(v.references):
        return MALFORMED
    if any(r.round >= v.round for r in v.references):
        return MALFORMED
    if len(v.references) < quorum:
        return INSUFFICIENT_REFERENCES
    top = v.max_reference_round()
    if top not in (v.round - 1, v.round - 2):
        return MALFORMED
    return None


@dataclass
class DagStore:
    n: int
    f: int
    allow_missing: bool = False  # uncertified engines store vertices before parents
    by_round: dict[int, dict[int, Vertex]] = field(default_factory=dict)
    by_digest: dict[bytes, Vertex] = field(default_factory=dict)
    equivocations: dict[tuple[int, int], list[Vertex]] = field(default_factory=dict)
    flagged: set[int] = field(default_factory=set)
    ordered: set[bytes] = field(default_factory=set)
    missing: set[VertexRef] = field(default_factory=set)
    committed_round: int = 0
    leader_stack: list[Vertex] = field(default_factory=list)
    uncommitted_bytes: int = 0

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1

    # -- insertion --------------------------------------------------------

    def insert(self, v: Vertex) -> InsertResult:
        reason = structurally_valid(v, self.quorum)
        if reason is not None:
            return InsertResult(reason)
        if v.digest in self.by_digest:
            return InsertResult(DUPLICATE)
        slot = self.by_round.setdefault(v.round, {})
        prior = slot.get(v.creator)
        if prior is not None:
            self.equivocations.setdefault((v.round, v.creator), []).append(v)
            self.flagged.add(v.creator)
            return InsertResult(EQUIVOCATION)
        if not self.allow_missing:
            absent = [r for r in v.references if r.digest not in self.by_digest]
            if absent:
                raise MissingHistory(absent)
        slot[v.creator] = v
        self.by_digest[v.digest] = v
        self.uncommitted_bytes += v.byte_size
        if self.allow_missing:
            self.missing.discard(v.ref)
            for r in v.references:
                if r.digest not in self.by_digest:
                    self.missing.add(r)
        return InsertResult(ACCEPTED)

    def insert_extra(self, v: Vertex) -> bool:
        """Store a vertex by digest without claiming the (round, creator) slot.

        Used for a fallback-decided block when a conflicting sibling was
        received first: the decided block must be resolvable and orderable,
        but pattern evaluation keeps using the canonical slot.
        """
        if v.digest in self.by_digest:
            return False
        self.by_digest[v.digest] = v
        self.uncommitted_bytes += v.byte_size
        if self.allow_missing:
            self.missing.discard(v.ref)
            for r in v.references:
                if r.digest not in self.by_digest:
                    self.missing.add(r)
        return True

    # -- lookups ----------------------------------------------------------

    def get(self, round_: int, creator: int) -> Vertex | None:
        return self.by_round.get(round_, {}).get(creator)

    def resolve(self, ref: VertexRef) -> Vertex | None:
        return self.by_digest.get(ref.digest)

    def has(self, ref: VertexRef) -> bool:
        return ref.digest in self.by_digest

    def round_vertices(self, round_: int) -> dict[int, Vertex]:
        return self.by_round.get(round_, {})

    def round_count(self, round_: int) -> int:
        return len(self.by_round.get(round_, {}))

    def max_round(self) -> int:
        return max(self.by_round, default=0)

    # -- graph queries ----------------------------------------------------

    def path_exists(self, frm: VertexRef, to: VertexRef) -> bool:
        """True iff a directed reference chain frm -> ... -> to is stored locally.

        Unknown vertices simply make the answer False (absence of evidence).
        """
        if frm.digest == to.digest:
            return self.has(frm)
        start = self.resolve(frm)
        if start is None or not self.has(to):
            return False
        stack = [start]
        seen = {frm.digest}
        while stack:
            v = stack.pop()
            for r in v.references:
                if r.round < to.round or r.digest in seen:
                    continue
                if r.digest == to.digest:
                    return True
                seen.add(r.digest)
                child = self.by_digest.get(r.digest)
                if child is not None:
                    stack.append(child)
        return False

    def ancestry(self, ref: VertexRef, floor_round: int = 0) -> dict[bytes, Vertex]:
        """Ancestors of ref (including itself) with round >= floor_round, by digest.

        Raises MissingHistory if a reachable reference at or above the floor
        is unresolved locally; references below the floor are not followed.
        """
        root = self.resolve(ref)
        if root is None:
            raise MissingHistory([ref])
        out: dict[bytes, Vertex] = {}
        absent: list[VertexRef] = []
        stack = [root]
        seen = {ref.digest}
        while stack:
            v = stack.pop()
            out[v.digest] = v
            for r in v.references:
                if r.round < floor_round or r.digest in seen:
                    continue
                seen.add(r.digest)
                child = self.by_digest.get(r.digest)
                if child is None:
                    absent.append(r)
                else:
                    stack.append(child)
        if absent:
            raise MissingHistory(sorted(absent, key=lambda r: (r.round, r.creator)))
        return out

    def causal_history(self, ref: VertexRef) -> list[Vertex]:
        """Deterministic order of ref's not-yet-ordered ancestors, then ref.

        Sorted by (round, creator): the simplest total order that is also a
        valid topological order, since references only point to lower rounds.
        Raises MissingHistory when an unordered ancestor is absent.
        """
        root = self.resolve(ref)
        if root is None:
            raise MissingHistory([ref])
        if root.digest in self.ordered:
            return []
        out: list[Vertex] = []
        absent: list[VertexRef] = []
        stack = [root]
        seen = {ref.digest}
        while stack:
            v = stack.pop()
            out.append(v)
            for r in v.references:
                if r.digest in seen or r.digest in self.ordered:
                    continue
                seen.add(r.digest)
                child = self.by_digest.get(r.digest)
                if child is None:
                    absent.append(r)
                else:
                    stack.append(child)
        if absent:
            raise MissingHistory(sorted(absent, key=lambda r: (r.round, r.creator)))
        out.sort(key=lambda v: (v.round, v.creator))
        return out

    def mark_ordered(self, vertices: list[Vertex]) -> int:
        """Record vertices as ordered; returns the bytes they release."""
        freed = 0
        for v in vertices:
            if v.digest not in self.ordered:
                self.ordered.add(v.digest)
                freed += v.byte_size
        self.uncommitted_bytes -= freed
        return freed
