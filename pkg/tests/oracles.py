"""Independent oracles used by the test suite.

These deliberately recompute results from scratch (sets, brute-force walks)
and share no code path with the engines they check.
"""

from __future__ import annotations

import itertools
import random

from dagbft.core import DagStore, Vertex, VertexRef, genesis_vertices


# -- brute-force status oracle for the uncertified engine --------------------


def _referencing(store: DagStore, r_next: int, target: VertexRef) -> set[int]:
    """Creators of round r_next canonical vertices that reference target."""
    return {
        c
        for c, w in store.round_vertices(r_next).items()
        if any(x.digest == target.digest for x in w.references)
    }


def _slot_refs(store: DagStore, r: int, leader: int) -> dict[bytes, VertexRef]:
    out: dict[bytes, VertexRef] = {}
    v = store.get(r, leader)
    if v is not None:
        out[v.digest] = v.ref
    for w in store.round_vertices(r + 1).values():
        for x in w.references:
            if x.round == r and x.creator == leader:
                out.setdefault(x.digest, x)
    return out


def _ancestor_digests(store: DagStore, ref: VertexRef, floor: int) -> set[bytes]:
    seen: set[bytes] = set()
    stack = [ref]
    while stack:
        cur = stack.pop()
        if cur.digest in seen:
            continue
        seen.add(cur.digest)
        v = store.by_digest.get(cur.digest)
        if v is None:
            continue
        for x in v.references:
            if x.round >= floor:
                stack.append(x)
    return seen


def oracle_statuses(
    store: DagStore, n: int, f: int, up_to: int, leader_of=None
) -> dict[int, tuple[str, bytes | None]]:
    """Re-derive every leader-slot decision from the full DAG.

    Returns round -> ("to-commit", digest) | ("to-skip", None); undecided
    slots are absent.  Evaluated top-down so indirect decisions can anchor
    on already-evaluated higher slots.
    """
    if leader_of is None:
        leader_of = lambda r: r % n
    quorum = 2 * f + 1
    statuses: dict[int, tuple[str, bytes | None]] = {}

    def direct(r: int) -> tuple[str, bytes | None] | None:
        leader = leader_of(r)
        for digest, ref in sorted(_slot_refs(store, r, leader).items()):
            voters = _referencing(store, r + 1, ref)
            certs = 0
            for u in store.round_vertices(r + 2).values():
                linked = {
                    x.creator
                    for x in u.references
                    if x.round == r + 1
                    and x.creator in voters
                    and store.by_digest.get(x.digest) is not None
                    and any(
                        y.digest == ref.digest
                        for y in store.by_digest[x.digest].references
                    )
                }
                if len(linked) >= quorum:
                    certs += 1
            if certs >= quorum:
                return ("to-commit", digest)
        silent = {
            c
            for c, w in store.round_vertices(r + 1).items()
            if not any(x.round == r and x.creator == leader for x in w.references)
        }
        if len(silent) >= quorum:
            return ("to-skip", None)
        return None

    def indirect(r: int) -> tuple[str, bytes | None] | None:
        leader = leader_of(r)
        for rp in range(r + 3, up_to + 1):
            st = statuses.get(rp)
            if st is None:
                return None  # undecided anchor blocks the scan
            if st[0] == "to-skip":
                continue
            anchor_digest = st[1]
            anchor_v = store.by_digest[anchor_digest]
            ancestors = _ancestor_digests(store, anchor_v.ref, floor=r + 1)
            for digest, ref in sorted(_slot_refs(store, r, leader).items()):
                support = {
                    w.creator
                    for w in store.round_vertices(r + 1).values()
                    if w.digest in ancestors
                    and any(x.digest == digest for x in w.references)
                }
                if len(support) >= quorum:
                    return ("to-commit", digest)
            return ("to-skip", None)
        return None

    evaluated: set[int] = set()
    for r in range(up_to, 0, -1):
        st = direct(r)
        if st is None:
            st = indirect(r)
        evaluated.add(r)
        if st is not None:
            statuses[r] = st
    return statuses


# -- replay oracle for the certified engine -----------------------------------


def replay_ordered(store: DagStore, roots: list[tuple[int, bytes]], leader_of) -> list[bytes]:
    """Recompute the ordered output from commit roots over the final DAG.

    roots: the (round, digest) of each direct or fallback commit, in the
    order the node performed them.  The indirect walk and the history
    ordering are re-derived here with independent code.
    """
    ordered: list[bytes] = []
    placed: set[bytes] = set()
    committed_round = 0

    def paths_to(frm: Vertex, to: Vertex) -> bool:
        goal = to.digest
        stack, seen = [frm], set()
        while stack:
            v = stack.pop()
            if v.digest == goal:
                return True
            for x in v.references:
                if x.digest in seen or x.round < to.round:
                    continue
                seen.add(x.digest)
                child = store.by_digest.get(x.digest)
                if child is not None:
                    stack.append(child)
        return False

    def order_history(leader: Vertex) -> None:
        block: list[Vertex] = []
        stack, seen = [leader], {leader.digest}
        while stack:
            v = stack.pop()
            if v.digest in placed:
                continue
            block.append(v)
            for x in v.references:
                if x.digest in seen or x.digest in placed:
                    continue
                seen.add(x.digest)
                child = store.by_digest.get(x.digest)
                if child is not None:
                    stack.append(child)
        for v in sorted(block, key=lambda v: (v.round, v.creator)):
            ordered.append(v.digest)
            placed.add(v.digest)

    for round_, digest in roots:
        if round_ <= committed_round:
            continue
        root = store.by_digest[digest]
        chain = [root]
        cur = root
        for rr in range(round_ - 1, committed_round, -1):
            lv = leader_of(rr)
            if lv is None:
                continue
            if paths_to(cur, lv):
                chain.append(lv)
                cur = lv
        committed_round = round_
        for leader in reversed(chain):
            order_history(leader)
    return ordered


def commit_roots(result, node: int) -> list[tuple[int, bytes]]:
    """Extract the node's direct/fallback commit roots from the run events."""
    roots = []
    for ev in result.recorder.events:
        if ev.node != node or ev.kind != "leader_committed":
            continue
        if ev.data["kind"] in ("direct", "fallback"):
            roots.append((ev.data["round"], ev.data["digest"]))
    return roots


# -- random DAG generation for oracle-equivalence sweeps -----------------------


def random_dag(seed: int, n: int = 4, f: int = 1, rounds: int = 12):
    """A structurally valid uncertified DAG with random reference patterns,
    occasional missing leaders and thin rounds; no equivocation."""
    rng = random.Random(seed)
    quorum = 2 * f + 1
    store = DagStore(n, f, allow_missing=True)
    vertices: list[Vertex] = []
    prev = []
    for g in genesis_vertices(n):
        store.insert(g)
        vertices.append(g)
        prev.append(g)
    for r in range(2, rounds + 1):
        creators = list(range(n))
        rng.shuffle(creators)
        k = rng.randint(quorum, n)
        chosen = sorted(creators[:k])
        if rng.random() < 0.35 and (r % n) in chosen and len(chosen) > quorum:
            chosen.remove(r % n)  # leader skips this round
        cur = []
        for c in chosen:
            n_refs = rng.randint(quorum, len(prev))
            refs = tuple(v.ref for v in rng.sample(prev, n_refs))
            v = Vertex(r, c, b"%d|%d" % (r, c), refs)
            store.insert(v)
            vertices.append(v)
            cur.append(v)
        prev = cur
    return store, vertices


def all_topological_orders(vertices: list[Vertex]) -> list[list[bytes]]:
    """Brute-force enumeration; only for tiny DAGs."""
    out = []
    digests = [v.digest for v in vertices]
    deps = {
        v.digest: {r.digest for r in v.references if r.digest in set(digests)}
        for v in vertices
    }
    for perm in itertools.permutations(digests):
        seen = set()
        ok = True
        for d in perm:
            if not deps[d] <= seen:
                ok = False
                break
            seen.add(d)
        if ok:
            out.append(list(perm))
    return out
