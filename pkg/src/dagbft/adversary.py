"""Pluggable Byzantine strategies and network-attack plans.

A strategy is a pure, trace-deterministic function of (event, parameters):
engines consult the hooks only for nodes in the strategy's Byzantine set.
Controlled nodes sign with their own keys only; forging is not expressible
through this interface.  The DDoS plan is returned to the harness, which
drives the network-level suppression window.
"""

from __future__ import annotations

import hashlib

from .core import Vertex, VertexRef
from .fallback import PoSTBlock


class Strategy:
    """Honest baseline; hooks are overridden by attack strategies."""

    name = "honest"

    def __init__(self, params: dict | None = None, seed: int = 0, n: int = 4, f: int = 1):
        self.params = dict(params or {})
        self.seed = seed
        self.n = n
        self.f = f

    def byzantine(self, n: int, f: int) -> frozenset[int]:
        return frozenset()

    def crashed(self, n: int, f: int) -> frozenset[int]:
        return frozenset()

    def active(self, now: int) -> bool:
        return now >= int(self.params.get("attack_start", 0))

    # hooks consulted for Byzantine nodes only
    def skip_own_vertex(self, node: int, round_: int, is_leader: bool, now: int) -> bool:
        return False

    def reference_filter(self, node, round_, refs, leader_ref, quorum, now):
        return refs

    def withhold_rbc_vote(self, node: int, is_leader_instance: bool, now: int) -> bool:
        return False

    def signs_posts(self, node: int) -> bool:
        return True

    def joins_fallback(self, node: int) -> bool:
        return True

    def make_post(self, node: int, view: int, vertex: Vertex) -> PoSTBlock | None:
        return None

    def equivocates(self, node: int, round_: int, now: int) -> bool:
        return False

    def ddos_plan(self) -> dict | None:
        """Optional {'target', 'start', 'until', 'recover_after_trigger'} plan."""
        return None


class CrashStrategy(Strategy):
    """k nodes are silent from time zero (they never run)."""

    name = "crash"

    def crashed(self, n: int, f: int) -> frozenset[int]:
        k = int(self.params.get("count", f))
        k = min(k, f)
        return frozenset(range(n - k, n))


class InflationStrategy(Strategy):
    """Disseminate every round but never support leader vertices: the
    controlled nodes skip their own leader slots, exclude the current leader
    vertex from their references, withhold broadcast votes for leader
    vertices, and stay out of the fallback protocol."""

    name = "inflation"

    def byzantine(self, n: int, f: int) -> frozenset[int]:
        return frozenset(range(n - f, n))

    def skip_own_vertex(self, node, round_, is_leader, now):
        return is_leader and self.active(now)

    def reference_filter(self, node, round_, refs, leader_ref, quorum, now):
        if not self.active(now) or leader_ref is None:
            return refs
        filtered = [r for r in refs if r.digest != leader_ref.digest]
        if len(filtered) < quorum:
            return None  # wait for more non-leader vertices
        return filtered

    def withhold_rbc_vote(self, node, is_leader_instance, now):
        return is_leader_instance and self.active(now)

    def signs_posts(self, node):
        return False

    def joins_fallback(self, node):
        return False


class InflationDdosStrategy(InflationStrategy):
    """Inflation plus a temporary suppression window on one correct node."""

    name = "inflation_ddos"

    def ddos_plan(self) -> dict:
        return {
            "target": int(self.params.get("ddos_target", 0)),
            "start": int(self.params.get("ddos_start", self.params.get("attack_start", 0))),
            "until": self.params.get("ddos_until"),  # None: open-ended
            "recover_after_trigger": self.params.get("recover_after_trigger"),
        }


class EquivocatorStrategy(Strategy):
    """Controlled nodes emit two conflicting vertices per round, split
    across the peer set."""

    name = "equivocator"

    def byzantine(self, n: int, f: int) -> frozenset[int]:
        return frozenset(range(n - f, n))

    def equivocates(self, node, round_, now):
        return self.active(now)


class PhantomPostStrategy(Strategy):
    """Honest in the DAG phase, but proposes fallback blocks wrapping a
    fabricated vertex whose ancestors were never disseminated."""

    name = "phantom_post"

    def byzantine(self, n: int, f: int) -> frozenset[int]:
        return frozenset(range(n - f, n))

    def make_post(self, node: int, view: int, vertex: Vertex) -> PoSTBlock:
        fake_round = vertex.round + 1
        refs = []
        for i in range(2 * self.f + 1):
            digest = hashlib.sha256(
                b"phantom|%d|%d|%d|%d" % (self.seed, node, view, i)
            ).digest()
            refs.append(VertexRef(fake_round - 1, i % self.n, digest))
        ghost = Vertex(fake_round, node, b"phantom", tuple(refs))
        return PoSTBlock(view, ghost, node)


STRATEGIES = {
    cls.name: cls
    for cls in (
        Strategy,
        CrashStrategy,
        InflationStrategy,
        InflationDdosStrategy,
        EquivocatorStrategy,
        PhantomPostStrategy,
    )
}


def make_strategy(name: str, params: dict | None, seed: int, n: int, f: int) -> Strategy:
    try:
        cls = STRATEGIES[name]
    except KeyError:
        raise ValueError(f"unknown strategy: {name!r}") from None
    return cls(params, seed, n, f)
