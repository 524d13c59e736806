"""Safety/liveness auditors: every verdict is recomputed from the run's
recorded events, ordered outputs, and final stores."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..core import no_vote_digest
from ..engines.base import leader_of


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


@dataclass
class AuditReport:
    checks: list[CheckResult] = field(default_factory=list)

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks.append(CheckResult(name, ok, detail))

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.ok]


def prefix_divergence(a: list, b: list) -> int | None:
    """Index of the first divergence, or None when one is a prefix of the other."""
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    return None


def audit_safety(ordered: dict[int, list]) -> tuple[bool, tuple | None]:
    """Pairwise prefix check over correct nodes' ordered outputs."""
    nodes = sorted(ordered)
    for i, a in enumerate(nodes):
        for b in nodes[i + 1 :]:
            idx = prefix_divergence(ordered[a], ordered[b])
            if idx is not None:
                return False, (a, b, idx, ordered[a][idx], ordered[b][idx])
    return True, None


def audit_liveness_windows(series, window_s: int = 5) -> list[bool]:
    """Per window: did any node commit bytes in that window."""
    buckets = len(next(iter(series.values())).committed_bps)
    out = []
    for start in range(0, buckets, window_s):
        total = 0
        for s in series.values():
            total += sum(s.committed_bps[start : start + window_s])
        out.append(total > 0)
    return out


def run_audits(result) -> AuditReport:
    """The per-run audit suite attached to every scenario run."""
    report = AuditReport()
    ordered = {i: result.ordered[i] for i in result.correct}
    ok, div = audit_safety(ordered)
    report.add("safety_prefix", ok, "" if ok else f"divergence {div}")
    report.add(
        "post_gst_delivery_bound",
        not result.sim.delivery_violations,
        f"{len(result.sim.delivery_violations)} violations",
    )
    report.add(
        "bounded_exhausted_sends",
        not result.sim.exhausted_dag_sends,
        f"{len(result.sim.exhausted_dag_sends)} refused sends",
    )
    conserved = True
    detail = ""
    for i in result.correct:
        s = result.metrics[i]
        expect = sum(s.proposed_bps) - sum(s.committed_bps)
        engine = result.engines[i]
        dag_pool = engine.store.uncommitted_bytes - engine.fallback_billed_outstanding
        if s.cumulative_ub[-1] != expect or dag_pool != expect or engine.meter.used != expect:
            conserved = False
            detail = (
                f"node {i}: series {s.cumulative_ub[-1]}, store {dag_pool}, "
                f"meter {engine.meter.used}, flows {expect}"
            )
            break
    report.add("metrics_conservation", conserved, detail)
    report.add(*check_view_sequencing(result))
    report.add(*check_acs_contract(result))
    report.add(*check_proposition_1(result))
    report.add(*check_graceful_transition(result))
    if result.config.engine == "certified":
        report.add(*check_restriction_1(result))
        report.add(*check_direct_commit_support(result))
        report.add(*check_store_equivocation(result))
    else:
        report.add(*check_status_consistency(result))
        report.add(*check_data_availability(result))
    return report


# -- individual property checks (also used by the acceptance suite) -----------


def check_view_sequencing(result) -> tuple[str, bool, str]:
    """Correct nodes decide the same strictly-increasing (view, round) sequence."""
    seqs = {}
    for i in result.correct:
        mgr = result.managers.get(i)
        seqs[i] = [(v, r) for (v, r, _) in mgr.decided] if mgr else []
    baseline = None
    for i, seq in sorted(seqs.items()):
        views = [v for v, _ in seq]
        if views != sorted(set(views)):
            return "view_sequencing", False, f"node {i} views not increasing: {views}"
        if baseline is None:
            baseline = seq
        elif seq != baseline:
            # nodes may lag by in-flight instances at cutoff; prefix compatibility
            if prefix_divergence(seq, baseline) is not None:
                return "view_sequencing", False, f"node {i}: {seq} vs {baseline}"
    return "view_sequencing", True, ""


def check_acs_contract(result) -> tuple[str, bool, str]:
    """Validity (|V| >= n-f with >= n-2f correct proposers) and agreement."""
    n, f = result.config.n, result.config.f
    by_view: dict[int, dict[int, tuple]] = {}
    for ev in result.recorder.events_of("acs_decision_received"):
        if ev.node in result.correct:
            by_view.setdefault(ev.data["view"], {})[ev.node] = (
                ev.data["size"],
                ev.data["creators"],
                ev.data["vhash"],
            )
    for view, per_node in by_view.items():
        if len({entry for entry in per_node.values()}) != 1:
            return "acs_contract", False, f"view {view} disagreement"
        size, creators, _ = next(iter(per_node.values()))
        if size < n - f:
            return "acs_contract", False, f"view {view}: |V|={size} < n-f"
        correct_creators = sum(1 for c in creators if c in result.correct)
        if correct_creators < n - 2 * f:
            return "acs_contract", False, f"view {view}: {correct_creators} correct proposals"
    return "acs_contract", True, ""


def check_proposition_1(result) -> tuple[str, bool, str]:
    """The predefined leader of a decided round is never committed before the
    instance decides at that node."""
    decide_at: dict[tuple[int, int], int] = {}
    for ev in result.recorder.events_of("acs_decided"):
        decide_at[(ev.node, ev.data["view"])] = ev.time
    views = {}
    for ev in result.recorder.events_of("acs_decided"):
        views.setdefault(ev.data["view"], ev.data["r_fb"])
    for ev in result.recorder.events_of("leader_committed"):
        if ev.node not in result.correct or ev.data["kind"] == "fallback":
            continue
        for view, r_fb in views.items():
            when = decide_at.get((ev.node, view))
            predefined = leader_of(r_fb, result.config.n)
            if (
                ev.data["round"] == r_fb
                and ev.data["creator"] == predefined
                and (when is None or ev.time < when)
            ):
                return (
                    "proposition_1",
                    False,
                    f"node {ev.node} committed round {r_fb} leader before decision",
                )
    return "proposition_1", True, ""


def check_graceful_transition(result) -> tuple[str, bool, str]:
    """No correct node creates a round r_fb+1 vertex after finalizing view r_fb."""
    finalized_at: dict[int, dict[int, int]] = {}
    for ev in result.recorder.events_of("finalize_done"):
        finalized_at.setdefault(ev.node, {})[ev.data["r_fb"]] = ev.time
    for ev in result.recorder.events_of("vertex_created"):
        if ev.node not in result.correct:
            continue
        for r_fb, when in finalized_at.get(ev.node, {}).items():
            if ev.data["round"] == r_fb + 1 and ev.time >= when:
                return (
                    "graceful_transition",
                    False,
                    f"node {ev.node} created round {r_fb + 1} after finalize",
                )
    return "graceful_transition", True, ""


def vertices_at_decided_round_plus_one(result) -> dict[int, int]:
    """Per decided view: distinct vertex creations at r_fb+1 before decision."""
    out = {}
    for ev in result.recorder.events_of("acs_decided"):
        view, r_fb = ev.data["view"], ev.data["r_fb"]
        if view in out:
            continue
        decided_time = ev.time
        count = 0
        for ce in result.recorder.events_of("vertex_created", "equivocation_emitted"):
            if ce.data["round"] == r_fb + 1 and ce.time <= decided_time:
                count += 1
        out[view] = count
    return out


def check_restriction_1(result) -> tuple[str, bool, str]:
    """Every correct leader vertex references the previous leader vertex or
    carries a valid no-vote certificate."""
    cfg = result.config
    keychain = result.keychain
    for i in result.correct:
        engine = result.engines[i]
        for r, v in sorted(engine.created.items()):
            if r <= 1 or leader_of(r, cfg.n) != i:
                continue
            prev_leader = leader_of(r - 1, cfg.n)
            referenced = any(
                x.round == r - 1 and x.creator == prev_leader for x in v.references
            )
            if referenced:
                continue
            nvc = v.aux
            if nvc is None:
                return "restriction_1", False, f"node {i} round {r}: no link, no certificate"
            signers = set(nvc.signers)
            expected = no_vote_digest(r - 1, prev_leader)
            if len(signers) < 2 * cfg.f + 1:
                return "restriction_1", False, f"node {i} round {r}: thin certificate"
            for sig in nvc.signatures:
                if sig.digest != expected or not keychain.verify(sig):
                    return "restriction_1", False, f"node {i} round {r}: bad signature"
    return "restriction_1", True, ""


def check_direct_commit_support(result) -> tuple[str, bool, str]:
    quorum = 2 * result.config.f + 1
    for ev in result.recorder.events_of("direct_commit"):
        if ev.node in result.correct and ev.data["votes"] < quorum:
            return "direct_commit_support", False, f"{ev.data}"
    return "direct_commit_support", True, ""


def check_store_equivocation(result) -> tuple[str, bool, str]:
    """Certified stores: at most one vertex per (round, creator) across nodes."""
    seen: dict[tuple[int, int], bytes] = {}
    for i in result.correct:
        store = result.engines[i].store
        for r, slot in store.by_round.items():
            for c, v in slot.items():
                key = (r, c)
                if key in seen and seen[key] != v.digest:
                    return "no_equivocation", False, f"slot {key} differs across stores"
                seen[key] = v.digest
    return "no_equivocation", True, ""


def check_status_consistency(result) -> tuple[str, bool, str]:
    """Uncertified: decided slots agree (status and chosen vertex) across nodes."""
    baseline: dict[int, tuple] = {}
    for i in result.correct:
        engine = result.engines[i]
        for r, st in engine.statuses.items():
            key = (
                st.status,
                st.vertex.digest if st.vertex is not None else None,
            )
            if r in baseline and baseline[r] != key:
                return "status_consistency", False, f"round {r} differs across nodes"
            baseline.setdefault(r, key)
    return "status_consistency", True, ""


def check_data_availability(result) -> tuple[str, bool, str]:
    """Every ordered leader's causal history is fully present in that store."""
    for i in result.correct:
        engine = result.engines[i]
        store = engine.store
        for leader in store.leader_stack:
            stack = [leader]
            seen = set()
            while stack:
                v = stack.pop()
                for ref in v.references:
                    if ref.digest in seen:
                        continue
                    seen.add(ref.digest)
                    child = store.by_digest.get(ref.digest)
                    if child is None:
                        return (
                            "data_availability",
                            False,
                            f"node {i} ordered leader r{leader.round} missing ancestor",
                        )
                    stack.append(child)
    return "data_availability", True, ""
