"""Per-second metric series and the run-wide event recorder.

Conservation holds by construction: cumulative uncommitted bytes equal the
running sum of proposed bytes minus committed bytes, per node per bucket.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

CSV_COLUMNS = ["t_sec", "node", "committed_bps", "proposed_bps", "cumulative_ub", "fallback_active"]


@dataclass
class MetricsSeries:
    node: int
    committed_bps: list[int]
    proposed_bps: list[int]
    cumulative_ub: list[int]
    fallback_active: list[int]


@dataclass
class Event:
    time: int
    kind: str
    node: int
    data: dict = field(default_factory=dict)


class Recorder:
    def __init__(self, sim, n: int, duration_ms: int, bucket_ms: int = 1000):
        self.sim = sim
        self.n = n
        self.bucket_ms = bucket_ms
        self.buckets = max(1, (duration_ms + bucket_ms - 1) // bucket_ms)
        self._proposed = [[0] * self.buckets for _ in range(n)]
        self._committed = [[0] * self.buckets for _ in range(n)]
        self._fb_transitions: list[list[tuple[int, bool]]] = [[] for _ in range(n)]
        self.events: list[Event] = []
        self._subscribers: dict[str, list] = {}

    def _bucket(self) -> int:
        return min(self.buckets - 1, self.sim.now // self.bucket_ms)

    def subscribe(self, kind: str, fn) -> None:
        self._subscribers.setdefault(kind, []).append(fn)

    def event(self, _kind: str, _node: int, **data) -> None:
        ev = Event(self.sim.now, _kind, _node, data)
        self.events.append(ev)
        for fn in self._subscribers.get(_kind, ()):
            fn(ev)

    def proposed(self, node: int, nbytes: int) -> None:
        self._proposed[node][self._bucket()] += nbytes

    def committed(self, node: int, nbytes: int) -> None:
        self._committed[node][self._bucket()] += nbytes

    def set_fallback(self, node: int, active: bool) -> None:
        self._fb_transitions[node].append((self.sim.now, active))

    def events_of(self, *kinds: str) -> list[Event]:
        wanted = set(kinds)
        return [e for e in self.events if e.kind in wanted]

    def series(self) -> dict[int, MetricsSeries]:
        out = {}
        for node in range(self.n):
            cum = []
            running = 0
            for b in range(self.buckets):
                running += self._proposed[node][b] - self._committed[node][b]
                cum.append(running)
            fb = self._fallback_flags(node)
            out[node] = MetricsSeries(
                node=node,
                committed_bps=list(self._committed[node]),
                proposed_bps=list(self._proposed[node]),
                cumulative_ub=cum,
                fallback_active=fb,
            )
        return out

    def _fallback_flags(self, node: int) -> list[int]:
        flags = [0] * self.buckets
        transitions = sorted(self._fb_transitions[node])
        active = False
        idx = 0
        for b in range(self.buckets):
            end = (b + 1) * self.bucket_ms
            seen_active = active
            while idx < len(transitions) and transitions[idx][0] < end:
                active = transitions[idx][1]
                seen_active = seen_active or active
                idx += 1
            flags[b] = 1 if seen_active else 0
        return flags


def rows(series: dict[int, MetricsSeries]) -> list[list]:
    out = []
    if not series:
        return out
    buckets = len(next(iter(series.values())).committed_bps)
    for t in range(buckets):
        for node in sorted(series):
            s = series[node]
            out.append(
                [
                    t,
                    node,
                    s.committed_bps[t],
                    s.proposed_bps[t],
                    s.cumulative_ub[t],
                    s.fallback_active[t],
                ]
            )
    return out


def export(series: dict[int, MetricsSeries], fmt: str, path: str) -> None:
    """Write the metric series; CSV column order is part of the contract."""
    data = rows(series)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            writer.writerows(data)
    elif fmt == "json":
        payload = [dict(zip(CSV_COLUMNS, row)) for row in data]
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=0, sort_keys=False)
            fh.write("\n")
    else:
        raise ValueError(f"unknown format: {fmt!r}")
