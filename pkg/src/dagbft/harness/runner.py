"""Scenario assembly and execution: one config in, one deterministic run out."""

from __future__ import annotations

from dataclasses import dataclass, field

from .. import simnet
from ..acs import AcsHost, CommonCoin
from ..adversary import make_strategy
from ..core import KeyChain
from ..engines.base import EngineParams
from ..engines.certified import CertifiedEngine
from ..engines.uncertified import UncertifiedEngine
from ..fallback import FallbackConfig, FallbackManager, post_digest
from .audit import AuditReport, run_audits
from .config import CERTIFIED, ScenarioConfig
from .metrics import MetricsSeries, Recorder


@dataclass
class RunResult:
    config: ScenarioConfig
    sim: simnet.Simulator
    engines: dict[int, object]
    managers: dict[int, object]
    recorder: Recorder
    keychain: KeyChain
    correct: list[int]
    byzantine: list[int]
    crashed: list[int]
    metrics: dict[int, MetricsSeries] = field(default_factory=dict)
    audit: AuditReport | None = None
    trace_hash: str = ""

    @property
    def ordered(self) -> dict[int, list[bytes]]:
        return {i: e.ordered_log for i, e in self.engines.items()}

    def fallback_footprints(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for ev in self.recorder.events_of("acs_decided"):
            out.setdefault(ev.node, []).append(ev.data["footprint"])
        return out


def _proposal_digest(sb) -> bytes:
    return post_digest(sb.view, sb.creator, sb.vertex)


def build(config: ScenarioConfig) -> RunResult:
    config.validate()
    strategy = make_strategy(
        config.strategy, config.strategy_params, config.seed, config.n, config.f
    )
    crashed = sorted(strategy.crashed(config.n, config.f))
    byz = sorted(strategy.byzantine(config.n, config.f))
    plan = strategy.ddos_plan()
    if plan is not None and (plan["target"] in byz or plan["target"] in crashed):
        raise ValueError("ddos target must be a correct node")

    sim = simnet.Simulator(
        seed=config.seed,
        n=config.n,
        delta=config.delta,
        gst=config.gst,
        pre_gst_profile=config.pre_gst,
        mem_limit=config.mem_limit,
        fallback_reserve=config.resolved_reserve(),
    )
    keychain = KeyChain(config.seed, config.n)
    coin = CommonCoin(config.seed)
    recorder = Recorder(sim, config.n, config.duration, config.bucket_ms)
    params = EngineParams(
        n=config.n,
        f=config.f,
        leader_timeout=config.resolved_leader_timeout(),
        delta=config.delta,
        max_payload=config.max_payload,
    )
    engine_cls = CertifiedEngine if config.engine == CERTIFIED else UncertifiedEngine
    fb_cfg = FallbackConfig(
        enabled=config.fallback_enabled,
        limit_bytes=config.fallback_limit,
        t_st=config.t_st,
        trigger_round=config.trigger_round,
    )
    engines: dict[int, object] = {}
    managers: dict[int, object] = {}
    for i in range(config.n):
        if i in crashed:
            continue
        engine = engine_cls(i, sim, params, recorder, strategy, keychain)
        if config.fallback_enabled:
            manager_holder: list = []
            acs = AcsHost(
                i,
                sim,
                config.n,
                config.f,
                keychain,
                coin,
                _proposal_digest,
                on_decide=lambda view, blocks, h=manager_holder: h[0].on_acs_decide(view, blocks),
                charge=lambda nbytes, node=i: sim.meters[node].charge(
                    nbytes, simnet.FALLBACK
                ),
            )
            manager = FallbackManager(engine, fb_cfg, acs, keychain, sim, recorder, strategy)
            manager_holder.append(manager)
            engine.fallback = manager
            managers[i] = manager
        engines[i] = engine
        sim.handlers[i] = engine.dispatch

    if plan is not None:
        until = plan.get("until")
        sim.add_ddos_window(plan["target"], plan["start"], until)
        recover = plan.get("recover_after_trigger")
        if recover is not None:
            fired: list = []

            def _on_trigger(ev, target=plan["target"], delay=int(recover)):
                if not fired:
                    fired.append(ev.time)
                    sim.schedule(delay, sim.release_ddos, target)

            recorder.subscribe("fallback_triggered", _on_trigger)

    _schedule_clients(sim, config, engines)
    return RunResult(
        config=config,
        sim=sim,
        engines=engines,
        managers=managers,
        recorder=recorder,
        keychain=keychain,
        correct=[i for i in range(config.n) if i not in byz and i not in crashed],
        byzantine=byz,
        crashed=crashed,
    )


def _schedule_clients(sim, config: ScenarioConfig, engines: dict) -> None:
    """Inject tx_rate x tx_size bytes per second of opaque payload, round-robin."""
    if config.tx_rate <= 0:
        return
    tick = 100  # ms
    state = {"node": 0, "carry": 0.0, "counter": 0}
    per_tick = config.tx_rate * tick / 1000.0

    def inject():
        if sim.now >= config.duration:
            return
        state["carry"] += per_tick
        ntx = int(state["carry"])
        state["carry"] -= ntx
        if ntx > 0:
            for _ in range(config.n):
                node = state["node"] % config.n
                state["node"] += 1
                engine = engines.get(node)
                if engine is not None:
                    stamp = b"%012d" % state["counter"]
                    state["counter"] += ntx
                    chunk = (stamp + b"." * (config.tx_size - len(stamp))) * ntx
                    engine.enqueue_txs(chunk)
                    break
        sim.schedule(tick, inject)

    sim.schedule(0, inject)


def run_scenario(config: ScenarioConfig) -> RunResult:
    result = build(config)
    for i in sorted(result.engines):
        result.engines[i].start()
    result.sim.run(config.duration)
    result.metrics = result.recorder.series()
    result.trace_hash = result.sim.trace_hash()
    result.audit = run_audits(result)
    return result
