"""Command-line scenario runner.

Config-file values (see README for the schema) are overridden by flags.
Exit code is 0 iff the run's audit passes.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .harness.config import ConfigError, ScenarioConfig, load_config_file
from .harness.metrics import export
from .harness.runner import run_scenario


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dagbft",
        description="Deterministic DAG-BFT simulator with a bounded-memory fallback",
    )
    p.add_argument("--config", help="scenario config file (INI)")
    p.add_argument("--engine", choices=["certified", "uncertified"])
    p.add_argument("--n", type=int)
    p.add_argument("--f", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=int, help="simulated milliseconds")
    p.add_argument("--strategy", help="honest|crash|inflation|inflation_ddos|equivocator|phantom_post")
    p.add_argument("--delta", type=int, help="post-GST delivery bound, ms")
    p.add_argument("--gst", type=int, help="global stabilization time, ms")
    p.add_argument("--tx-rate", type=int, dest="tx_rate")
    p.add_argument("--tx-size", type=int, dest="tx_size")
    p.add_argument("--mem-limit", type=int, dest="mem_limit")
    p.add_argument("--trigger-round", type=int, dest="trigger_round")
    p.add_argument("--no-fallback", action="store_true", help="disable the fallback path")
    p.add_argument("--out", help="metrics output path")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--trace", help="write the event trace to this path")
    p.add_argument("--quiet", action="store_true")
    return p


def config_from_args(args) -> ScenarioConfig:
    cfg = load_config_file(args.config) if args.config else ScenarioConfig()
    overrides = {}
    for name in (
        "engine",
        "n",
        "f",
        "seed",
        "duration",
        "strategy",
        "delta",
        "gst",
        "tx_rate",
        "tx_size",
        "mem_limit",
        "trigger_round",
    ):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.no_fallback:
        overrides["fallback_enabled"] = False
    if "f" in overrides and "n" not in overrides:
        overrides["n"] = 3 * overrides["f"] + 1
    if "n" in overrides and "f" not in overrides:
        overrides["f"] = (overrides["n"] - 1) // 3
    return replace(cfg, **overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        cfg.validate()
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    trace_fh = None
    result = None
    try:
        if args.trace:
            trace_fh = open(args.trace, "w")
        from .harness.runner import build  # noqa: F401  (import kept close to use)

        result = _run(cfg, trace_fh)
    finally:
        if trace_fh is not None:
            trace_fh.close()

    if args.out:
        export(result.metrics, args.format, args.out)
    if not args.quiet:
        _summarize(result)
    return 0 if result.audit.ok else 1


def _run(cfg, trace_fh):
    from .harness.runner import build

    result = build(cfg)
    if trace_fh is not None:
        result.sim.trace_sink = lambda line: trace_fh.write(line + "\n")
    for i in sorted(result.engines):
        result.engines[i].start()
    result.sim.run(cfg.duration)
    result.metrics = result.recorder.series()
    result.trace_hash = result.sim.trace_hash()
    from .harness.audit import run_audits

    result.audit = run_audits(result)
    return result


def _summarize(result) -> None:
    cfg = result.config
    committed = sum(sum(s.committed_bps) for s in result.metrics.values())
    proposed = sum(sum(s.proposed_bps) for s in result.metrics.values())
    print(
        f"{cfg.engine} n={cfg.n} f={cfg.f} strategy={cfg.strategy} "
        f"seed={cfg.seed} duration={cfg.duration}ms"
    )
    print(f"trace_hash={result.trace_hash}")
    print(f"proposed_bytes={proposed} committed_bytes={committed}")
    decided = result.recorder.events_of("acs_decided")
    if decided:
        views = sorted({(e.data['view'], e.data['r_fb']) for e in decided})
        print(f"fallback_views={views}")
    exhausted = [i for i, m in result.sim.meters.items() if m.exhausted]
    if exhausted:
        print(f"exhausted_nodes={exhausted}")
    status = "PASS" if result.audit.ok else "FAIL"
    print(f"audit={status}")
    for check in result.audit.checks:
        flag = "ok " if check.ok else "FAIL"
        detail = f" {check.detail}" if check.detail else ""
        print(f"  [{flag}] {check.name}{detail}")


if __name__ == "__main__":
    sys.exit(main())
