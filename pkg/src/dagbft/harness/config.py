"""Scenario configuration: defaults, validation, and the flat key-value
config-file format (INI sections; CLI flags override file values)."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace

CERTIFIED = "certified"
UNCERTIFIED = "uncertified"

LEADER_TIMEOUT_DEFAULT = {CERTIFIED: 5000, UNCERTIFIED: 1000}

# Reserve sizing: room for one agreement instance plus bounded synchronization
# (4 x n x (estimated max stuck-proof block size + per-instance overhead)).
EST_POST_BYTES = 128 * 1024
EST_ACS_OVERHEAD_BYTES = 32 * 1024


def default_reserve(n: int) -> int:
    return 4 * n * (EST_POST_BYTES + EST_ACS_OVERHEAD_BYTES)


class ConfigError(ValueError):
    def __init__(self, fieldname: str, message: str):
        super().__init__(f"{fieldname}: {message}")
        self.fieldname = fieldname


@dataclass
class ScenarioConfig:
    engine: str = CERTIFIED
    n: int = 4
    f: int = 1
    delta: int = 100  # ms
    gst: int = 0  # ms
    duration: int = 30_000  # ms
    seed: int = 1
    tx_rate: int = 600  # tx per second, aggregate
    tx_size: int = 512  # bytes per transaction
    max_payload: int = 128 * 1024  # per-vertex payload cap
    mem_limit: int = 8 * 1024 * 1024
    fallback_reserve: int | None = None  # None: sized from n
    fallback_enabled: bool = True
    fallback_limit: int = 4 * 1024 * 1024
    t_st: int = 5000  # ms
    trigger_round: int | None = None
    leader_timeout: int | None = None  # None: engine default
    pre_gst: str = "wild"
    strategy: str = "honest"
    strategy_params: dict = field(default_factory=dict)
    bucket_ms: int = 1000

    def resolved_reserve(self) -> int:
        return self.fallback_reserve if self.fallback_reserve is not None else default_reserve(self.n)

    def resolved_leader_timeout(self) -> int:
        if self.leader_timeout is not None:
            return self.leader_timeout
        return LEADER_TIMEOUT_DEFAULT[self.engine]

    def validate(self) -> None:
        if self.engine not in (CERTIFIED, UNCERTIFIED):
            raise ConfigError("engine", f"must be {CERTIFIED!r} or {UNCERTIFIED!r}")
        if self.f < 1:
            raise ConfigError("f", "must be at least 1")
        if self.n != 3 * self.f + 1:
            raise ConfigError("n", f"must equal 3f+1 = {3 * self.f + 1}")
        if self.delta <= 0:
            raise ConfigError("delta", "must be positive")
        if self.duration <= self.gst:
            raise ConfigError("duration", "must exceed gst")
        if self.tx_size <= 0:
            raise ConfigError("tx_size", "must be positive")
        if self.tx_rate < 0:
            raise ConfigError("tx_rate", "must be non-negative")
        if self.fallback_enabled and self.fallback_limit >= self.mem_limit:
            raise ConfigError("fallback_limit", "must be below mem_limit")
        if self.t_st <= 0:
            raise ConfigError("t_st", "must be positive")
        if self.pre_gst not in ("wild", "calm"):
            raise ConfigError("pre_gst", "must be 'wild' or 'calm'")


# (section, key) -> (config field, converter);  bool fields use getboolean
_FILE_KEYS = {
    ("scenario", "engine"): ("engine", str),
    ("scenario", "n"): ("n", int),
    ("scenario", "f"): ("f", int),
    ("scenario", "seed"): ("seed", int),
    ("scenario", "duration"): ("duration", int),
    ("network", "delta"): ("delta", int),
    ("network", "gst"): ("gst", int),
    ("network", "pre_gst"): ("pre_gst", str),
    ("workload", "tx_rate"): ("tx_rate", int),
    ("workload", "tx_size"): ("tx_size", int),
    ("memory", "mem_limit"): ("mem_limit", int),
    ("memory", "fallback_reserve"): ("fallback_reserve", int),
    ("fallback", "enabled"): ("fallback_enabled", bool),
    ("fallback", "limit"): ("fallback_limit", int),
    ("fallback", "t_st"): ("t_st", int),
    ("fallback", "trigger_round"): ("trigger_round", int),
    ("engineopts", "leader_timeout"): ("leader_timeout", int),
}


def load_config_file(path: str) -> ScenarioConfig:
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    updates: dict = {}
    for (section, key), (target, conv) in _FILE_KEYS.items():
        if not parser.has_option(section, key):
            continue
        if conv is bool:
            updates[target] = parser.getboolean(section, key)
        else:
            updates[target] = conv(parser.get(section, key))
    if parser.has_section("strategy"):
        params = dict(parser.items("strategy"))
        name = params.pop("name", "honest")
        updates["strategy"] = name
        updates["strategy_params"] = {
            k: (None if v == "none" else _coerce(v)) for k, v in params.items()
        }
    return replace(ScenarioConfig(), **updates)


def _coerce(value: str):
    try:
        return int(value)
    except ValueError:
        return value
