from .audit import AuditReport, audit_safety, prefix_divergence, run_audits
from .config import CERTIFIED, UNCERTIFIED, ConfigError, ScenarioConfig, load_config_file
from .metrics import CSV_COLUMNS, MetricsSeries, Recorder, export, rows
from .runner import RunResult, build, run_scenario

__all__ = [
    "CERTIFIED",
    "UNCERTIFIED",
    "AuditReport",
    "CSV_COLUMNS",
    "ConfigError",
    "MetricsSeries",
    "Recorder",
    "RunResult",
    "ScenarioConfig",
    "audit_safety",
    "build",
    "export",
    "load_config_file",
    "prefix_divergence",
    "rows",
    "run_scenario",
]
