"""Alert-driven log diagnosis: scope the logs behind an alert, collapse similar
requests, and ask an LLM about one representative per group."""

from .errors import AlertPilotError
from .logstore import LogQuery, LogStore, RawLogRecord
from .pipeline import PipelineConfig, PipelineMetrics, diagnose, report_metrics, run_diagnose
from .promql import AlertDefinition, AlertQueryIR, canonical_cache_key, parse_alert_expr

__version__ = "0.1.0"

__all__ = [
    "AlertDefinition", "AlertPilotError", "AlertQueryIR", "LogQuery", "LogStore", "PipelineConfig",
    "PipelineMetrics", "RawLogRecord", "canonical_cache_key", "diagnose", "parse_alert_expr",
    "report_metrics", "run_diagnose",
]
