"""Closed-loop node-health management for synchronous training clusters.

Online peer-relative grey-node detection, a tiered response policy over a
good-node pool, offline sweep qualification, tiered remediation with a
three-strikes rule, and a deterministic fault-injecting simulator that
drives and measures the whole loop.
"""

from .detector import (
    DetectorConfig,
    DeviationReport,
    GreyNodeFlag,
    PeerBaseline,
    SeverityTier,
    classify_severity,
    evaluate_node,
    flag_decision,
    peer_baseline,
)
from .ingest import IngestConfig, ParseError, WindowStats, parse_metric_record, window_aggregate
from .model import (
    DeviceRef,
    JobRef,
    JobTopology,
    MetricKind,
    MetricSample,
    NodeId,
    StepTimeRecord,
    ValidationError,
    validate_sample,
)
from .policy import Action, ActionKind, IllegalTransition, NodePool, PoolStatus, TriageOutcome
from .scenario import RandomFaultMix, ScenarioConfig, ScenarioTrace, run_scenario
from .sim import (
    FaultInjection,
    FaultKind,
    NodeProfile,
    SimParams,
    emit_metrics,
    node_step_contribution,
    simulate_step,
    thermal_freq,
)
from .sweep import (
    PairSweepReport,
    SingleSweepReport,
    SweepConfig,
    SweepVerdict,
    judge_sweep,
    run_pair_sweep,
    run_single_node_sweep,
)
from .triage import ErrorSignals, TriageConfig, TriageStage, TriageState, record_strike, step_triage

__version__ = "0.1.0"

__all__ = [
    "Action",
    "ActionKind",
    "DetectorConfig",
    "DeviationReport",
    "DeviceRef",
    "ErrorSignals",
    "FaultInjection",
    "FaultKind",
    "GreyNodeFlag",
    "IllegalTransition",
    "IngestConfig",
    "JobRef",
    "JobTopology",
    "MetricKind",
    "MetricSample",
    "NodeId",
    "NodePool",
    "NodeProfile",
    "PairSweepReport",
    "ParseError",
    "PeerBaseline",
    "PoolStatus",
    "RandomFaultMix",
    "ScenarioConfig",
    "ScenarioTrace",
    "SeverityTier",
    "SimParams",
    "SingleSweepReport",
    "StepTimeRecord",
    "SweepConfig",
    "SweepVerdict",
    "TriageConfig",
    "TriageOutcome",
    "TriageStage",
    "TriageState",
    "ValidationError",
    "WindowStats",
    "classify_severity",
    "emit_metrics",
    "evaluate_node",
    "flag_decision",
    "judge_sweep",
    "node_step_contribution",
    "parse_metric_record",
    "peer_baseline",
    "record_strike",
    "run_pair_sweep",
    "run_scenario",
    "run_single_node_sweep",
    "simulate_step",
    "step_triage",
    "thermal_freq",
    "validate_sample",
    "window_aggregate",
]
