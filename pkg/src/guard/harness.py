"""Evaluation and experiment harness.

Measures a trace against its own ground-truth labels (FPR/FNR, detection
latency), derives reliability metrics (MTTF over job-impacting incidents,
human-intervention interval, run-to-run variance, an MFU proxy), and runs
the four-arm ablation. Evaluation is a pure function of the trace: replaying
a written trace re-derives identical results.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .detector import (
    DetectorConfig,
    DeviationReport,
    NodeFlagTracker,
    evaluate_node,
    node_level_values,
    peer_baseline,
)
from .ingest import DataGap, IngestConfig, WindowStats, parse_metric_record, window_aggregate
from .model import JobRef, MetricKind, NodeId
from .scenario import (
    JobSpec,
    RandomFaultMix,
    ScenarioConfig,
    ScenarioTrace,
    run_scenario,
)
from .sim import FaultInjection, FaultKind, SimParams
from .triage import TriageConfig

SEVERE_FLAG = "severe"


# ---------------------------------------------------------------------------
# Detection quality


@dataclass(frozen=True)
class LatencySummary:
    count: int
    mean_windows: float
    p50_windows: float
    max_windows: float


@dataclass(frozen=True)
class NodeInterval:
    """One labeled node-interval: the unit of the confusion matrix."""

    run_id: int
    node: NodeId
    faulty: bool
    onset_window: int
    end_window: int
    flag_windows: tuple[int, ...]


@dataclass(frozen=True)
class EvalResult:
    fpr: float | None
    fnr: float | None
    negatives: int
    positives: int
    true_positives: int
    false_positives: int
    true_negatives: int
    false_negatives: int
    detection_latency: LatencySummary


def collect_node_intervals(trace: ScenarioTrace, run_id: int = 0) -> list[NodeInterval]:
    """Split one trace into labeled node-intervals with their flag windows."""

    window_len = float(trace.config_echo.get("window_len_s", 60.0))
    horizon_w = int(trace.summary.final_t // window_len)
    flags: dict[NodeId, list[int]] = {}
    for event in trace.events.of_kind("flag"):
        flags.setdefault(event["node"], []).append(int(event["window"]))

    fault_span: dict[NodeId, tuple[float, float]] = {}
    for label in trace.labels:
        node = label["node"]
        onset, end = float(label["onset_s"]), float(label["end_s"])
        if node in fault_span:
            lo, hi = fault_span[node]
            fault_span[node] = (min(lo, onset), max(hi, end))
        else:
            fault_span[node] = (onset, end)

    active = [n for n in trace.config_echo["nodes"] if n.startswith("n")]
    intervals = []
    for node in active:
        if node in fault_span:
            onset, end = fault_span[node]
            intervals.append(
                NodeInterval(
                    run_id=run_id,
                    node=node,
                    faulty=True,
                    onset_window=int(onset // window_len),
                    end_window=int(end // window_len),
                    flag_windows=tuple(sorted(flags.get(node, ()))),
                )
            )
        else:
            intervals.append(
                NodeInterval(
                    run_id=run_id,
                    node=node,
                    faulty=False,
                    onset_window=0,
                    end_window=horizon_w,
                    flag_windows=tuple(sorted(flags.get(node, ()))),
                )
            )
    return intervals


def eval_intervals(intervals: Sequence[NodeInterval], grace_windows: int) -> EvalResult:
    """Confusion matrix over node-intervals.

    A faulty interval is a true positive iff some flag lands inside
    [onset_window, end_window + grace]; any flag on an unlabeled node makes
    that interval a false positive.
    """

    tp = fp = tn = fn = 0
    latencies: list[int] = []
    for interval in intervals:
        if interval.faulty:
            hit = [
                w
                for w in interval.flag_windows
                if interval.onset_window <= w <= interval.end_window + grace_windows
            ]
            if hit:
                tp += 1
                latencies.append(hit[0] - interval.onset_window)
            else:
                fn += 1
        else:
            if interval.flag_windows:
                fp += 1
            else:
                tn += 1
    negatives = fp + tn
    positives = tp + fn
    if latencies:
        latency = LatencySummary(
            count=len(latencies),
            mean_windows=float(statistics.fmean(latencies)),
            p50_windows=float(statistics.median(latencies)),
            max_windows=float(max(latencies)),
        )
    else:
        latency = LatencySummary(0, 0.0, 0.0, 0.0)
    return EvalResult(
        fpr=(fp / negatives) if negatives else None,
        fnr=(fn / positives) if positives else None,
        negatives=negatives,
        positives=positives,
        true_positives=tp,
        false_positives=fp,
        true_negatives=tn,
        false_negatives=fn,
        detection_latency=latency,
    )


def eval_detection(trace: ScenarioTrace, cfg: DetectorConfig | None = None) -> EvalResult:
    """FPR/FNR of one trace against its ground-truth labels."""

    cfg = cfg or DetectorConfig()
    return eval_intervals(collect_node_intervals(trace), grace_windows=cfg.k_windows)


# ---------------------------------------------------------------------------
# Reliability


@dataclass(frozen=True)
class ReliabilityResult:
    mttf_h: float
    variance_pct: float
    mean_step_s: float
    human_interval_h: float
    mfu_proxy: float
    incidents: int
    human_events: int


def _trace_incidents(trace: ScenarioTrace) -> list[float]:
    """Job-impacting incidents: Severe flags and job failures (stalls)."""

    times = []
    for event in trace.events:
        if event["event"] == "flag" and event.get("severity") == SEVERE_FLAG:
            times.append(event["t"])
        elif event["event"] == "job_failure":
            times.append(event["t"])
    return times


def _trace_human_events(trace: ScenarioTrace) -> list[float]:
    return [e["t"] for e in trace.events.of_kind("human")]


def _interval_h(times: list[float], horizon_s: float) -> float:
    # Zero events over the horizon reports the horizon itself: the best
    # available lower estimate of the time between events.
    count = max(len(times), 1)
    return (horizon_s / count) / 3600.0


def eval_reliability(traces: Sequence[ScenarioTrace] | ScenarioTrace) -> ReliabilityResult:
    """Reliability metrics over one or more seeded runs of one configuration.

    variance_pct is the coefficient of variation of per-run mean step time
    across the given runs (0.0 for a single run).
    """

    if isinstance(traces, ScenarioTrace):
        traces = [traces]
    if not traces:
        raise ValueError("need at least one trace")

    mttfs, humans, means, mfus = [], [], [], []
    n_incidents = n_human = 0
    for trace in traces:
        horizon = trace.summary.final_t
        incidents = _trace_incidents(trace)
        human = _trace_human_events(trace)
        n_incidents += len(incidents)
        n_human += len(human)
        mttfs.append(_interval_h(incidents, horizon))
        humans.append(_interval_h(human, horizon))
        means.append(trace.summary.mean_step_s)
        nominal = float(trace.config_echo.get("nominal_step_s", 8.4))
        useful = trace.summary.completed_steps * nominal
        mfus.append(min(1.0, useful / horizon) if horizon > 0 else 0.0)

    mean_of_means = statistics.fmean(means)
    if len(means) > 1 and mean_of_means > 0:
        variance_pct = statistics.stdev(means) / mean_of_means * 100.0
    else:
        variance_pct = 0.0
    return ReliabilityResult(
        mttf_h=float(np.mean(mttfs)),
        variance_pct=variance_pct,
        mean_step_s=mean_of_means,
        human_interval_h=float(np.mean(humans)),
        mfu_proxy=float(np.mean(mfus)),
        incidents=n_incidents,
        human_events=n_human,
    )


# ---------------------------------------------------------------------------
# Ablation


@dataclass(frozen=True)
class ArmSpec:
    label: str
    online_monitoring: bool
    sweep_on_repair: bool
    enhanced_sweep: bool
    detects_hw_degradation: bool


ABLATION_ARMS = (
    ArmSpec("baseline-checks-only", False, False, False, False),
    ArmSpec("sweep-on-repair", False, True, False, False),
    ArmSpec("online-monitoring", True, True, False, True),
    ArmSpec("enhanced-sweep", True, True, True, True),
)


@dataclass(frozen=True)
class AblationRow:
    label: str
    mttf_h: float
    human_interval_h: float
    mfu_proxy: float
    detects_hw_degradation: bool


def arm_config(base: ScenarioConfig, arm: ArmSpec, seed: int) -> ScenarioConfig:
    return replace(
        base,
        seed=seed,
        online_monitoring=arm.online_monitoring,
        sweep_on_repair=arm.sweep_on_repair,
        sweep=replace(base.sweep, enhanced=arm.enhanced_sweep),
    )


def run_ablation_detailed(
    base_cfg: ScenarioConfig, seeds: Sequence[int]
) -> dict[str, list[ReliabilityResult]]:
    """Per-arm, per-seed reliability results (the acceptance-grade view)."""

    if len(seeds) < 5:
        raise ValueError("ablation needs at least 5 seeds")
    out: dict[str, list[ReliabilityResult]] = {}
    for arm in ABLATION_ARMS:
        rows = []
        for seed in seeds:
            trace = run_scenario(arm_config(base_cfg, arm, seed))
            rows.append(eval_reliability([trace]))
        out[arm.label] = rows
    return out


def run_ablation(base_cfg: ScenarioConfig, seeds: Sequence[int]) -> list[AblationRow]:
    detailed = run_ablation_detailed(base_cfg, seeds)
    rows = []
    for arm in ABLATION_ARMS:
        results = detailed[arm.label]
        rows.append(
            AblationRow(
                label=arm.label,
                mttf_h=float(np.mean([r.mttf_h for r in results])),
                human_interval_h=float(np.mean([r.human_interval_h for r in results])),
                mfu_proxy=float(np.mean([r.mfu_proxy for r in results])),
                detects_hw_degradation=arm.detects_hw_degradation,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Scenario presets


def detection_scenario_config(
    seed: int = 0,
    node_count: int = 64,
    onset_step: int = 100,
    slowdown_factor: float = 1.25,
    horizon_steps: int = 220,
    with_fault: bool = True,
) -> ScenarioConfig:
    """One severe straggler in a larger job; the end-to-end detection chain."""

    params = SimParams()
    faults = ()
    if with_fault:
        faults = (
            FaultInjection(
                node=f"n{min(10, node_count - 1):03d}",
                kind=FaultKind.CPU_MISCONFIG,
                params={"factor": slowdown_factor},
                onset_s=onset_step * params.nominal_step_s,
            ),
        )
    return ScenarioConfig(
        node_count=node_count,
        spare_count=4,
        jobs=(JobSpec("job0", node_count, 1),),
        faults=faults,
        horizon_steps=horizon_steps,
        seed=seed,
        params=params,
    )


def ablation_base_config(horizon_steps: int = 900) -> ScenarioConfig:
    """Fixed mixed-fault scenario exercising all four arms differently.

    Remediation durations are compressed the same way sweep durations are;
    the decision structure, not wall time, is what matters at this scale.
    """

    faults = (
        FaultInjection("n003", FaultKind.THERMAL, {"gpu": 3, "temp_c": 77.0}, onset_s=600.0),
        FaultInjection("n007", FaultKind.NVLINK_DEGRADE, {"i": 2, "j": 5, "factor": 0.5}, onset_s=1200.0),
        FaultInjection("n011", FaultKind.NIC_FAILOVER, {"failed_nic": 5, "fallback_nic": 0}, onset_s=1800.0),
        FaultInjection("n009", FaultKind.POWER_ANOMALY, {"fraction_below": 0.25}, onset_s=3000.0),
        FaultInjection("n009", FaultKind.GPU_ERRORS, {}, onset_s=3000.0),
        FaultInjection("n005", FaultKind.CPU_MISCONFIG, {"factor": 1.15}, onset_s=4000.0),
    )
    return ScenarioConfig(
        node_count=16,
        spare_count=6,
        jobs=(JobSpec("job0", 16, 1),),
        faults=faults,
        horizon_steps=horizon_steps,
        poll_period_s=60.0,
        triage=TriageConfig(reboot_duration_s=300.0, reprovision_duration_s=900.0),
    )


def mixed_fault_config(horizon_steps: int = 1600) -> ScenarioConfig:
    """Randomized per-seed fault mix for the run-to-run variance experiment."""

    return ScenarioConfig(
        node_count=12,
        spare_count=6,
        jobs=(JobSpec("job0", 12, 1),),
        random_faults=RandomFaultMix(
            min_faults=1,
            max_faults=3,
            onset_lo_s=600.0,
            onset_hi_s=3000.0,
            kinds=(
                FaultKind.THERMAL,
                FaultKind.NVLINK_DEGRADE,
                FaultKind.POWER_ANOMALY,
                FaultKind.CPU_MISCONFIG,
            ),
        ),
        horizon_steps=horizon_steps,
        poll_period_s=60.0,
        triage=TriageConfig(reboot_duration_s=300.0, reprovision_duration_s=900.0),
    )


def variance_comparison(
    seeds: Sequence[int], horizon_steps: int = 1600
) -> tuple[ReliabilityResult, ReliabilityResult]:
    """(full loop, detection disabled) reliability over the same seed set."""

    base = mixed_fault_config(horizon_steps)
    on = [run_scenario(replace(base, seed=s)) for s in seeds]
    off_cfg = replace(base, online_monitoring=False, sweep_on_repair=False)
    off = [run_scenario(replace(off_cfg, seed=s)) for s in seeds]
    return eval_reliability(on), eval_reliability(off)


# ---------------------------------------------------------------------------
# Labeled corpus for FPR/FNR measurement


CORPUS_FAULT_WEIGHTS = (
    ("thermal", 0.22),
    ("nic_failover", 0.20),
    ("nvlink_severe", 0.16),
    ("power_severe", 0.14),
    ("cpu_moderate", 0.20),
    ("subtle", 0.08),
)


def _corpus_fault(node: NodeId, rng: np.random.Generator, onset: float) -> FaultInjection:
    roll = float(rng.random())
    acc = 0.0
    choice = CORPUS_FAULT_WEIGHTS[-1][0]
    for name, weight in CORPUS_FAULT_WEIGHTS:
        acc += weight
        if roll < acc:
            choice = name
            break
    if choice == "thermal":
        return FaultInjection(node, FaultKind.THERMAL, {"gpu": int(rng.integers(0, 8)), "temp_c": float(rng.uniform(70, 85))}, onset_s=onset)
    if choice == "nic_failover":
        return FaultInjection(node, FaultKind.NIC_FAILOVER, {"failed_nic": int(rng.integers(1, 8)), "fallback_nic": 0}, onset_s=onset)
    if choice == "nvlink_severe":
        i = int(rng.integers(0, 7))
        return FaultInjection(node, FaultKind.NVLINK_DEGRADE, {"i": i, "j": int(rng.integers(i + 1, 8)), "factor": float(rng.uniform(0.38, 0.43))}, onset_s=onset)
    if choice == "power_severe":
        return FaultInjection(node, FaultKind.POWER_ANOMALY, {"fraction_below": float(rng.uniform(0.18, 0.30))}, onset_s=onset)
    if choice == "cpu_moderate":
        return FaultInjection(node, FaultKind.CPU_MISCONFIG, {"factor": float(rng.uniform(1.12, 1.18))}, onset_s=onset)
    # Deliberately sub-threshold: single weak signal, honest false negatives.
    if rng.random() < 0.5:
        return FaultInjection(node, FaultKind.CPU_MISCONFIG, {"factor": float(rng.uniform(1.03, 1.06))}, onset_s=onset)
    return FaultInjection(node, FaultKind.POWER_ANOMALY, {"fraction_below": float(rng.uniform(0.05, 0.08))}, onset_s=onset)


def corpus_run_config(seed: int) -> ScenarioConfig:
    """One small labeled run: 12 nodes, 3 faulty, observe-only loop."""

    rng = np.random.default_rng(seed + 1_000_003)
    nodes = [f"n{i:03d}" for i in range(12)]
    picked = sorted(int(i) for i in rng.choice(12, size=3, replace=False))
    faults = tuple(
        _corpus_fault(nodes[i], rng, onset=float(rng.uniform(100.0, 350.0))) for i in picked
    )
    return ScenarioConfig(
        node_count=12,
        spare_count=2,
        jobs=(JobSpec("job0", 12, 1),),
        faults=faults,
        horizon_steps=100,
        seed=seed,
        poll_period_s=60.0,
        online_monitoring=False,  # observe-only: flags recorded, nothing excised
        sweep_on_repair=False,
        fail_after_s=1e9,  # no failure escalation in the measurement corpus
    )


def generate_labeled_corpus(
    n_positive: int, n_negative: int, seed: int = 0
) -> list[NodeInterval]:
    """Seeded scenario runs until both interval quotas are met, then sliced."""

    positives: list[NodeInterval] = []
    negatives: list[NodeInterval] = []
    run = 0
    while len(positives) < n_positive or len(negatives) < n_negative:
        trace = run_scenario(corpus_run_config(seed * 100_000 + run))
        for interval in collect_node_intervals(trace, run_id=run):
            (positives if interval.faulty else negatives).append(interval)
        run += 1
    return positives[:n_positive] + negatives[:n_negative]


# ---------------------------------------------------------------------------
# Replay detection over external metric streams


def detect_replay(
    lines: Iterable[str],
    detector_cfg: DetectorConfig | None = None,
    ingest_cfg: IngestConfig | None = None,
    strict: bool = False,
) -> list[dict]:
    """Run ingest + detector over a metrics JSONL stream; emit flag events.

    All device-reporting nodes are treated as one peer group. With
    node-attributed step samples the flags localize to nodes; in pure
    job-level mode (detector_cfg.node_attribution=False) step times are
    judged against the job's own trailing median and flags carry the job id,
    deferring localization to sweeps.
    """

    detector_cfg = detector_cfg or DetectorConfig()
    ingest_cfg = ingest_cfg or IngestConfig()
    samples = [parse_metric_record(line, strict=strict) for line in lines if line.strip()]
    samples.sort(key=lambda s: s.timestamp)
    aggregated = window_aggregate(samples, ingest_cfg)

    by_window: dict[int, list[WindowStats]] = {}
    gaps: dict[tuple[int, NodeId], set[MetricKind]] = {}
    for item in aggregated:
        if isinstance(item, DataGap):
            node = item.device.node
            if node is None:
                continue
            for w in range(item.start_window, item.end_window + 1):
                gaps.setdefault((w, node), set()).add(item.kind)
            continue
        by_window.setdefault(item.window_index, []).append(item)

    tracker = NodeFlagTracker(detector_cfg)
    job_history: dict[str, list[float]] = {}
    flags: list[dict] = []
    for window in sorted(by_window):
        stats = by_window[window]
        device_stats: dict[NodeId, list[WindowStats]] = {}
        step_values: dict[str, dict[NodeId, float]] = {}
        job_steps: dict[str, float] = {}
        for s in stats:
            if isinstance(s.device, JobRef):
                if s.device.node is not None:
                    step_values.setdefault(s.device.job_id, {})[s.device.node] = s.mean
                else:
                    job_steps[s.device.job_id] = s.mean
            else:
                device_stats.setdefault(s.device.node, []).append(s)

        node_values = {n: node_level_values(sts) for n, sts in device_stats.items()}
        if detector_cfg.node_attribution:
            for job_id, per_node in step_values.items():
                for node, value in per_node.items():
                    node_values.setdefault(node, {})[MetricKind.STEP_TIME] = value
        baselines = {}
        for kind in MetricKind:
            contributions = {n: v[kind] for n, v in node_values.items() if kind in v}
            if len(contributions) >= 2:
                baselines[kind] = peer_baseline(contributions, kind, window)
        gapped = {n for (w, n) in gaps if w == window}
        for node in sorted(set(node_values) | gapped):
            if not baselines:
                continue
            report = evaluate_node(
                node,
                node_values.get(node, {}),
                baselines,
                detector_cfg,
                gap_kinds=frozenset(gaps.get((window, node), ())),
            )
            flag = tracker.observe(report)
            if flag is not None:
                flags.append(
                    {
                        "event": "flag",
                        "node": flag.node,
                        "window": flag.first_window,
                        "severity": flag.severity.value,
                        "kinds": sorted(k.wire_name for k in flag.contributing_kinds),
                    }
                )

        if not detector_cfg.node_attribution:
            for job_id, value in sorted(job_steps.items()):
                history = job_history.setdefault(job_id, [])
                if len(history) >= 3:
                    baseline = statistics.median(history)
                    slowdown = (value - baseline) / baseline if baseline > 0 else 0.0
                else:
                    slowdown = 0.0
                report = DeviationReport(
                    node=f"job:{job_id}",
                    window_index=window,
                    flagged_kinds=frozenset(),
                    relative_step_slowdown=slowdown,
                )
                flag = tracker.observe(report)
                history.append(value)
                if len(history) > 10:
                    del history[0]
                if flag is not None:
                    flags.append(
                        {
                            "event": "flag",
                            "node": flag.node,
                            "window": flag.first_window,
                            "severity": flag.severity.value,
                            "kinds": ["step_time_s"],
                            "localization": "job",
                        }
                    )
    return flags
