"""Closed-loop scenario runs: the whole system in simulated time.

One run drives synchronous training steps over a node pool while injected
faults activate, metrics flow through windowed aggregation into the
peer-relative detector, the pool policy reacts (monitor / defer / restart),
quarantined nodes get swept and triaged, and every decision lands in an
append-only event log next to ground-truth fault labels. Identical config
and seed produce byte-identical trace files.

Escalation when nobody intervenes: a node whose ground-truth slowdown stays
at the severe tier for fail_after_s takes the whole job down (the stall /
timeout path), which is what the no-detection ablation arm degenerates to.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .detector import (
    DetectorConfig,
    NodeFlagTracker,
    evaluate_node,
    node_level_values,
    peer_baseline,
)
from .events import EventLog
from .ingest import IngestConfig, WindowAccumulator, WindowStats
from .model import (
    JobRef,
    JobTopology,
    MetricKind,
    MetricSample,
    NodeId,
    StepTimeRecord,
    sample_to_json_dict,
    step_record_to_json_dict,
)
from .policy import ActionKind, NodePool, PoolStatus, SweepRequest, TriageOutcome
from .sim import (
    FaultInjection,
    FaultKind,
    NodeProfile,
    SimParams,
    emit_metrics,
    profile_from_faults,
    step_contributions,
    true_slowdown,
)
from .sweep import (
    PairSweepReport,
    SweepConfig,
    judge_sweep,
    run_multi_node_sweep,
    run_single_node_sweep,
)
from .triage import (
    ErrorSignals,
    TriageConfig,
    TriageStage,
    TriageState,
    record_strike,
    run_triage,
)


class ConfigError(ValueError):
    """Scenario configuration is inconsistent."""


@dataclass(frozen=True)
class JobSpec:
    job_id: str = "job0"
    size: int = 0  # 0 = all active nodes
    sync_points_per_step: int = 1


@dataclass(frozen=True)
class RandomFaultMix:
    """Per-seed fault sampling for run-to-run variance experiments."""

    min_faults: int = 1
    max_faults: int = 3
    onset_lo_s: float = 600.0
    onset_hi_s: float = 3000.0
    kinds: tuple[FaultKind, ...] = (
        FaultKind.THERMAL,
        FaultKind.NVLINK_DEGRADE,
        FaultKind.POWER_ANOMALY,
        FaultKind.CPU_MISCONFIG,
        FaultKind.NIC_FAILOVER,
    )

    def sample(self, rng: np.random.Generator, nodes: list[NodeId]) -> tuple[FaultInjection, ...]:
        count = int(rng.integers(self.min_faults, self.max_faults + 1))
        count = min(count, len(nodes))
        picked = rng.choice(len(nodes), size=count, replace=False)
        faults = []
        for idx in sorted(int(i) for i in picked):
            node = nodes[idx]
            kind = self.kinds[int(rng.integers(0, len(self.kinds)))]
            onset = float(rng.uniform(self.onset_lo_s, self.onset_hi_s))
            if kind is FaultKind.THERMAL:
                params = {"gpu": int(rng.integers(0, 8)), "temp_c": float(rng.uniform(70.0, 85.0))}
            elif kind is FaultKind.NVLINK_DEGRADE:
                i = int(rng.integers(0, 7))
                params = {"i": i, "j": int(rng.integers(i + 1, 8)), "factor": float(rng.uniform(0.4, 0.6))}
            elif kind is FaultKind.POWER_ANOMALY:
                params = {"fraction_below": float(rng.uniform(0.18, 0.30))}
            elif kind is FaultKind.CPU_MISCONFIG:
                params = {"factor": float(rng.uniform(1.10, 1.18))}
            else:
                params = {"failed_nic": int(rng.integers(1, 8)), "fallback_nic": 0}
            faults.append(FaultInjection(node=node, kind=kind, params=params, onset_s=onset))
        return tuple(faults)


@dataclass(frozen=True)
class ScenarioConfig:
    node_count: int = 8
    spare_count: int = 2
    jobs: tuple[JobSpec, ...] = (JobSpec(),)
    faults: tuple[FaultInjection, ...] = ()
    random_faults: RandomFaultMix | None = None
    horizon_steps: int = 200
    seed: int = 0
    params: SimParams = field(default_factory=SimParams)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    triage: TriageConfig = field(default_factory=TriageConfig)
    window_len_s: float = 60.0
    poll_period_s: float = 30.0
    checkpoint_every_steps: int = 50
    online_monitoring: bool = True
    sweep_on_repair: bool = True
    fail_after_s: float = 900.0
    job_failure_downtime_s: float = 600.0
    restart_downtime_s: float = 300.0
    checkpoint_swap_downtime_s: float = 60.0

    def validate(self) -> None:
        if self.horizon_steps < 1:
            raise ConfigError("horizon_steps must be >= 1")
        if self.node_count < 1:
            raise ConfigError("node_count must be >= 1")
        if self.window_len_s < self.poll_period_s:
            raise ConfigError("window_len_s must cover at least one polling period")
        sizes = sum(spec.size or self.node_count for spec in self.jobs)
        if sizes > self.node_count:
            raise ConfigError("jobs need more nodes than the pool has")
        active = {f"n{i:03d}" for i in range(self.node_count)}
        for fault in self.faults:
            if fault.node not in active:
                raise ConfigError(f"fault on unknown node {fault.node}")


def node_ids(count: int) -> list[NodeId]:
    return [f"n{i:03d}" for i in range(count)]


def spare_ids(count: int) -> list[NodeId]:
    return [f"sp{i:03d}" for i in range(count)]


@dataclass
class RunSummary:
    seed: int
    completed_steps: int = 0
    final_t: float = 0.0
    downtime_s: float = 0.0
    mean_step_s: float = 0.0


@dataclass
class ScenarioTrace:
    """Full deterministic output of one run."""

    config_echo: dict
    samples: list[MetricSample] = field(default_factory=list)
    steps: list[StepTimeRecord] = field(default_factory=list)
    events: EventLog = field(default_factory=EventLog)
    labels: list[dict] = field(default_factory=list)
    summary: RunSummary = field(default_factory=lambda: RunSummary(seed=0))

    def write(self, outdir: Path | str) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "metrics.jsonl", "w", encoding="utf-8") as fh:
            for sample in self.samples:
                fh.write(json.dumps(sample_to_json_dict(sample)) + "\n")
        with open(outdir / "steps.jsonl", "w", encoding="utf-8") as fh:
            for rec in self.steps:
                fh.write(json.dumps(step_record_to_json_dict(rec)) + "\n")
        self.events.write_jsonl(outdir / "events.jsonl")
        with open(outdir / "labels.json", "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "horizon_s": self.summary.final_t,
                    "window_len_s": self.config_echo.get("window_len_s", 60.0),
                    "nodes": self.config_echo["nodes"],
                    "faults": self.labels,
                },
                fh,
                indent=1,
            )
        with open(outdir / "run.json", "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "seed": self.summary.seed,
                    "completed_steps": self.summary.completed_steps,
                    "final_t": self.summary.final_t,
                    "downtime_s": self.summary.downtime_s,
                    "mean_step_s": self.summary.mean_step_s,
                    "config": self.config_echo,
                },
                fh,
                indent=1,
            )

    @classmethod
    def read(cls, outdir: Path | str, with_metrics: bool = False) -> "ScenarioTrace":
        from .ingest import parse_metric_record
        from .model import step_record_from_json_dict

        outdir = Path(outdir)
        with open(outdir / "run.json", "r", encoding="utf-8") as fh:
            run = json.load(fh)
        with open(outdir / "labels.json", "r", encoding="utf-8") as fh:
            labels = json.load(fh)
        trace = cls(config_echo=run["config"])
        trace.labels = labels["faults"]
        trace.summary = RunSummary(
            seed=run["seed"],
            completed_steps=run["completed_steps"],
            final_t=run["final_t"],
            downtime_s=run["downtime_s"],
            mean_step_s=run["mean_step_s"],
        )
        trace.events = EventLog.read_jsonl(outdir / "events.jsonl")
        with open(outdir / "steps.jsonl", "r", encoding="utf-8") as fh:
            trace.steps = [step_record_from_json_dict(json.loads(line)) for line in fh if line.strip()]
        if with_metrics:
            with open(outdir / "metrics.jsonl", "r", encoding="utf-8") as fh:
                trace.samples = [parse_metric_record(line) for line in fh if line.strip()]
        return trace


@dataclass
class _PendingTask:
    ready_t: float
    seq: int
    kind: str
    node: NodeId
    payload: dict


class _Loop:
    """Mutable state of one run; run_scenario drives it to the horizon."""

    def __init__(self, cfg: ScenarioConfig):
        cfg.validate()
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.nodes = node_ids(cfg.node_count)
        self.spares = spare_ids(cfg.spare_count)

        faults = tuple(cfg.faults)
        if cfg.random_faults is not None:
            faults += cfg.random_faults.sample(self.rng, self.nodes)
        self.faults = faults
        self.profiles: dict[NodeId, NodeProfile] = {
            n: profile_from_faults(n, faults) for n in self.nodes + self.spares
        }

        self.pool = NodePool.bootstrap(self.nodes, self.spares)
        self.job_nodes: dict[str, list[NodeId]] = {}
        cursor = 0
        self.job_specs = {}
        for spec in cfg.jobs:
            size = spec.size or cfg.node_count
            self.job_nodes[spec.job_id] = list(self.nodes[cursor : cursor + size])
            self.job_specs[spec.job_id] = spec
            cursor += size

        self.windower = WindowAccumulator(IngestConfig(window_len_s=cfg.window_len_s))
        self.tracker = NodeFlagTracker(cfg.detector)
        self.trace = ScenarioTrace(config_echo=self._echo())
        self.trace.summary = RunSummary(seed=cfg.seed)

        self.t = 0.0
        self.next_poll = 0.0
        self.done_window = -1  # highest finalized window index
        self.downtime_s = 0.0
        self.severe_since: dict[NodeId, float] = {}
        self.triage_states: dict[NodeId, TriageState] = {}
        self.pending: list[_PendingTask] = []
        self._seq = 0

    # -- bookkeeping -------------------------------------------------------

    def _echo(self) -> dict:
        cfg = self.cfg
        return {
            "node_count": cfg.node_count,
            "spare_count": cfg.spare_count,
            "nodes": node_ids(cfg.node_count) + spare_ids(cfg.spare_count),
            "horizon_steps": cfg.horizon_steps,
            "seed": cfg.seed,
            "window_len_s": cfg.window_len_s,
            "poll_period_s": cfg.poll_period_s,
            "nominal_step_s": cfg.params.nominal_step_s,
            "jitter_sigma": cfg.params.jitter_sigma,
            "online_monitoring": cfg.online_monitoring,
            "sweep_on_repair": cfg.sweep_on_repair,
            "enhanced_sweep": cfg.sweep.enhanced,
            "jobs": [
                {"job_id": s.job_id, "size": s.size, "sync_points_per_step": s.sync_points_per_step}
                for s in cfg.jobs
            ],
            "faults": [
                {
                    "node": f.node,
                    "kind": f.kind.value,
                    "params": dict(f.params),
                    "onset_s": f.onset_s,
                    "end_s": None if math.isinf(f.end_s) else f.end_s,
                }
                for f in self.faults
            ],
        }

    def serving(self) -> frozenset[NodeId]:
        return frozenset(n for members in self.job_nodes.values() for n in members)

    def _schedule(self, ready_t: float, kind: str, node: NodeId, **payload) -> None:
        self.pending.append(_PendingTask(ready_t, self._seq, kind, node, payload))
        self._seq += 1

    def _topology(self, job_id: str) -> JobTopology:
        spec = self.job_specs[job_id]
        return JobTopology(
            job_id=job_id,
            nodes=tuple(self.job_nodes[job_id]),
            sync_points_per_step=spec.sync_points_per_step,
        )

    def _labels(self) -> list[dict]:
        return [
            {
                "node": f.node,
                "kind": f.kind.value,
                "params": dict(f.params),
                "onset_s": f.onset_s,
                "end_s": min(f.end_s, self.t),
            }
            for f in self.faults
        ]

    # -- pipeline stages ----------------------------------------------------

    def _swap_into_job(self, old: NodeId, new: NodeId | None) -> None:
        for members in self.job_nodes.values():
            if old in members:
                if new is None:
                    return
                members[members.index(old)] = new
                self.tracker.reset(old)
                self.tracker.reset(new)
                self.severe_since.pop(old, None)
                return

    def _drain_sweep_queue(self) -> None:
        while self.pool.sweep_queue:
            req: SweepRequest = self.pool.sweep_queue.pop(0)
            start = max(self.t, req.ready_at_s)
            self._schedule(start + self.cfg.sweep.sweep_duration_s, "sweep_done", req.node, reason=req.reason)

    def _pick_reference(self, suspect: NodeId) -> NodeProfile | None:
        serving = self.serving()
        best: tuple[float, str] | None = None
        found: NodeId | None = None
        for st in self.pool.states.values():
            if st.node == suspect or st.status is not PoolStatus.HEALTHY:
                continue
            if self.t - st.last_qualified_s > self.cfg.sweep.reference_recency_s:
                continue
            rank = (st.last_qualified_s, "1" if st.node not in serving else "0", st.node)
            if best is None or rank > best:
                best = rank
                found = st.node
        if found is None:
            return None
        return self.profiles[found]

    def _run_sweep(self, node: NodeId, reason: str) -> None:
        cfg = self.cfg
        prior = self.pool.status(node)
        if prior not in (PoolStatus.QUARANTINED, PoolStatus.PENDING_VERIFICATION):
            return
        profile = self.profiles[node]
        single = run_single_node_sweep(profile, cfg.sweep, cfg.params, self.rng, at_time=self.t)
        pair: PairSweepReport | None = None
        if cfg.sweep.enhanced:
            reference = self._pick_reference(node)
            if reference is None:
                self._schedule(self.t + cfg.sweep.sweep_duration_s, "sweep_done", node, reason=reason)
                return
            pair = run_multi_node_sweep(
                profile, [reference], cfg.sweep, cfg.params, self.rng, at_time=self.t
            )
        verdict = judge_sweep(single, pair, cfg.sweep)
        self.trace.events.append(
            "sweep",
            self.t,
            node=node,
            passed=verdict.passed,
            components=sorted(c.label() for c in verdict.failing_components),
            reason=reason,
        )
        opened_ticket = self.pool.on_sweep_result(node, verdict.passed, self.t)
        self.trace.events.append(
            "transition",
            self.t,
            node=node,
            **{"from": prior.value},
            to=self.pool.status(node).value,
            action="sweep_result",
        )
        if opened_ticket:
            self._open_triage(node)

    def _open_triage(self, node: NodeId) -> None:
        cfg = self.cfg
        state = self.triage_states.get(node, TriageState(node))
        state = replace(state, stage=TriageStage.QUARANTINED)
        self.trace.events.append("triage", self.t, node=node, stage="ticket_opened")
        state = record_strike(state, self.t, cfg.triage)
        recent = sum(1 for s in state.strikes if self.t - cfg.triage.strike_window_s <= s <= self.t)
        self.trace.events.append("strike", self.t, node=node, strikes_in_window=recent)
        if state.stage is TriageStage.TERMINATE:
            # Repeat offender: human terminates without running the chain.
            self.triage_states[node] = state
            self.trace.events.append("triage", self.t, node=node, stage="terminate", forced=True)
            self._terminate(node, reason="three strikes")
            return
        signals = ErrorSignals(self.profiles[node].emitting_errors(self.t))
        state, visited, duration = run_triage(state, signals, cfg.triage)
        self.triage_states[node] = state
        self._schedule(
            self.t + duration,
            "triage_resolved",
            node,
            stages=[s.value for s in visited],
            terminal=state.stage.value,
        )

    def _resolve_triage(self, node: NodeId, stages: list[str], terminal: str) -> None:
        for stage in stages:
            self.trace.events.append("triage", self.t, node=node, stage=stage)
        if terminal == TriageStage.TERMINATE.value:
            self._terminate(node, reason="remediation exhausted")
        else:
            self.pool.on_triage_outcome(node, TriageOutcome.RETURN_FOR_SWEEP, self.t)
            self._drain_sweep_queue()

    def _terminate(self, node: NodeId, reason: str) -> None:
        promoted, warning = self.pool.on_triage_outcome(node, TriageOutcome.TERMINATE, self.t)
        self.trace.events.append(
            "transition", self.t, node=node, **{"from": "quarantined"}, to="terminated", action=reason
        )
        self.trace.events.append("human", self.t, kind="termination", node=node, reason=reason)
        if warning:
            self.trace.events.append("human", self.t, kind="spare_exhausted", node=node)
        if promoted is not None:
            self.trace.events.append(
                "transition", self.t, node=promoted, **{"from": "spare"}, to="healthy", action="promoted"
            )

    def _process_pending(self) -> None:
        due = [p for p in self.pending if p.ready_t <= self.t]
        if not due:
            return
        due.sort(key=lambda p: (p.ready_t, p.seq))
        self.pending = [p for p in self.pending if p.ready_t > self.t]
        for task in due:
            if task.kind == "sweep_done":
                self._run_sweep(task.node, task.payload["reason"])
            elif task.kind == "triage_resolved":
                self._resolve_triage(task.node, task.payload["stages"], task.payload["terminal"])

    def _emit_polls(self) -> None:
        cfg = self.cfg
        while self.next_poll <= self.t:
            polled = {
                n: self.profiles[n]
                for n, st in self.pool.states.items()
                if st.status in (PoolStatus.HEALTHY, PoolStatus.PENDING_VERIFICATION)
            }
            batch = emit_metrics(polled, self.next_poll, cfg.params, self.rng)
            for sample in batch:
                self.windower.add(sample)
            self.trace.samples.extend(batch)
            self.next_poll += cfg.poll_period_s

    def _handle_flag(self, flag) -> None:
        cfg = self.cfg
        self.trace.events.append(
            "flag",
            self.t,
            node=flag.node,
            window=flag.first_window,
            severity=flag.severity.value,
            kinds=sorted(k.wire_name for k in flag.contributing_kinds),
            acted=cfg.online_monitoring,
        )
        if not cfg.online_monitoring:
            return
        prior = self.pool.status(flag.node)
        action = self.pool.apply_verdict(flag, self.t, self.serving())
        self.trace.events.append(
            "transition",
            self.t,
            node=flag.node,
            **{"from": prior.value},
            to=self.pool.status(flag.node).value,
            action=action.kind.value,
        )
        if action.warning:
            self.trace.events.append("human", self.t, kind="spare_exhausted", node=flag.node)
        if action.kind is ActionKind.MONITOR_CLOSELY:
            self.tracker.monitor_closely(flag.node)
        elif action.kind is ActionKind.IMMEDIATE_RESTART:
            self._swap_into_job(flag.node, action.replacement)
            self.downtime_s += cfg.restart_downtime_s
            self.t += cfg.restart_downtime_s
            self._drain_sweep_queue()

    def _detect_window(self, window: int) -> None:
        cfg = self.cfg
        stats = self.windower.finalize_window(window)
        # Group node-level stats: device metrics by node, step samples by (job, node).
        device_stats: dict[NodeId, list[WindowStats]] = {}
        step_values: dict[str, dict[NodeId, float]] = {}
        for s in stats:
            if isinstance(s.device, JobRef):
                if s.device.node is not None:
                    step_values.setdefault(s.device.job_id, {})[s.device.node] = s.mean
            else:
                device_stats.setdefault(s.device.node, []).append(s)

        for job_id, members in list(self.job_nodes.items()):
            if len(members) < 2:
                continue
            snapshot = list(members)
            node_values: dict[NodeId, dict[MetricKind, float]] = {}
            for node in snapshot:
                values = node_level_values(device_stats.get(node, []))
                step = step_values.get(job_id, {}).get(node)
                if step is not None:
                    values[MetricKind.STEP_TIME] = step
                node_values[node] = values

            baselines = {}
            for kind in MetricKind:
                contributions = {
                    n: v[kind] for n, v in node_values.items() if kind in v
                }
                if len(contributions) >= 2:
                    baselines[kind] = peer_baseline(contributions, kind, window)
            if not baselines:
                continue
            for node in snapshot:
                if node not in self.job_nodes[job_id]:
                    continue  # removed earlier in this same batch
                report = evaluate_node(node, node_values.get(node, {}), baselines, cfg.detector)
                flag = self.tracker.observe(report)
                if flag is not None:
                    self._handle_flag(flag)

    def _finalize_windows(self) -> None:
        complete_below = int(self.t // self.cfg.window_len_s)
        while self.done_window + 1 < complete_below:
            self.done_window += 1
            self._detect_window(self.done_window)

    def _checkpoint(self, step_index: int) -> None:
        cfg = self.cfg
        if not cfg.online_monitoring or step_index == 0:
            return
        if step_index % cfg.checkpoint_every_steps != 0:
            return
        if not self.pool.deferred:
            return
        swaps = self.pool.on_checkpoint(self.t, self.serving())
        for node, replacement in swaps:
            self.trace.events.append(
                "transition",
                self.t,
                node=node,
                **{"from": "pending_verification"},
                to="quarantined",
                action="checkpoint_swap",
            )
            self.trace.events.append("human", self.t, kind="checkpoint_maintenance", node=node)
            self._swap_into_job(node, replacement)
            self.downtime_s += cfg.checkpoint_swap_downtime_s
            self.t += cfg.checkpoint_swap_downtime_s
        self._drain_sweep_queue()

    def _check_job_failure(self) -> None:
        cfg = self.cfg
        for job_id, members in self.job_nodes.items():
            worst: tuple[float, NodeId] | None = None
            for node in members:
                slowdown = true_slowdown(self.profiles[node], self.t, cfg.params)
                if slowdown >= cfg.detector.severe_lo:
                    self.severe_since.setdefault(node, self.t)
                    since = self.severe_since[node]
                    if self.t - since >= cfg.fail_after_s:
                        # Most degraded node; ties break to the lowest id.
                        if worst is None or slowdown > worst[0] or (
                            slowdown == worst[0] and node < worst[1]
                        ):
                            worst = (slowdown, node)
                else:
                    self.severe_since.pop(node, None)
            if worst is None:
                continue
            slowdown, suspect = worst
            self.trace.events.append("job_failure", self.t, job=job_id, slowest=suspect)
            self.downtime_s += cfg.job_failure_downtime_s
            self.t += cfg.job_failure_downtime_s
            for node in members:
                self.severe_since[node] = self.t  # restart resets the stall clocks
            if cfg.sweep_on_repair:
                replacement = self.pool.draw_replacement(self.t, self.serving())
                if replacement is None:
                    self.trace.events.append("human", self.t, kind="spare_exhausted", node=suspect)
                    continue
                prior = self.pool.status(suspect)
                self.pool.quarantine_for_repair(suspect, self.t)
                self.trace.events.append(
                    "transition",
                    self.t,
                    node=suspect,
                    **{"from": prior.value},
                    to="quarantined",
                    action="post_failure_repair",
                )
                self._swap_into_job(suspect, replacement)
                self._drain_sweep_queue()

    # -- main loop -----------------------------------------------------------

    def run(self) -> ScenarioTrace:
        cfg = self.cfg
        walls = []
        for step_index in range(cfg.horizon_steps):
            self._process_pending()
            self._checkpoint(step_index)

            for job_id in self.job_nodes:
                topology = self._topology(job_id)
                contribs = step_contributions(
                    topology, self.profiles, self.t, self.rng, cfg.params
                )
                wall = max(contribs.values())
                slowest = min(n for n, v in contribs.items() if v == wall)
                t_end = self.t + wall
                record = StepTimeRecord(job_id, step_index, wall, slowest)
                self.trace.steps.append(record)
                walls.append(wall)
                for node in topology.nodes:
                    sample = MetricSample(
                        JobRef(job_id, node), MetricKind.STEP_TIME, t_end, contribs[node]
                    )
                    self.windower.add(sample)
                    self.trace.samples.append(sample)
                self.t = t_end

            self._emit_polls()
            self._finalize_windows()
            self._check_job_failure()

        self.trace.labels = self._labels()
        self.trace.summary = RunSummary(
            seed=cfg.seed,
            completed_steps=len(self.trace.steps),
            final_t=self.t,
            downtime_s=self.downtime_s,
            mean_step_s=float(np.mean(walls)) if walls else 0.0,
        )
        return self.trace


def run_scenario(cfg: ScenarioConfig) -> ScenarioTrace:
    """Run one scenario end to end; byte-deterministic given (config, seed)."""

    return _Loop(cfg).run()


def scenario_config_from_dict(raw: Mapping) -> ScenarioConfig:
    """Build a ScenarioConfig from a parsed JSON/TOML document."""

    try:
        params = SimParams(**raw.get("params", {}))
        detector_raw = dict(raw.get("detector", {}))
        floors = detector_raw.pop("mad_floors", None)
        if floors is not None:
            from .model import kind_from_wire

            detector_raw["mad_floors"] = {
                kind_from_wire(name): float(v) for name, v in floors.items()
            }
        detector = DetectorConfig(**detector_raw)
        sweep = SweepConfig(**raw.get("sweep", {}))
        triage = TriageConfig(**raw.get("triage", {}))
        jobs = tuple(JobSpec(**spec) for spec in raw.get("jobs", [{}]))
        faults = tuple(
            FaultInjection(
                node=f["node"],
                kind=FaultKind(f["kind"]),
                params=f.get("params", {}),
                onset_s=float(f.get("onset_s", 0.0)),
                end_s=float(f["end_s"]) if f.get("end_s") is not None else math.inf,
            )
            for f in raw.get("faults", [])
        )
        random_raw = raw.get("random_faults")
        random_faults = None
        if random_raw is not None:
            random_raw = dict(random_raw)
            if "kinds" in random_raw:
                random_raw["kinds"] = tuple(FaultKind(k) for k in random_raw["kinds"])
            random_faults = RandomFaultMix(**random_raw)
        scalar_keys = (
            "node_count",
            "spare_count",
            "horizon_steps",
            "seed",
            "window_len_s",
            "poll_period_s",
            "checkpoint_every_steps",
            "online_monitoring",
            "sweep_on_repair",
            "fail_after_s",
            "job_failure_downtime_s",
            "restart_downtime_s",
            "checkpoint_swap_downtime_s",
        )
        scalars = {k: raw[k] for k in scalar_keys if k in raw}
        return ScenarioConfig(
            jobs=jobs,
            faults=faults,
            random_faults=random_faults,
            params=params,
            detector=detector,
            sweep=sweep,
            triage=triage,
            **scalars,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad scenario config: {exc}") from exc
