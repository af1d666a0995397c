"""Peer-relative grey-node detection.

Each metric is judged against the median of the peer nodes serving the same
job, with a MAD scale (floored per kind so a perfectly homogeneous cluster
does not become hypersensitive). A node is flagged only when enough signals
deviate in the harmful direction across enough consecutive windows, or when
its step-time slowdown alone is sustained at the severe tier. Step time is
the primary signal; hardware metrics are supporting evidence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .ingest import WindowStats
from .model import MetricKind, NodeId

STALL = math.inf

# Deviation direction that indicates harm, per signal.
_HARMFUL_HIGH = {
    MetricKind.GPU_TEMPERATURE,
    MetricKind.NIC_ERROR_COUNT,
    MetricKind.STEP_TIME,
}

# Worst-device reduction: a single bad GPU gates the whole node's collectives,
# so the node-level value is its worst device, not the average.
_REDUCE_MAX = {MetricKind.GPU_TEMPERATURE, MetricKind.NIC_ERROR_COUNT}

DEFAULT_MAD_FLOORS = {
    MetricKind.GPU_TEMPERATURE: 1.0,
    MetricKind.GPU_CLOCK_FREQUENCY: 0.05,
    MetricKind.GPU_POWER_DRAW: 10.0,
    MetricKind.NIC_TRANSMIT_RATE: 1.0,
    MetricKind.NIC_ERROR_COUNT: 1.0,
    MetricKind.GPU_UTILIZATION: 0.02,
    MetricKind.STEP_TIME: 0.05,
    MetricKind.NIC_LINK_UP: 0.0,
}


class InsufficientPeers(ValueError):
    """Fewer than two peers contributed to a baseline."""


class SeverityTier(Enum):
    NO_IMPACT = "no_impact"
    MODERATE = "moderate"
    SEVERE = "severe"

    @property
    def rank(self) -> int:
        return {"no_impact": 0, "moderate": 1, "severe": 2}[self.value]


@dataclass(frozen=True)
class DetectorConfig:
    deviation_z: float = 3.0
    k_windows: int = 3
    min_signals: int = 2
    moderate_lo: float = 0.10
    severe_lo: float = 0.20
    stall_factor: float = 5.0
    node_attribution: bool = True
    mad_floors: Mapping[MetricKind, float] = field(
        default_factory=lambda: dict(DEFAULT_MAD_FLOORS)
    )

    def __post_init__(self):
        if not 0 < self.moderate_lo < self.severe_lo:
            raise ValueError("need 0 < moderate_lo < severe_lo")
        if self.k_windows < 1 or self.min_signals < 1:
            raise ValueError("k_windows and min_signals must be >= 1")


@dataclass(frozen=True)
class PeerBaseline:
    kind: MetricKind
    window_index: int
    median: float
    mad: float
    peer_count: int


@dataclass(frozen=True)
class DeviationReport:
    node: NodeId
    window_index: int
    flagged_kinds: frozenset[MetricKind]
    relative_step_slowdown: float = 0.0


@dataclass(frozen=True)
class GreyNodeFlag:
    node: NodeId
    first_window: int
    confirming_windows: int
    contributing_kinds: frozenset[MetricKind]
    severity: SeverityTier


def median(values: Sequence[float]) -> float:
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    if n % 2:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2.0


def node_level_value(stats: Iterable[WindowStats], kind: MetricKind) -> float:
    """Reduce one node's per-device window stats to its worst device."""

    values = [s.mean for s in stats if s.kind is kind]
    if not values:
        raise ValueError(f"no stats for {kind}")
    return max(values) if kind in _REDUCE_MAX else min(values)


def node_level_values(stats: Iterable[WindowStats]) -> dict[MetricKind, float]:
    """Worst-device reduction for every kind present in one node's stats."""

    per_kind: dict[MetricKind, list[float]] = {}
    for s in stats:
        per_kind.setdefault(s.kind, []).append(s.mean)
    return {
        kind: (max(means) if kind in _REDUCE_MAX else min(means))
        for kind, means in per_kind.items()
    }


def peer_baseline(
    values: Mapping[NodeId, float], kind: MetricKind, window_index: int
) -> PeerBaseline:
    """Median/MAD over node-level values of all job participants."""

    if len(values) < 2:
        raise InsufficientPeers(f"{kind} window {window_index}: {len(values)} peer(s)")
    med = median(list(values.values()))
    mad = median([abs(v - med) for v in values.values()])
    return PeerBaseline(kind, window_index, med, mad, len(values))


def evaluate_node(
    node: NodeId,
    node_values: Mapping[MetricKind, float],
    baselines: Mapping[MetricKind, PeerBaseline],
    cfg: DetectorConfig,
    gap_kinds: frozenset[MetricKind] = frozenset(),
) -> DeviationReport:
    """Flag kinds deviating beyond z*max(MAD, floor) in the harmful direction.

    Kinds missing on either side are simply not flagged, except a data gap on
    the link-status channel, which is itself a down signal. The step slowdown
    is (node-attributed step time - peer median) / peer median, with a stall
    sentinel (inf) when the deadline of stall_factor * peer median is blown.
    """

    flagged = set()
    window_index = 0
    for kind, base in baselines.items():
        window_index = base.window_index
        if kind not in node_values:
            continue
        delta = node_values[kind] - base.median
        if kind not in _HARMFUL_HIGH:
            delta = -delta
        scale = max(base.mad, cfg.mad_floors.get(kind, 0.0))
        if delta > cfg.deviation_z * scale:
            flagged.add(kind)

    if MetricKind.NIC_LINK_UP in gap_kinds:
        flagged.add(MetricKind.NIC_LINK_UP)

    slowdown = 0.0
    step_base = baselines.get(MetricKind.STEP_TIME)
    if step_base is not None and MetricKind.STEP_TIME in node_values and step_base.median > 0:
        value = node_values[MetricKind.STEP_TIME]
        if value > cfg.stall_factor * step_base.median:
            slowdown = STALL
        else:
            slowdown = (value - step_base.median) / step_base.median

    return DeviationReport(
        node=node,
        window_index=window_index,
        flagged_kinds=frozenset(flagged),
        relative_step_slowdown=slowdown,
    )


def classify_severity(
    slowdown_history: Sequence[float],
    cfg: DetectorConfig,
    k_windows: int | None = None,
) -> SeverityTier:
    """Tier the last k_windows of step slowdown.

    A stall sentinel anywhere in the considered tail is Severe immediately.
    Otherwise the tier requires a full k_windows of history (sustainedness);
    the tier is set by the minimum over that tail.
    """

    if not slowdown_history:
        raise ValueError("empty slowdown history")
    k = k_windows if k_windows is not None else cfg.k_windows
    tail = slowdown_history[-k:]
    if any(math.isinf(v) for v in tail):
        return SeverityTier.SEVERE
    if len(tail) < k:
        return SeverityTier.NO_IMPACT
    floor = min(tail)
    if floor >= cfg.severe_lo:
        return SeverityTier.SEVERE
    if floor >= cfg.moderate_lo:
        return SeverityTier.MODERATE
    return SeverityTier.NO_IMPACT


def flag_decision(
    reports: Sequence[DeviationReport],
    cfg: DetectorConfig,
    k_windows: int | None = None,
) -> GreyNodeFlag | None:
    """Emit a flag at the first window where deviation is sustained.

    Window W qualifies when the k consecutive windows ending at W either all
    carry >= min_signals flagged kinds (hardware path) or classify Severe on
    step slowdown alone (step-time path). A missing window index breaks a
    run. Returns None when no window qualifies. Deterministic.
    """

    k = k_windows if k_windows is not None else cfg.k_windows
    for i in range(len(reports)):
        if i + 1 < k:
            continue
        run = reports[i - k + 1 : i + 1]
        if any(
            b.window_index != a.window_index + 1 for a, b in zip(run, run[1:])
        ):
            continue
        slowdowns = [r.relative_step_slowdown for r in run]
        severity = classify_severity(slowdowns, cfg, k_windows=k)
        hardware = all(len(r.flagged_kinds) >= cfg.min_signals for r in run)
        if not hardware and severity is not SeverityTier.SEVERE:
            continue
        kinds = frozenset().union(*(r.flagged_kinds for r in run))
        if not hardware and MetricKind.STEP_TIME not in kinds:
            kinds = kinds | {MetricKind.STEP_TIME}
        return GreyNodeFlag(
            node=reports[i].node,
            first_window=reports[i].window_index,
            confirming_windows=k,
            contributing_kinds=kinds,
            severity=severity,
        )
    return None


class NodeFlagTracker:
    """Streaming wrapper over flag_decision for the scenario loop.

    Holds the trailing k reports per node and re-arms after each emitted
    flag only on severity escalation, so a persistently bad node yields one
    flag per service episode instead of one per window.
    """

    def __init__(self, cfg: DetectorConfig):
        self.cfg = cfg
        self._history: dict[NodeId, list[DeviationReport]] = {}
        self._last_severity: dict[NodeId, SeverityTier] = {}
        self._k_override: dict[NodeId, int] = {}

    def monitor_closely(self, node: NodeId) -> None:
        """Halve the confirmation horizon for a node under closer watch."""

        self._k_override[node] = max(1, self.cfg.k_windows // 2)

    def reset(self, node: NodeId) -> None:
        self._history.pop(node, None)
        self._last_severity.pop(node, None)
        self._k_override.pop(node, None)

    def observe(self, report: DeviationReport) -> GreyNodeFlag | None:
        k = self._k_override.get(report.node, self.cfg.k_windows)
        history = self._history.setdefault(report.node, [])
        history.append(report)
        if len(history) > max(k, self.cfg.k_windows):
            del history[: len(history) - max(k, self.cfg.k_windows)]
        flag = flag_decision(history, self.cfg, k_windows=k)
        if flag is None:
            return None
        last = self._last_severity.get(report.node)
        if last is not None and flag.severity.rank <= last.rank:
            return None
        self._last_severity[report.node] = flag.severity
        return flag
