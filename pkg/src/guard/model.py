"""Shared cluster vocabulary: nodes, devices, metrics, jobs, step records.

All types here are immutable value objects and safe to share across
concurrent readers. Timestamps are scenario-relative seconds (float),
never wall clock.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

GPUS_PER_NODE = 8
NICS_PER_NODE = 8

NodeId = str


class ValidationError(ValueError):
    """A record violates a domain invariant. Names the offending field."""

    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class MetricKind(Enum):
    """The eight monitored signals. StepTime is job-level, the rest device-level."""

    GPU_TEMPERATURE = "gpu_temp_c"
    GPU_UTILIZATION = "gpu_util"
    GPU_CLOCK_FREQUENCY = "gpu_clock_ghz"
    GPU_POWER_DRAW = "gpu_power_w"
    NIC_ERROR_COUNT = "nic_err_count"
    NIC_TRANSMIT_RATE = "nic_tx_gbps"
    NIC_LINK_UP = "nic_link_up"
    STEP_TIME = "step_time_s"

    @property
    def wire_name(self) -> str:
        return self.value

    @property
    def job_level(self) -> bool:
        return self is MetricKind.STEP_TIME


_KIND_BY_WIRE = {k.value: k for k in MetricKind}


def kind_from_wire(name: str) -> MetricKind:
    try:
        return _KIND_BY_WIRE[name]
    except KeyError:
        raise ValidationError("kind", f"unknown metric kind {name!r}") from None


@dataclass(frozen=True)
class DeviceRef:
    """One GPU slot on a node; NIC index follows the GPU<->NIC mapping."""

    node: NodeId
    gpu_index: int
    nic_index: int | None = None

    def __post_init__(self):
        if self.nic_index is None:
            object.__setattr__(self, "nic_index", self.gpu_index)


@dataclass(frozen=True)
class JobRef:
    """Reference for job-level samples; node set means node-attributed."""

    job_id: str
    node: NodeId | None = None


@dataclass(frozen=True)
class MetricSample:
    """One timestamped reading of one metric for one device (or job)."""

    device: DeviceRef | JobRef
    kind: MetricKind
    timestamp: float
    value: float


@dataclass(frozen=True)
class JobTopology:
    """A synchronous job: ordered participants and collectives per step."""

    job_id: str
    nodes: tuple[NodeId, ...]
    sync_points_per_step: int = 1

    def __post_init__(self):
        if not self.nodes:
            raise ValidationError("nodes", "job needs at least one participant")
        if len(set(self.nodes)) != len(self.nodes):
            raise ValidationError("nodes", "duplicate participant node")
        if self.sync_points_per_step < 1:
            raise ValidationError("sync_points_per_step", "must be >= 1")


@dataclass(frozen=True)
class StepTimeRecord:
    """Wall time of one synchronous step; progress gates on the slowest node."""

    job_id: str
    step_index: int
    wall_time_s: float
    slowest_node: NodeId

    def __post_init__(self):
        if self.step_index < 0:
            raise ValidationError("step_index", "must be >= 0")
        if not (self.wall_time_s > 0):
            raise ValidationError("wall_time_s", "must be positive")


def validate_sample(sample: MetricSample) -> None:
    """Raise ValidationError naming the violated field; returns None when valid."""

    if sample.timestamp < 0:
        raise ValidationError("timestamp", "negative")
    if not math.isfinite(sample.value):
        raise ValidationError("value", "not finite")
    if not math.isfinite(sample.timestamp):
        raise ValidationError("timestamp", "not finite")

    ref = sample.device
    if sample.kind.job_level:
        if not isinstance(ref, JobRef):
            raise ValidationError("device", "step time requires a job reference")
        if not ref.job_id:
            raise ValidationError("job", "empty job id")
        if ref.node is not None and not ref.node:
            raise ValidationError("node", "empty node id")
    else:
        if not isinstance(ref, DeviceRef):
            raise ValidationError("device", "device metric requires a device reference")
        if not ref.node:
            raise ValidationError("node", "empty node id")
        if not 0 <= ref.gpu_index < GPUS_PER_NODE:
            raise ValidationError("gpu", f"gpu index {ref.gpu_index} out of range")
        if not 0 <= ref.nic_index < NICS_PER_NODE:
            raise ValidationError("nic", f"nic index {ref.nic_index} out of range")

    kind, v = sample.kind, sample.value
    if kind is MetricKind.GPU_TEMPERATURE and not 0 <= v <= 120:
        raise ValidationError("value", f"temperature {v} outside [0, 120]")
    if kind is MetricKind.GPU_UTILIZATION and not 0 <= v <= 1:
        raise ValidationError("value", f"utilization {v} outside [0, 1]")
    if kind is MetricKind.GPU_CLOCK_FREQUENCY and not 0 < v <= 3:
        raise ValidationError("value", "non-positive" if v <= 0 else f"frequency {v} above 3 GHz")
    if kind is MetricKind.NIC_LINK_UP and v not in (0.0, 1.0):
        raise ValidationError("value", f"link state {v} not 0/1")
    if kind in (MetricKind.NIC_ERROR_COUNT, MetricKind.NIC_TRANSMIT_RATE, MetricKind.GPU_POWER_DRAW) and v < 0:
        raise ValidationError("value", "negative")
    if kind is MetricKind.STEP_TIME and v <= 0:
        raise ValidationError("value", "non-positive")


def sample_to_json_dict(sample: MetricSample) -> dict:
    """Encode to the JSONL wire schema (see ingest for the field contract)."""

    row: dict = {}
    ref = sample.device
    if isinstance(ref, JobRef):
        if ref.node is not None:
            row["node"] = ref.node
        row["job"] = ref.job_id
    else:
        row["node"] = ref.node
        row["gpu"] = ref.gpu_index
    row["kind"] = sample.kind.wire_name
    row["t"] = sample.timestamp
    row["v"] = sample.value
    return row


def step_record_to_json_dict(rec: StepTimeRecord) -> dict:
    return {
        "job": rec.job_id,
        "step": rec.step_index,
        "wall_s": rec.wall_time_s,
        "slowest": rec.slowest_node,
    }


def step_record_from_json_dict(row: dict) -> StepTimeRecord:
    return StepTimeRecord(
        job_id=row["job"],
        step_index=int(row["step"]),
        wall_time_s=float(row["wall_s"]),
        slowest_node=row["slowest"],
    )
