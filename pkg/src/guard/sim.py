"""Deterministic fault-injecting cluster model.

Encodes the observed slowdown taxonomy: CPU misconfiguration (multiplicative,
up to ~15%), NIC failover (additive ~0.3 s per sync point, rerouted through a
fallback adapter that carries doubled traffic), thermal downclocking (compute
scales with the slowest GPU's protective frequency drop), power-delivery
anomalies and degraded NVLink paths. Step-time composition is multiplicative
for compute factors and additive for communication penalties; jitter is
relative lognormal so times stay positive and zero sigma is exactly noiseless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np

from .model import (
    GPUS_PER_NODE,
    DeviceRef,
    JobRef,
    JobTopology,
    MetricKind,
    MetricSample,
    NodeId,
    StepTimeRecord,
    ValidationError,
)

NOMINAL_FREQ_GHZ = 1.93
HEALTHY_TEMP_C = 50.0

# Protective downclocking: measured (temperature, sustained clock) anchors.
THERMAL_CURVE = ((50.0, 1.93), (60.0, 1.93), (69.0, 1.78), (77.0, 1.38))


def thermal_freq(temp_c: float) -> float:
    """Sustained clock at a steady temperature, GHz.

    Piecewise-linear through the measured anchors, clamped flat outside
    [50, 77] degC; monotone non-increasing. Exact at the anchors.
    """

    if not 0 <= temp_c <= 120:
        raise ValueError(f"temperature {temp_c} outside [0, 120]")
    points = THERMAL_CURVE
    if temp_c <= points[0][0]:
        return points[0][1]
    if temp_c >= points[-1][0]:
        return points[-1][1]
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        if temp_c <= x1:
            if temp_c == x0:
                return y0
            return y0 + (y1 - y0) * (temp_c - x0) / (x1 - x0)
    return points[-1][1]


class FaultKind(Enum):
    THERMAL = "thermal"
    CPU_MISCONFIG = "cpu_misconfig"
    NIC_FAILOVER = "nic_failover"
    POWER_ANOMALY = "power_anomaly"
    NVLINK_DEGRADE = "nvlink_degrade"
    GPU_ERRORS = "gpu_errors"

    @property
    def affects_internode_comm(self) -> bool:
        """Kinds whose damage shows up in cross-node synchronous steps only."""

        return self in (FaultKind.NIC_FAILOVER, FaultKind.CPU_MISCONFIG)

    @property
    def emits_errors(self) -> bool:
        """Kinds that surface as explicit GPU/NIC error signals."""

        return self in (FaultKind.NIC_FAILOVER, FaultKind.GPU_ERRORS)


@dataclass(frozen=True)
class FaultInjection:
    node: NodeId
    kind: FaultKind
    params: Mapping[str, object] = field(default_factory=dict)
    onset_s: float = 0.0
    end_s: float = math.inf

    def active(self, t: float) -> bool:
        return self.onset_s <= t < self.end_s


@dataclass(frozen=True)
class NicFailover:
    failed_nic: int
    fallback_nic: int = 0


@dataclass(frozen=True)
class NodeProfile:
    """A node's steady-state behavior, fault aspects gated by time windows."""

    node: NodeId
    steady_temp_c: tuple[float, ...] = (HEALTHY_TEMP_C,) * GPUS_PER_NODE
    cpu_slowdown_factor: float = 1.0
    nic_failover: NicFailover | None = None
    power_anomaly: float | None = None
    nvlink_degrade: Mapping[tuple[int, int], float] | None = None
    gpu_error_emitting: bool = False
    onset_s: Mapping[FaultKind, float] = field(default_factory=dict)
    end_s: Mapping[FaultKind, float] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.steady_temp_c) != GPUS_PER_NODE:
            raise ValidationError("steady_temp_c", "need one temperature per GPU")
        for temp in self.steady_temp_c:
            if not 30 <= temp <= 95:
                raise ValidationError("steady_temp_c", f"{temp} outside [30, 95]")
        if self.cpu_slowdown_factor < 1.0:
            raise ValidationError("cpu_slowdown_factor", "must be >= 1.0")
        if self.nic_failover is not None and self.nic_failover.failed_nic == self.nic_failover.fallback_nic:
            raise ValidationError("nic_failover", "fallback must differ from failed NIC")
        if self.power_anomaly is not None and not 0 < self.power_anomaly < 1:
            raise ValidationError("power_anomaly", "fraction below nominal must be in (0, 1)")
        if self.nvlink_degrade:
            for pair, factor in self.nvlink_degrade.items():
                if not 0 < factor <= 1:
                    raise ValidationError("nvlink_degrade", f"factor {factor} for {pair} outside (0, 1]")

    def fault_active(self, kind: FaultKind, t: float | None) -> bool:
        """Whether the fault aspect applies at time t (None = steady state:
        every present fault counts as active, regardless of windows)."""

        present = {
            FaultKind.THERMAL: any(temp != HEALTHY_TEMP_C for temp in self.steady_temp_c),
            FaultKind.CPU_MISCONFIG: self.cpu_slowdown_factor > 1.0,
            FaultKind.NIC_FAILOVER: self.nic_failover is not None,
            FaultKind.POWER_ANOMALY: self.power_anomaly is not None,
            FaultKind.NVLINK_DEGRADE: bool(self.nvlink_degrade),
            FaultKind.GPU_ERRORS: self.gpu_error_emitting,
        }[kind]
        if not present:
            return False
        if t is None:
            return True
        return self.onset_s.get(kind, 0.0) <= t < self.end_s.get(kind, math.inf)

    def temps_at(self, t: float | None) -> tuple[float, ...]:
        if self.fault_active(FaultKind.THERMAL, t):
            return self.steady_temp_c
        return (HEALTHY_TEMP_C,) * GPUS_PER_NODE

    def emitting_errors(self, t: float | None) -> bool:
        return self.fault_active(FaultKind.GPU_ERRORS, t) or self.fault_active(
            FaultKind.NIC_FAILOVER, t
        )


def healthy_profile(node: NodeId) -> NodeProfile:
    return NodeProfile(node=node)


def profile_from_faults(node: NodeId, faults: Iterable[FaultInjection]) -> NodeProfile:
    """Fold a node's injections into one profile with per-fault windows."""

    temps = [HEALTHY_TEMP_C] * GPUS_PER_NODE
    cpu = 1.0
    failover = None
    power = None
    nvlink: dict[tuple[int, int], float] = {}
    errors = False
    onset: dict[FaultKind, float] = {}
    end: dict[FaultKind, float] = {}

    for f in faults:
        if f.node != node:
            continue
        onset[f.kind] = f.onset_s
        end[f.kind] = f.end_s
        p = f.params
        if f.kind is FaultKind.THERMAL:
            if "temps_c" in p:
                temps = list(p["temps_c"])  # type: ignore[arg-type]
            else:
                temps[int(p["gpu"])] = float(p["temp_c"])  # type: ignore[arg-type]
        elif f.kind is FaultKind.CPU_MISCONFIG:
            cpu = float(p["factor"])  # type: ignore[arg-type]
        elif f.kind is FaultKind.NIC_FAILOVER:
            failover = NicFailover(
                failed_nic=int(p.get("failed_nic", 5)),  # type: ignore[arg-type]
                fallback_nic=int(p.get("fallback_nic", 0)),  # type: ignore[arg-type]
            )
        elif f.kind is FaultKind.POWER_ANOMALY:
            power = float(p["fraction_below"])  # type: ignore[arg-type]
        elif f.kind is FaultKind.NVLINK_DEGRADE:
            if "links" in p:
                for i, j, factor in p["links"]:  # type: ignore[union-attr]
                    nvlink[(int(i), int(j))] = float(factor)
            else:
                nvlink[(int(p["i"]), int(p["j"]))] = float(p["factor"])  # type: ignore[arg-type]
        elif f.kind is FaultKind.GPU_ERRORS:
            errors = True

    return NodeProfile(
        node=node,
        steady_temp_c=tuple(temps),
        cpu_slowdown_factor=cpu,
        nic_failover=failover,
        power_anomaly=power,
        nvlink_degrade=nvlink or None,
        gpu_error_emitting=errors,
        onset_s=onset,
        end_s=end,
    )


@dataclass(frozen=True)
class SimParams:
    """Step-model and emission constants shared by jobs and sweeps."""

    nominal_step_s: float = 8.4
    jitter_sigma: float = 0.005  # relative lognormal sigma on compute time
    metric_noise_sigma: float = 0.005
    nic_failover_penalty_s: float = 0.3
    nvlink_step_weight: float = 0.25
    nominal_power_w: float = 700.0
    nominal_tx_gbps: float = 25.0
    nominal_util: float = 0.95
    failover_err_count: float = 50.0


def expected_contribution(
    profile: NodeProfile, t: float, params: SimParams, sync_points: int = 1
) -> float:
    """Zero-jitter step contribution of one node; the ground-truth step cost."""

    base = params.nominal_step_s
    if profile.fault_active(FaultKind.CPU_MISCONFIG, t):
        base *= profile.cpu_slowdown_factor
    if profile.fault_active(FaultKind.THERMAL, t):
        worst = min(thermal_freq(temp) for temp in profile.steady_temp_c)
        base *= NOMINAL_FREQ_GHZ / worst
    if profile.fault_active(FaultKind.POWER_ANOMALY, t):
        base *= 1.0 + profile.power_anomaly
    if profile.fault_active(FaultKind.NVLINK_DEGRADE, t):
        worst_link = min(profile.nvlink_degrade.values())
        base *= 1.0 + (1.0 / worst_link - 1.0) * params.nvlink_step_weight
    if profile.fault_active(FaultKind.NIC_FAILOVER, t):
        base += params.nic_failover_penalty_s * sync_points
    return base


def true_slowdown(profile: NodeProfile, t: float, params: SimParams) -> float:
    """Ground-truth relative slowdown vs nominal, jitter-free."""

    return expected_contribution(profile, t, params) / params.nominal_step_s - 1.0


def node_step_contribution(
    profile: NodeProfile,
    t: float,
    rng: np.random.Generator,
    params: SimParams,
    sync_points: int = 1,
) -> float:
    """One node's step cost: compute factors jittered, comm penalty additive."""

    base = params.nominal_step_s
    if profile.fault_active(FaultKind.CPU_MISCONFIG, t):
        base *= profile.cpu_slowdown_factor
    if profile.fault_active(FaultKind.THERMAL, t):
        worst = min(thermal_freq(temp) for temp in profile.steady_temp_c)
        base *= NOMINAL_FREQ_GHZ / worst
    if profile.fault_active(FaultKind.POWER_ANOMALY, t):
        base *= 1.0 + profile.power_anomaly
    if profile.fault_active(FaultKind.NVLINK_DEGRADE, t):
        worst_link = min(profile.nvlink_degrade.values())
        base *= 1.0 + (1.0 / worst_link - 1.0) * params.nvlink_step_weight
    if params.jitter_sigma > 0:
        base *= float(rng.lognormal(0.0, params.jitter_sigma))
    if profile.fault_active(FaultKind.NIC_FAILOVER, t):
        base += params.nic_failover_penalty_s * sync_points
    return base


def step_contributions(
    topology: JobTopology,
    profiles: Mapping[NodeId, NodeProfile],
    t: float,
    rng: np.random.Generator,
    params: SimParams,
) -> dict[NodeId, float]:
    return {
        node: node_step_contribution(
            profiles[node], t, rng, params, topology.sync_points_per_step
        )
        for node in topology.nodes
    }


def simulate_step(
    topology: JobTopology,
    profiles: Mapping[NodeId, NodeProfile],
    t: float,
    rng: np.random.Generator,
    params: SimParams,
    step_index: int = 0,
) -> StepTimeRecord:
    """One synchronous step: everyone waits at the barrier for the slowest."""

    contribs = step_contributions(topology, profiles, t, rng, params)
    wall = max(contribs.values())
    slowest = min(node for node, value in contribs.items() if value == wall)
    return StepTimeRecord(
        job_id=topology.job_id, step_index=step_index, wall_time_s=wall, slowest_node=slowest
    )


@lru_cache(maxsize=4096)
def _device_refs(node: NodeId) -> tuple[DeviceRef, ...]:
    return tuple(DeviceRef(node, i) for i in range(GPUS_PER_NODE))


def emit_metrics(
    profiles: Mapping[NodeId, NodeProfile],
    t: float,
    params: SimParams,
    rng: np.random.Generator,
) -> list[MetricSample]:
    """One polling tick of the seven hardware signals for every node.

    Noise is relative lognormal with metric_noise_sigma; clock frequency is
    derived from the noisy temperature through the thermal curve, so the two
    channels stay physically consistent. Zero sigma emits exact values.
    """

    sigma = params.metric_noise_sigma
    samples: list[MetricSample] = []
    for node in sorted(profiles):
        profile = profiles[node]
        refs = _device_refs(node)
        temps = profile.temps_at(t)
        if sigma > 0:
            noise = rng.lognormal(0.0, sigma, size=3 * GPUS_PER_NODE + 2)
        else:
            noise = np.ones(3 * GPUS_PER_NODE + 2)
        power_scale = 1.0
        if profile.fault_active(FaultKind.POWER_ANOMALY, t):
            power_scale = 1.0 - profile.power_anomaly
        util_scale = 1.0
        if profile.fault_active(FaultKind.CPU_MISCONFIG, t):
            # Starved GPUs idle while the CPU lags on data movement and
            # communication coordination.
            util_scale = 1.0 / profile.cpu_slowdown_factor
        failover = (
            profile.nic_failover
            if profile.fault_active(FaultKind.NIC_FAILOVER, t)
            else None
        )

        for i in range(GPUS_PER_NODE):
            ref = refs[i]
            temp = min(temps[i] * float(noise[i]), 120.0)
            samples.append(MetricSample(ref, MetricKind.GPU_TEMPERATURE, t, temp))
            samples.append(
                MetricSample(ref, MetricKind.GPU_CLOCK_FREQUENCY, t, thermal_freq(temp))
            )
            samples.append(
                MetricSample(
                    ref,
                    MetricKind.GPU_POWER_DRAW,
                    t,
                    params.nominal_power_w * power_scale * float(noise[GPUS_PER_NODE + i]),
                )
            )
            samples.append(
                MetricSample(
                    ref,
                    MetricKind.GPU_UTILIZATION,
                    t,
                    min(1.0, params.nominal_util * util_scale * float(noise[2 * GPUS_PER_NODE + i])),
                )
            )

        tx_noise = float(noise[3 * GPUS_PER_NODE])
        err_noise = float(noise[3 * GPUS_PER_NODE + 1])
        for i in range(GPUS_PER_NODE):
            ref = refs[i]
            if failover is not None and i == failover.failed_nic:
                link, tx, err = 0.0, 0.0, 0.0
            elif failover is not None and i == failover.fallback_nic:
                # Rerouted traffic roughly doubles load on the fallback adapter.
                link = 1.0
                tx = 2.0 * params.nominal_tx_gbps * tx_noise
                err = params.failover_err_count * err_noise
            else:
                link, tx, err = 1.0, params.nominal_tx_gbps * tx_noise, 0.0
            samples.append(MetricSample(ref, MetricKind.NIC_LINK_UP, t, link))
            samples.append(MetricSample(ref, MetricKind.NIC_TRANSMIT_RATE, t, tx))
            samples.append(MetricSample(ref, MetricKind.NIC_ERROR_COUNT, t, err))
    return samples


def step_attribution_samples(
    topology: JobTopology, contribs: Mapping[NodeId, float], t: float
) -> list[MetricSample]:
    """Node-attributed step-time samples, the detector's primary signal."""

    return [
        MetricSample(JobRef(topology.job_id, node), MetricKind.STEP_TIME, t, contribs[node])
        for node in topology.nodes
    ]
