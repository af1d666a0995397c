"""Thermal curve anchors, step model composition, metric emission."""

import numpy as np
import pytest

from guard.model import JobTopology, MetricKind, ValidationError
from guard.sim import (
    NOMINAL_FREQ_GHZ,
    FaultInjection,
    FaultKind,
    NodeProfile,
    SimParams,
    emit_metrics,
    expected_contribution,
    healthy_profile,
    node_step_contribution,
    profile_from_faults,
    simulate_step,
    step_contributions,
    thermal_freq,
    true_slowdown,
)

ZERO_JITTER = SimParams(jitter_sigma=0.0, metric_noise_sigma=0.0)


@pytest.mark.parametrize("temp,freq", [(50.0, 1.93), (60.0, 1.93), (69.0, 1.78), (77.0, 1.38)])
def test_thermal_curve_anchors_exact(temp, freq):
    assert thermal_freq(temp) == freq


def test_thermal_curve_interpolates():
    # Halfway along the 69 -> 77 segment: 1.78 - (4/8) * 0.40.
    assert thermal_freq(73.0) == pytest.approx(1.58, abs=1e-9)


def test_thermal_curve_clamps_flat():
    assert thermal_freq(20.0) == 1.93
    assert thermal_freq(95.0) == 1.38


def test_thermal_curve_monotone_nonincreasing():
    temps = np.linspace(0, 120, 481)
    freqs = [thermal_freq(float(t)) for t in temps]
    assert all(b <= a + 1e-12 for a, b in zip(freqs, freqs[1:]))


def test_profile_invariants():
    with pytest.raises(ValidationError):
        NodeProfile("n1", steady_temp_c=(50.0,) * 7)
    with pytest.raises(ValidationError):
        NodeProfile("n1", cpu_slowdown_factor=0.9)
    with pytest.raises(ValidationError):
        profile_from_faults(
            "n1", [FaultInjection("n1", FaultKind.NIC_FAILOVER, {"failed_nic": 0, "fallback_nic": 0})]
        )
    with pytest.raises(ValidationError):
        NodeProfile("n1", steady_temp_c=(120.0,) * 8)


def _rng():
    return np.random.default_rng(0)


def test_healthy_contribution_is_nominal():
    assert node_step_contribution(healthy_profile("n1"), 0.0, _rng(), ZERO_JITTER) == 8.4


def test_failover_adds_penalty():
    profile = profile_from_faults(
        "n1", [FaultInjection("n1", FaultKind.NIC_FAILOVER, {"failed_nic": 5})]
    )
    assert node_step_contribution(profile, 0.0, _rng(), ZERO_JITTER) == pytest.approx(8.7)


def test_failover_penalty_scales_with_sync_points():
    profile = profile_from_faults(
        "n1", [FaultInjection("n1", FaultKind.NIC_FAILOVER, {"failed_nic": 5})]
    )
    assert node_step_contribution(profile, 0.0, _rng(), ZERO_JITTER, sync_points=4) == pytest.approx(
        8.4 + 4 * 0.3
    )


def test_cpu_misconfig_multiplies():
    profile = profile_from_faults(
        "n1", [FaultInjection("n1", FaultKind.CPU_MISCONFIG, {"factor": 1.15})]
    )
    assert node_step_contribution(profile, 0.0, _rng(), ZERO_JITTER) == pytest.approx(9.66)


def test_thermal_throttling_scales_with_frequency_ratio():
    profile = profile_from_faults(
        "n1", [FaultInjection("n1", FaultKind.THERMAL, {"gpu": 3, "temp_c": 77.0})]
    )
    want = 8.4 * NOMINAL_FREQ_GHZ / 1.38
    assert node_step_contribution(profile, 0.0, _rng(), ZERO_JITTER) == pytest.approx(want)


def test_fault_inactive_before_onset():
    profile = profile_from_faults(
        "n1", [FaultInjection("n1", FaultKind.CPU_MISCONFIG, {"factor": 1.15}, onset_s=100.0)]
    )
    assert node_step_contribution(profile, 99.0, _rng(), ZERO_JITTER) == 8.4
    assert node_step_contribution(profile, 100.0, _rng(), ZERO_JITTER) == pytest.approx(9.66)


def test_fault_window_can_end():
    profile = profile_from_faults(
        "n1",
        [FaultInjection("n1", FaultKind.CPU_MISCONFIG, {"factor": 1.15}, onset_s=10.0, end_s=20.0)],
    )
    assert true_slowdown(profile, 15.0, ZERO_JITTER) == pytest.approx(0.15)
    assert true_slowdown(profile, 25.0, ZERO_JITTER) == 0.0


def test_simulate_step_healthy_tie_breaks_to_lowest_id():
    topology = JobTopology("j", ("n2", "n0", "n1", "n3"))
    profiles = {n: healthy_profile(n) for n in topology.nodes}
    rec = simulate_step(topology, profiles, 0.0, _rng(), ZERO_JITTER, step_index=4)
    assert rec.wall_time_s == 8.4
    assert rec.slowest_node == "n0"
    assert rec.step_index == 4


def test_simulate_step_failover_node_gates():
    topology = JobTopology("j", ("n0", "n1", "n2", "n3"))
    profiles = {n: healthy_profile(n) for n in topology.nodes}
    profiles["n2"] = profile_from_faults(
        "n2", [FaultInjection("n2", FaultKind.NIC_FAILOVER, {"failed_nic": 5})]
    )
    rec = simulate_step(topology, profiles, 0.0, _rng(), ZERO_JITTER)
    assert rec.wall_time_s == pytest.approx(8.7)
    assert rec.slowest_node == "n2"


def test_removing_slowest_leaves_second_largest():
    topology = JobTopology("j", ("n0", "n1", "n2"))
    profiles = {
        "n0": healthy_profile("n0"),
        "n1": profile_from_faults("n1", [FaultInjection("n1", FaultKind.CPU_MISCONFIG, {"factor": 1.3})]),
        "n2": profile_from_faults("n2", [FaultInjection("n2", FaultKind.CPU_MISCONFIG, {"factor": 1.1})]),
    }
    contribs = step_contributions(topology, profiles, 0.0, _rng(), ZERO_JITTER)
    without = JobTopology("j", ("n0", "n2"))
    rec = simulate_step(without, profiles, 0.0, _rng(), ZERO_JITTER)
    ranked = sorted(contribs.values())
    assert rec.wall_time_s == pytest.approx(ranked[-2])


def test_gating_law_random_profiles():
    """simulate_step's record equals the max of independently drawn
    contributions when both consume an identical RNG stream."""

    meta = np.random.default_rng(77)
    params = SimParams(jitter_sigma=0.004)
    for trial in range(200):
        nodes = tuple(f"n{i}" for i in range(int(meta.integers(2, 9))))
        profiles = {}
        for n in nodes:
            faults = []
            if meta.random() < 0.3:
                faults.append(FaultInjection(n, FaultKind.CPU_MISCONFIG, {"factor": float(meta.uniform(1.0, 1.3))}))
            if meta.random() < 0.2:
                faults.append(FaultInjection(n, FaultKind.THERMAL, {"gpu": 0, "temp_c": float(meta.uniform(60, 90))}))
            profiles[n] = profile_from_faults(n, faults)
        topology = JobTopology("j", nodes)
        contribs = step_contributions(topology, profiles, 0.0, np.random.default_rng(trial), params)
        rec = simulate_step(topology, profiles, 0.0, np.random.default_rng(trial), params)
        assert rec.wall_time_s == max(contribs.values())
        assert rec.slowest_node == min(n for n, v in contribs.items() if v == rec.wall_time_s)


def test_emit_metrics_failover_signature():
    profile = profile_from_faults(
        "n1", [FaultInjection("n1", FaultKind.NIC_FAILOVER, {"failed_nic": 5, "fallback_nic": 0})]
    )
    samples = emit_metrics({"n1": profile}, 0.0, ZERO_JITTER, _rng())
    by = {(s.kind, s.device.gpu_index): s.value for s in samples}
    assert by[(MetricKind.NIC_LINK_UP, 5)] == 0.0
    assert by[(MetricKind.NIC_TRANSMIT_RATE, 5)] == 0.0
    assert by[(MetricKind.NIC_TRANSMIT_RATE, 0)] == pytest.approx(50.0)  # doubled
    assert by[(MetricKind.NIC_ERROR_COUNT, 0)] == pytest.approx(50.0)
    assert by[(MetricKind.NIC_LINK_UP, 0)] == 1.0
    assert by[(MetricKind.NIC_TRANSMIT_RATE, 3)] == pytest.approx(25.0)


def test_emit_metrics_healthy_node():
    samples = emit_metrics({"n1": healthy_profile("n1")}, 0.0, ZERO_JITTER, _rng())
    for s in samples:
        if s.kind is MetricKind.NIC_LINK_UP:
            assert s.value == 1.0
        if s.kind is MetricKind.NIC_TRANSMIT_RATE:
            assert s.value == pytest.approx(25.0)
        if s.kind is MetricKind.GPU_CLOCK_FREQUENCY:
            assert s.value == 1.93


def test_emit_metrics_thermal_gpu_reports_throttled_freq():
    profile = profile_from_faults(
        "n1", [FaultInjection("n1", FaultKind.THERMAL, {"gpu": 3, "temp_c": 77.0})]
    )
    samples = emit_metrics({"n1": profile}, 0.0, ZERO_JITTER, _rng())
    freqs = {s.device.gpu_index: s.value for s in samples if s.kind is MetricKind.GPU_CLOCK_FREQUENCY}
    assert freqs[3] == 1.38
    assert freqs[0] == 1.93


def test_emit_metrics_cpu_misconfig_lowers_utilization():
    profile = profile_from_faults(
        "n1", [FaultInjection("n1", FaultKind.CPU_MISCONFIG, {"factor": 1.15})]
    )
    samples = emit_metrics({"n1": profile}, 0.0, ZERO_JITTER, _rng())
    utils = [s.value for s in samples if s.kind is MetricKind.GPU_UTILIZATION]
    assert all(u == pytest.approx(0.95 / 1.15) for u in utils)


LABEL_CHANNELS = {
    FaultKind.THERMAL: (MetricKind.GPU_TEMPERATURE, MetricKind.GPU_CLOCK_FREQUENCY),
    FaultKind.POWER_ANOMALY: (MetricKind.GPU_POWER_DRAW,),
    FaultKind.NIC_FAILOVER: (MetricKind.NIC_LINK_UP, MetricKind.NIC_TRANSMIT_RATE, MetricKind.NIC_ERROR_COUNT),
    FaultKind.CPU_MISCONFIG: (MetricKind.GPU_UTILIZATION,),
}

FAULT_EXAMPLES = {
    FaultKind.THERMAL: {"gpu": 2, "temp_c": 80.0},
    FaultKind.POWER_ANOMALY: {"fraction_below": 0.2},
    FaultKind.NIC_FAILOVER: {"failed_nic": 4, "fallback_nic": 0},
    FaultKind.CPU_MISCONFIG: {"factor": 1.15},
}

HARMFUL_HIGH = {MetricKind.GPU_TEMPERATURE, MetricKind.NIC_ERROR_COUNT}


def test_label_soundness_zero_noise():
    """Inside the fault window every observable channel deviates harmfully."""

    for kind, params in FAULT_EXAMPLES.items():
        faulty = profile_from_faults("bad", [FaultInjection("bad", kind, params, onset_s=50.0)])
        healthy = healthy_profile("ok")
        for t, active in ((0.0, False), (50.0, True), (120.0, True)):
            samples = emit_metrics({"bad": faulty, "ok": healthy}, t, ZERO_JITTER, _rng())
            values = {}
            for s in samples:
                values.setdefault((s.device.node, s.kind), []).append(s.value)
            for channel in LABEL_CHANNELS[kind]:
                if channel in HARMFUL_HIGH:
                    bad = max(values[("bad", channel)])
                    ok = max(values[("ok", channel)])
                    assert (bad > ok) == active, (kind, channel, t)
                else:
                    bad = min(values[("bad", channel)])
                    ok = min(values[("ok", channel)])
                    assert (bad < ok) == active, (kind, channel, t)


def test_expected_contribution_matches_jitterless_draw():
    profile = profile_from_faults(
        "n1",
        [
            FaultInjection("n1", FaultKind.CPU_MISCONFIG, {"factor": 1.1}),
            FaultInjection("n1", FaultKind.NIC_FAILOVER, {"failed_nic": 3}),
        ],
    )
    expected = expected_contribution(profile, 0.0, ZERO_JITTER)
    drawn = node_step_contribution(profile, 0.0, _rng(), ZERO_JITTER)
    assert drawn == expected


def test_internode_fault_tagging():
    assert FaultKind.NIC_FAILOVER.affects_internode_comm
    assert FaultKind.CPU_MISCONFIG.affects_internode_comm
    assert not FaultKind.THERMAL.affects_internode_comm
    assert FaultKind.NIC_FAILOVER.emits_errors
    assert FaultKind.GPU_ERRORS.emits_errors
    assert not FaultKind.POWER_ANOMALY.emits_errors
