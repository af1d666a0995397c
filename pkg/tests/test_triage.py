"""Remediation DAG edges, bounded depth, and the three-strikes rule."""

import pytest
from hypothesis import given, settings, strategies as st

from guard.triage import (
    ErrorSignals,
    IllegalTransition,
    TriageConfig,
    TriageStage,
    TriageState,
    record_strike,
    run_triage,
    stage_duration_s,
    step_triage,
)

ERR = ErrorSignals(True)
CLEAN = ErrorSignals(False)


@pytest.mark.parametrize(
    "stage,signals,expected",
    [
        (TriageStage.QUARANTINED, ERR, TriageStage.REBOOT_REDEPLOY_DRIVERS),
        (TriageStage.QUARANTINED, CLEAN, TriageStage.TERMINATE),
        (TriageStage.REBOOT_REDEPLOY_DRIVERS, ERR, TriageStage.REPROVISION),
        (TriageStage.REBOOT_REDEPLOY_DRIVERS, CLEAN, TriageStage.RETURN_FOR_SWEEP),
        (TriageStage.REPROVISION, ERR, TriageStage.TERMINATE),
        (TriageStage.REPROVISION, CLEAN, TriageStage.RETURN_FOR_SWEEP),
    ],
)
def test_every_dag_edge(stage, signals, expected):
    state = TriageState("n1", stage=stage)
    assert step_triage(state, signals).stage is expected


def test_no_error_policy_sweep_variant():
    cfg = TriageConfig(no_error_policy="sweep")
    state = TriageState("n1")
    assert step_triage(state, CLEAN, cfg).stage is TriageStage.RETURN_FOR_SWEEP


def test_terminal_stages_reject_steps():
    for stage in (TriageStage.TERMINATE, TriageStage.RETURN_FOR_SWEEP):
        with pytest.raises(IllegalTransition):
            step_triage(TriageState("n1", stage=stage), ERR)


def test_bounded_remediation_depth():
    """Any signal pattern reaches a terminal stage within three steps."""

    for bits in range(8):
        signals = [ErrorSignals(bool(bits >> i & 1)) for i in range(3)]
        state = TriageState("n1")
        steps = 0
        while state.stage not in (TriageStage.RETURN_FOR_SWEEP, TriageStage.TERMINATE):
            state = step_triage(state, signals[steps])
            steps += 1
        assert steps <= 3


def test_run_triage_accumulates_durations():
    cfg = TriageConfig()
    state, visited, duration = run_triage(TriageState("n1"), ERR, cfg)
    assert state.stage is TriageStage.TERMINATE
    assert visited == [
        TriageStage.REBOOT_REDEPLOY_DRIVERS,
        TriageStage.REPROVISION,
        TriageStage.TERMINATE,
    ]
    assert duration == cfg.reboot_duration_s + cfg.reprovision_duration_s
    _, _, clean_dur = run_triage(TriageState("n2"), CLEAN, cfg)
    assert clean_dur == 0.0  # straight to terminate, no remediation time


def test_stage_durations():
    cfg = TriageConfig()
    assert stage_duration_s(TriageStage.REBOOT_REDEPLOY_DRIVERS, cfg) == 600.0
    assert stage_duration_s(TriageStage.REPROVISION, cfg) == 3600.0
    assert stage_duration_s(TriageStage.TERMINATE, cfg) == 0.0


DAY = 86400.0


def test_three_strikes_within_week_terminates():
    state = TriageState("n1", strikes=(1 * DAY, 3 * DAY))
    state = record_strike(state, 6 * DAY)
    assert state.stage is TriageStage.TERMINATE
    assert state.strikes == (1 * DAY, 3 * DAY, 6 * DAY)


def test_two_strikes_with_expired_window_do_not_terminate():
    state = TriageState("n1", strikes=(1 * DAY,))
    state = record_strike(state, 9 * DAY)
    assert state.stage is TriageStage.QUARANTINED


def test_first_strike_keeps_stage():
    state = record_strike(TriageState("n1"), 0.0)
    assert state.strikes == (0.0,)
    assert state.stage is TriageStage.QUARANTINED


def _oracle_any_window_holds_three(strikes, window, limit):
    """Brute force: does any sliding closed window hold >= limit strikes?"""

    return any(
        sum(1 for s in strikes if anchor - window <= s <= anchor) >= limit
        for anchor in strikes
    )


@given(
    st.lists(
        st.floats(min_value=0, max_value=30 * 86400.0, allow_nan=False),
        min_size=1,
        max_size=12,
    )
)
@settings(max_examples=300, deadline=None)
def test_forced_termination_iff_sliding_window_holds_three(times):
    cfg = TriageConfig()
    ordered = sorted(times)
    state = TriageState("n1")
    for t in ordered:
        state = record_strike(state, t, cfg)
    forced = state.stage is TriageStage.TERMINATE
    want = _oracle_any_window_holds_three(ordered, cfg.strike_window_s, cfg.strike_limit)
    assert forced == want


def test_strike_threshold_is_config_exposed():
    cfg = TriageConfig(strike_limit=2, strike_window_s=DAY)
    state = record_strike(TriageState("n1"), 0.0, cfg)
    state = record_strike(state, 0.5 * DAY, cfg)
    assert state.stage is TriageStage.TERMINATE
