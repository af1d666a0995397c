"""Tiered remediation for quarantined grey nodes.

The remediation chain escalates only for nodes that emit actionable GPU or
network errors, re-checking after each stage:

    quarantined --errors--> reboot+redeploy --errors--> reprovision --errors--> terminate
         |                        |                          |
       no errors               no errors                  no errors
         v                        v                          v
     terminate*            return for sweep            return for sweep

(*) the default for error-silent nodes is early termination; operators who
prefer re-validation can set no_error_policy="sweep". Independently, a node
entering triage three times inside a trailing week is terminally bad and is
forced straight to terminate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from .model import NodeId


class IllegalTransition(RuntimeError):
    """step_triage called on a terminal stage."""


class TriageStage(Enum):
    QUARANTINED = "quarantined"
    REBOOT_REDEPLOY_DRIVERS = "reboot_redeploy_drivers"
    REPROVISION = "reprovision"
    RETURN_FOR_SWEEP = "return_for_sweep"
    TERMINATE = "terminate"


TERMINAL_STAGES = (TriageStage.RETURN_FOR_SWEEP, TriageStage.TERMINATE)


@dataclass(frozen=True)
class TriageConfig:
    no_error_policy: str = "terminate"  # or "sweep"
    strike_limit: int = 3
    strike_window_s: float = 7 * 86400.0
    reboot_duration_s: float = 600.0
    reprovision_duration_s: float = 3600.0

    def __post_init__(self):
        if self.no_error_policy not in ("terminate", "sweep"):
            raise ValueError("no_error_policy must be 'terminate' or 'sweep'")


@dataclass(frozen=True)
class ErrorSignals:
    """Whether the node emitted GPU/network errors in its observation window."""

    emitting: bool


@dataclass(frozen=True)
class TriageState:
    node: NodeId
    stage: TriageStage = TriageStage.QUARANTINED
    strikes: tuple[float, ...] = ()


def step_triage(
    state: TriageState, signals: ErrorSignals, cfg: TriageConfig | None = None
) -> TriageState:
    """Advance one remediation stage; reaches a terminal in <= 3 steps."""

    cfg = cfg or TriageConfig()
    if state.stage in TERMINAL_STAGES:
        raise IllegalTransition(f"{state.node}: no transition out of {state.stage.value}")

    if state.stage is TriageStage.QUARANTINED:
        if signals.emitting:
            nxt = TriageStage.REBOOT_REDEPLOY_DRIVERS
        elif cfg.no_error_policy == "terminate":
            nxt = TriageStage.TERMINATE
        else:
            nxt = TriageStage.RETURN_FOR_SWEEP
    elif state.stage is TriageStage.REBOOT_REDEPLOY_DRIVERS:
        nxt = TriageStage.REPROVISION if signals.emitting else TriageStage.RETURN_FOR_SWEEP
    else:  # REPROVISION
        nxt = TriageStage.TERMINATE if signals.emitting else TriageStage.RETURN_FOR_SWEEP
    return replace(state, stage=nxt)


def record_strike(state: TriageState, now: float, cfg: TriageConfig | None = None) -> TriageState:
    """Log a triage entry; force termination on the third strike in a week."""

    cfg = cfg or TriageConfig()
    strikes = tuple(sorted(state.strikes + (now,)))
    stage = state.stage
    recent = sum(1 for s in strikes if now - cfg.strike_window_s <= s <= now)
    if recent >= cfg.strike_limit:
        stage = TriageStage.TERMINATE
    return replace(state, strikes=strikes, stage=stage)


def stage_duration_s(stage: TriageStage, cfg: TriageConfig | None = None) -> float:
    """Simulated time a remediation stage keeps the node out of circulation."""

    cfg = cfg or TriageConfig()
    if stage is TriageStage.REBOOT_REDEPLOY_DRIVERS:
        return cfg.reboot_duration_s
    if stage is TriageStage.REPROVISION:
        return cfg.reprovision_duration_s
    return 0.0


def run_triage(
    state: TriageState, signals: ErrorSignals, cfg: TriageConfig | None = None
) -> tuple[TriageState, list[TriageStage], float]:
    """Drive a ticket to its terminal stage.

    Returns (terminal state, visited stages, total simulated remediation
    time). Error signals are re-derived per stage by real deployments; the
    simulator's fault conditions are stable inside one ticket, so one
    observation is used throughout.
    """

    cfg = cfg or TriageConfig()
    visited: list[TriageStage] = []
    elapsed = 0.0
    while state.stage not in TERMINAL_STAGES:
        state = step_triage(state, signals, cfg)
        visited.append(state.stage)
        elapsed += stage_duration_s(state.stage, cfg)
    return state, visited, elapsed
