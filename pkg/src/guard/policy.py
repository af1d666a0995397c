"""Good-node-pool state machine and tiered response policy.

Pool lifecycle: Healthy -> PendingVerification -> Quarantined -> Terminated,
with sweep passes sending nodes back to Healthy. The pool is a single
serialized state machine: one owner applies transitions in event order.
Sweeps are strictly event-driven: every request traces back to a flag,
a checkpoint swap or a triage outcome.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .detector import GreyNodeFlag, SeverityTier
from .model import NodeId


class IllegalTransition(RuntimeError):
    """The requested pool transition is not an edge of the state machine."""


class PoolStatus(Enum):
    HEALTHY = "healthy"
    PENDING_VERIFICATION = "pending_verification"
    QUARANTINED = "quarantined"
    TERMINATED = "terminated"


class ActionKind(Enum):
    NONE = "none"
    MONITOR_CLOSELY = "monitor_closely"
    DEFER_TO_CHECKPOINT = "defer_to_checkpoint"
    IMMEDIATE_RESTART = "immediate_restart_with_replacement"


class TriageOutcome(Enum):
    RETURN_FOR_SWEEP = "return_for_sweep"
    TERMINATE = "terminate"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    node: NodeId | None = None
    replacement: NodeId | None = None
    warning: str | None = None


@dataclass
class NodePoolState:
    node: NodeId
    status: PoolStatus
    since: float = 0.0
    reason: str = ""
    # Most recent sweep qualification; 0.0 models the initial burn-in pass.
    last_qualified_s: float = 0.0


@dataclass(frozen=True)
class SweepRequest:
    node: NodeId
    reason: str
    ready_at_s: float


@dataclass
class NodePool:
    """All active nodes plus a finite reservoir of cold spares."""

    states: dict[NodeId, NodePoolState] = field(default_factory=dict)
    spares: list[NodeId] = field(default_factory=list)
    sweep_queue: list[SweepRequest] = field(default_factory=list)
    deferred: dict[NodeId, str] = field(default_factory=dict)

    @classmethod
    def bootstrap(cls, active: list[NodeId], spares: list[NodeId]) -> "NodePool":
        pool = cls(spares=list(spares))
        for node in active:
            pool.states[node] = NodePoolState(node, PoolStatus.HEALTHY)
        return pool

    def status(self, node: NodeId) -> PoolStatus:
        return self.states[node].status

    def population(self) -> int:
        return len(self.states) + len(self.spares)

    def _set(self, node: NodeId, status: PoolStatus, now: float, reason: str) -> None:
        st = self.states[node]
        st.status = status
        st.since = now
        st.reason = reason

    def _promote_spare(self, now: float) -> NodeId | None:
        if not self.spares:
            return None
        node = self.spares.pop(0)
        self.states[node] = NodePoolState(node, PoolStatus.HEALTHY, since=now, reason="promoted spare")
        return node

    def draw_replacement(self, now: float, serving: frozenset[NodeId]) -> NodeId | None:
        """Pick the most recently qualified idle Healthy node, spares included.

        Fresh spares carry qualification time 0 (initial burn-in), so a node
        that just passed a sweep outranks them. Ties break on node id.
        """

        idle = [
            st
            for st in self.states.values()
            if st.status is PoolStatus.HEALTHY and st.node not in serving
        ]
        best_idle = max(idle, key=lambda s: (s.last_qualified_s, s.node), default=None)
        if best_idle is not None and best_idle.last_qualified_s > 0:
            return best_idle.node
        if self.spares:
            return self._promote_spare(now)
        return best_idle.node if best_idle is not None else None

    def apply_verdict(
        self, flag: GreyNodeFlag | None, now: float, serving: frozenset[NodeId] = frozenset()
    ) -> Action:
        """Tiered response: verify quietly, defer, or restart immediately."""

        if flag is None:
            return Action(ActionKind.NONE)
        node = flag.node
        status = self.status(node)
        if status in (PoolStatus.QUARANTINED, PoolStatus.TERMINATED):
            raise IllegalTransition(f"{node} already {status.value}")

        if flag.severity is SeverityTier.NO_IMPACT:
            self._set(node, PoolStatus.PENDING_VERIFICATION, now, "hardware deviation, no step impact")
            return Action(ActionKind.MONITOR_CLOSELY, node=node)

        if flag.severity is SeverityTier.MODERATE:
            self._set(node, PoolStatus.PENDING_VERIFICATION, now, "moderate sustained slowdown")
            self.deferred[node] = "moderate slowdown"
            return Action(ActionKind.DEFER_TO_CHECKPOINT, node=node)

        replacement = self.draw_replacement(now, serving)
        if replacement is None:
            self._set(node, PoolStatus.PENDING_VERIFICATION, now, "severe, awaiting spare")
            self.deferred[node] = "severe slowdown, no spare"
            return Action(
                ActionKind.DEFER_TO_CHECKPOINT,
                node=node,
                warning="SpareExhausted",
            )
        self._set(node, PoolStatus.QUARANTINED, now, "severe sustained slowdown")
        self.deferred.pop(node, None)
        self.sweep_queue.append(SweepRequest(node, "severe flag", now))
        return Action(ActionKind.IMMEDIATE_RESTART, node=node, replacement=replacement)

    def on_checkpoint(self, now: float, serving: frozenset[NodeId]) -> list[tuple[NodeId, NodeId | None]]:
        """Execute deferred mitigations: swap each deferred node out for sweep."""

        swaps: list[tuple[NodeId, NodeId | None]] = []
        for node in sorted(self.deferred):
            replacement = self.draw_replacement(now, serving)
            if replacement is None:
                continue  # keep deferring; retried at the next checkpoint
            reason = self.deferred.pop(node)
            self._set(node, PoolStatus.QUARANTINED, now, f"checkpoint swap: {reason}")
            self.sweep_queue.append(SweepRequest(node, "checkpoint swap", now))
            swaps.append((node, replacement))
            serving = (serving - {node}) | {replacement}
        return swaps

    def quarantine_for_repair(self, node: NodeId, now: float) -> None:
        """Post-failure repair path: pull a suspect out for sweeping when
        online monitoring did not act first."""

        status = self.status(node)
        if status in (PoolStatus.QUARANTINED, PoolStatus.TERMINATED):
            raise IllegalTransition(f"{node} already {status.value}")
        self._set(node, PoolStatus.QUARANTINED, now, "post-failure repair")
        self.deferred.pop(node, None)
        self.sweep_queue.append(SweepRequest(node, "post-failure repair", now))

    def on_sweep_result(self, node: NodeId, passed: bool, now: float) -> bool:
        """Apply a sweep verdict; returns True when a triage ticket opens."""

        status = self.status(node)
        if status not in (PoolStatus.QUARANTINED, PoolStatus.PENDING_VERIFICATION):
            raise IllegalTransition(f"sweep result for {node} in state {status.value}")
        if passed:
            self._set(node, PoolStatus.HEALTHY, now, "sweep passed")
            self.states[node].last_qualified_s = now
            self.deferred.pop(node, None)
            return False
        self._set(node, PoolStatus.QUARANTINED, now, "sweep failed")
        return True

    def on_triage_outcome(
        self, node: NodeId, outcome: TriageOutcome, now: float
    ) -> tuple[NodeId | None, str | None]:
        """Fold a triage terminal back into the pool.

        Returns (pool replacement promoted on termination, warning). A
        terminated node's capacity is restored by promoting a spare into the
        Healthy pool when one exists; otherwise a SpareExhausted warning.
        """

        if self.status(node) is not PoolStatus.QUARANTINED:
            raise IllegalTransition(f"triage outcome for {node} in state {self.status(node).value}")
        if outcome is TriageOutcome.RETURN_FOR_SWEEP:
            self.sweep_queue.append(SweepRequest(node, "post-remediation", now))
            return None, None
        self._set(node, PoolStatus.TERMINATED, now, "terminated")
        promoted = self._promote_spare(now)
        warning = None if promoted is not None else "SpareExhausted"
        return promoted, warning
