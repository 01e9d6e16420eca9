"""Mission finite state machine: Hold, Navigate, Mapping, Abort, Return.

Commanded transitions fire only after their planning precondition succeeds
(a Navigate command switches state only once a safe path exists), so the
vehicle always carries a flyable reference. Completion events fold the
transit states back into Hold at the reached loiter. Mapping has no
completion; it ends only through Abort.

The FSM itself is pure: all planning is delegated to a MissionContext of
callables so the transition table is testable in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Sequence

from .dubins import LoiterDirection, LoiterPath, PathSegment


class MissionTag(str, Enum):
    HOLD = "Hold"
    NAVIGATE = "Navigate"
    MAPPING = "Mapping"
    ABORT = "Abort"
    RETURN = "Return"


# Display colors used by telemetry consumers and plots.
STATE_COLORS = {
    MissionTag.HOLD: "yellow",
    MissionTag.NAVIGATE: "green",
    MissionTag.MAPPING: "blue",
    MissionTag.ABORT: "red",
    MissionTag.RETURN: "cyan",
}


class CommandKind(str, Enum):
    NAVIGATE = "navigate"
    START_MAPPING = "start_mapping"
    ABORT = "abort"
    RETURN = "return"
    NONE = "none"


@dataclass(frozen=True)
class MissionCommand:
    kind: CommandKind
    goal: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind == CommandKind.NAVIGATE and self.goal is None:
            raise ValueError("navigate command needs a goal position")


@dataclass(frozen=True)
class Rejection:
    reason: str
    detail: str = ""


@dataclass(frozen=True)
class TransitPayload:
    """Active plan of a Navigate / Abort / Return state."""

    path: tuple[PathSegment, ...]
    goal: LoiterPath
    direction: LoiterDirection


@dataclass(frozen=True)
class MissionState:
    tag: MissionTag
    payload: Any  # LoiterPath (Hold), TransitPayload (transits), session (Mapping)

    @property
    def hold_loiter(self) -> LoiterPath:
        assert self.tag == MissionTag.HOLD
        return self.payload


@dataclass
class MissionContext:
    """Planning services the FSM calls before committing a transition.

    Each callable returns a payload or raises; exceptions become rejections
    with the exception text as the reason detail.
    """

    plan_navigate: Callable[[LoiterPath, tuple[float, float]], TransitPayload]
    plan_return: Callable[[LoiterPath], TransitPayload]
    plan_abort: Callable[[], TransitPayload]
    begin_mapping: Callable[[LoiterPath], Any]


LEGAL_COMMAND_EDGES = {
    (MissionTag.HOLD, CommandKind.NAVIGATE): MissionTag.NAVIGATE,
    (MissionTag.HOLD, CommandKind.START_MAPPING): MissionTag.MAPPING,
    (MissionTag.HOLD, CommandKind.RETURN): MissionTag.RETURN,
    (MissionTag.NAVIGATE, CommandKind.ABORT): MissionTag.ABORT,
    (MissionTag.MAPPING, CommandKind.ABORT): MissionTag.ABORT,
    # Abort while aborting re-plans from the new segment end (idempotent).
    (MissionTag.ABORT, CommandKind.ABORT): MissionTag.ABORT,
}

COMPLETION_EDGES = {
    MissionTag.NAVIGATE: MissionTag.HOLD,
    MissionTag.ABORT: MissionTag.HOLD,
    MissionTag.RETURN: MissionTag.HOLD,
}


def handle_command(
    s: MissionState, c: MissionCommand, ctx: MissionContext
) -> MissionState | Rejection:
    """Apply an operator command; illegal or failed commands reject cleanly."""
    if c.kind == CommandKind.NONE:
        return Rejection("no_command")
    target = LEGAL_COMMAND_EDGES.get((s.tag, c.kind))
    if target is None:
        return Rejection("illegal_edge", f"{s.tag.value} does not accept {c.kind.value}")
    try:
        if c.kind == CommandKind.NAVIGATE:
            payload = ctx.plan_navigate(s.hold_loiter, c.goal)
        elif c.kind == CommandKind.RETURN:
            payload = ctx.plan_return(s.hold_loiter)
        elif c.kind == CommandKind.ABORT:
            payload = ctx.plan_abort()
        else:  # START_MAPPING
            payload = ctx.begin_mapping(s.hold_loiter)
    except Exception as e:  # planning preconditions failed; state unchanged
        return Rejection(type(e).__name__, str(e))
    return MissionState(tag=target, payload=payload)


def handle_completion(s: MissionState) -> MissionState:
    """Fold a finished transit back into Hold at the reached loiter.

    Mapping has no completion event and Hold has nothing to complete; both
    return the state unchanged.
    """
    target = COMPLETION_EDGES.get(s.tag)
    if target is None:
        return s
    payload: TransitPayload = s.payload
    reached = LoiterPath(payload.goal.center, payload.goal.radius, payload.direction)
    return MissionState(tag=MissionTag.HOLD, payload=reached)
