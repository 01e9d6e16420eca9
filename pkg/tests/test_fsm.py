import math

import pytest

from fwmission.dubins import AirplaneState, LoiterDirection, LoiterPath, PathSegment
from fwmission.fsm import (
    STATE_COLORS,
    CommandKind,
    MissionCommand,
    MissionContext,
    MissionState,
    MissionTag,
    Rejection,
    TransitPayload,
    handle_command,
    handle_completion,
)

HOLD_LOITER = LoiterPath((0.0, 0.0, 85.0), 80.0, LoiterDirection.CCW)
GOAL_LOITER = LoiterPath((600.0, 0.0, 85.0), 80.0, LoiterDirection.CW)
SEG = PathSegment(AirplaneState(0, -80, 85, 0), 100.0, 0.0, 0.0)
TRANSIT = TransitPayload((SEG,), GOAL_LOITER, LoiterDirection.CW)


def ok_ctx():
    return MissionContext(
        plan_navigate=lambda loiter, goal: TRANSIT,
        plan_return=lambda loiter: TRANSIT,
        plan_abort=lambda: TRANSIT,
        begin_mapping=lambda loiter: "session",
    )


def failing_ctx(exc):
    def boom(*a, **k):
        raise exc

    return MissionContext(boom, boom, boom, boom)


def _state(tag):
    payload = {
        MissionTag.HOLD: HOLD_LOITER,
        MissionTag.NAVIGATE: TRANSIT,
        MissionTag.MAPPING: "session",
        MissionTag.ABORT: TRANSIT,
        MissionTag.RETURN: TRANSIT,
    }[tag]
    return MissionState(tag, payload)


ALL_TAGS = list(MissionTag)
ALL_COMMANDS = [
    MissionCommand(CommandKind.NAVIGATE, (600.0, 0.0)),
    MissionCommand(CommandKind.START_MAPPING),
    MissionCommand(CommandKind.ABORT),
    MissionCommand(CommandKind.RETURN),
    MissionCommand(CommandKind.NONE),
]

# Fig-3 edge set: commanded edges plus the idempotent abort re-plan.
EXPECTED = {
    (MissionTag.HOLD, CommandKind.NAVIGATE): MissionTag.NAVIGATE,
    (MissionTag.HOLD, CommandKind.START_MAPPING): MissionTag.MAPPING,
    (MissionTag.HOLD, CommandKind.RETURN): MissionTag.RETURN,
    (MissionTag.NAVIGATE, CommandKind.ABORT): MissionTag.ABORT,
    (MissionTag.MAPPING, CommandKind.ABORT): MissionTag.ABORT,
    (MissionTag.ABORT, CommandKind.ABORT): MissionTag.ABORT,
}

COMPLETIONS = {
    MissionTag.NAVIGATE: MissionTag.HOLD,
    MissionTag.ABORT: MissionTag.HOLD,
    MissionTag.RETURN: MissionTag.HOLD,
    MissionTag.MAPPING: MissionTag.MAPPING,  # no completion event
    MissionTag.HOLD: MissionTag.HOLD,        # ignored
}


def test_exhaustive_command_table():
    """5 states x 6 inputs (5 commands + completion) against the edge set."""
    ctx = ok_ctx()
    for tag in ALL_TAGS:
        for cmd in ALL_COMMANDS:
            out = handle_command(_state(tag), cmd, ctx)
            want = EXPECTED.get((tag, cmd.kind))
            if want is None:
                assert isinstance(out, Rejection), (tag, cmd.kind)
            else:
                assert isinstance(out, MissionState) and out.tag == want, (tag, cmd.kind)
        done = handle_completion(_state(tag))
        assert done.tag == COMPLETIONS[tag], tag


def test_navigate_requires_successful_plan():
    out = handle_command(_state(MissionTag.HOLD),
                         MissionCommand(CommandKind.NAVIGATE, (1.0, 2.0)),
                         failing_ctx(ValueError("goal off mask")))
    assert isinstance(out, Rejection)
    assert out.reason == "ValueError"
    assert "off mask" in out.detail


def test_mapping_command_from_navigate_rejected():
    out = handle_command(_state(MissionTag.NAVIGATE),
                         MissionCommand(CommandKind.START_MAPPING), ok_ctx())
    assert isinstance(out, Rejection)
    assert out.reason == "illegal_edge"


def test_completion_sets_hold_at_reached_loiter():
    done = handle_completion(_state(MissionTag.NAVIGATE))
    assert done.tag == MissionTag.HOLD
    reached = done.hold_loiter
    assert reached.center == GOAL_LOITER.center
    assert reached.direction == LoiterDirection.CW


def test_mapping_ignores_completion():
    s = _state(MissionTag.MAPPING)
    assert handle_completion(s) is s


def test_abort_while_aborting_replans():
    out = handle_command(_state(MissionTag.ABORT), MissionCommand(CommandKind.ABORT), ok_ctx())
    assert isinstance(out, MissionState) and out.tag == MissionTag.ABORT


def test_state_always_has_reference_payload():
    ctx = ok_ctx()
    s = _state(MissionTag.HOLD)
    for cmd in ALL_COMMANDS:
        out = handle_command(s, cmd, ctx)
        if isinstance(out, MissionState):
            assert out.payload is not None


def test_colors_cover_all_states():
    assert set(STATE_COLORS) == set(MissionTag)
    assert STATE_COLORS[MissionTag.HOLD] == "yellow"
    assert STATE_COLORS[MissionTag.MAPPING] == "blue"
