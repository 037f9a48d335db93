"""Threshold controller and the 13-byte control record."""

from __future__ import annotations

import struct
from dataclasses import dataclass

from amqc.datagen.synth import CRACK, HOLE, PINHOLE, SPATTER
from amqc.errors import InvalidArgument, ParseError

ACTION_KINDS = ("none", "cool_down", "feed_correct")
COOL_DOWN = (-10.0, 50.0, 0.0)  # (d_power W, d_speed mm/s, d_feed)
FEED_CORRECT = (10.0, 0.0, 0.02)
DEFAULT_THRESHOLDS = (0.05, 0.05)  # (hot, cold) defect-rate triggers

CONTROL_FORMAT = "<Bfff"
CONTROL_SIZE = struct.calcsize(CONTROL_FORMAT)  # 13


@dataclass(frozen=True)
class ControlAction:
    kind: str = "none"
    deltas: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ACTION_KINDS:
            raise InvalidArgument(f"unknown action kind {self.kind!r}")
        d_power, d_speed, d_feed = self.deltas
        if self.kind == "cool_down" and (d_power > 0 or d_speed < 0):
            raise InvalidArgument("cool_down needs d_power <= 0 and d_speed >= 0")
        if self.kind == "feed_correct" and d_feed == 0:
            raise InvalidArgument("feed_correct needs a nonzero feed delta")
        if self.kind == "none" and any(self.deltas):
            raise InvalidArgument("action none carries zero deltas")

    @property
    def taken(self):
        return self.kind != "none"


NO_ACTION = ControlAction()


def decide_action(counts, sites, state=None, thresholds=DEFAULT_THRESHOLDS):
    """Pick an action from per-class defect counts (crack, pinhole, hole, spatter)."""
    counts = [int(c) for c in counts]
    if sites < 1 or any(c < 0 for c in counts) or sum(counts) > sites:
        raise InvalidArgument(f"counts {counts} inconsistent with {sites} sites")
    hot, cold = thresholds
    if (counts[SPATTER] + counts[HOLE]) / sites >= hot:
        return ControlAction("cool_down", COOL_DOWN)
    if (counts[CRACK] + counts[PINHOLE]) / sites >= cold:
        return ControlAction("feed_correct", FEED_CORRECT)
    return NO_ACTION


def apply_action(state, action):
    """Next state; always inside the process bounds."""
    return state.shifted(*action.deltas)


def encode_control(action):
    return struct.pack(CONTROL_FORMAT, ACTION_KINDS.index(action.kind), *action.deltas)


def decode_control(data):
    if len(data) != CONTROL_SIZE:
        raise ParseError(f"expected {CONTROL_SIZE} bytes, got {len(data)}", element="length")
    kind, *deltas = struct.unpack(CONTROL_FORMAT, data)
    if kind >= len(ACTION_KINDS):
        raise ParseError(f"unknown action code {kind}", element="kind", offset=0)
    try:
        return ControlAction(ACTION_KINDS[kind], tuple(deltas))
    except InvalidArgument as exc:
        raise ParseError(str(exc), element="deltas", offset=1) from None
