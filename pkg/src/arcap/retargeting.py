"""Mapping tracked human hand motion onto robot embodiment targets.

The dexterous hand gets the raw wrist pose plus world-frame fingertip
positions re-expressed in the robot base frame. The parallel gripper tracks
the index/thumb midpoint and derives a binary open/close command from the
pinch distance, with a minimum dwell between state changes so the jaw is
never commanded faster than it can actually cycle.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .geometry import Pose

FINGERS = ("thumb", "index", "middle", "ring", "pinky")
DEX_FINGERS = ("thumb", "index", "middle", "ring")  # pinky unused on a 4-finger hand

MAX_FINGERTIP_RADIUS = 0.30  # meters from the wrist origin; beyond this the sample is garbage

DEFAULT_OPEN_WIDTH = 0.08
DEFAULT_TOGGLE_PERIOD = 1.0


class GripperCommand(enum.Enum):
    OPEN = "open"
    CLOSED = "closed"


@dataclass(frozen=True)
class HandFrame:
    """One tracker sample: wrist + headset pose (world) and fingertips (wrist frame)."""

    timestamp: float
    wrist: Pose
    headset: Pose
    fingertips: dict[str, np.ndarray]

    def __post_init__(self):
        if set(self.fingertips) != set(FINGERS):
            raise ContractViolation(f"fingertips must be exactly {FINGERS}")
        tips = {}
        for name, p in self.fingertips.items():
            p = np.asarray(p, dtype=np.float64).reshape(3)
            if not np.all(np.isfinite(p)):
                raise ContractViolation(f"{name} fingertip is not finite")
            if float(np.linalg.norm(p)) >= MAX_FINGERTIP_RADIUS:
                raise ContractViolation(
                    f"{name} fingertip {float(np.linalg.norm(p)):.3f} m from wrist exceeds "
                    f"{MAX_FINGERTIP_RADIUS} m plausibility bound"
                )
            tips[name] = p
        object.__setattr__(self, "fingertips", tips)


@dataclass(frozen=True)
class GripperState:
    state: GripperCommand = GripperCommand.OPEN
    last_toggle_time: float = -math.inf


@dataclass(frozen=True)
class EmbodimentTarget:
    """Per-tick robot goal; carries fingertip targets XOR a gripper command."""

    wrist: Pose
    fingertips: dict[str, np.ndarray] | None = None
    gripper: GripperCommand | None = None

    def __post_init__(self):
        if (self.fingertips is None) == (self.gripper is None):
            raise ContractViolation("exactly one of fingertips / gripper must be set")


def retarget_dex_hand(frame: HandFrame, base: Pose | None = None) -> EmbodimentTarget:
    """Fingertip-matching targets for a four-finger hand.

    Wrist target is the raw world wrist pose; thumb/index/middle/ring tips
    are composed into the world frame and then re-expressed in the robot
    base frame (keyed ``<finger>_tip`` to match model frame names).
    """
    world_to_base = (base or Pose.identity()).inverse()
    tips = {}
    for finger in DEX_FINGERS:
        world = frame.wrist.transform_point(frame.fingertips[finger])
        tips[f"{finger}_tip"] = world_to_base.transform_point(world)
    return EmbodimentTarget(wrist=frame.wrist, fingertips=tips)


def retarget_parallel_gripper(
    frame: HandFrame,
    state: GripperState,
    open_width: float = DEFAULT_OPEN_WIDTH,
    toggle_period: float = DEFAULT_TOGGLE_PERIOD,
) -> tuple[EmbodimentTarget, GripperState]:
    """Midpoint/orientation tracking plus hysteretic open-close.

    The pinch distance selects the desired state (strictly greater than
    open_width -> open, otherwise closed), but the command only changes if
    the desired state differs from the current one AND at least
    toggle_period has elapsed since the last change.
    """
    if open_width <= 0:
        raise ContractViolation("open_width must be > 0")
    index = frame.fingertips["index"]
    thumb = frame.fingertips["thumb"]
    midpoint_world = frame.wrist.transform_point(0.5 * (index + thumb))
    wrist_target = Pose(midpoint_world, frame.wrist.orientation)
    distance = float(np.linalg.norm(index - thumb))
    desired = GripperCommand.OPEN if distance > open_width else GripperCommand.CLOSED
    new_state = state
    if desired != state.state and frame.timestamp - state.last_toggle_time >= toggle_period:
        new_state = GripperState(desired, frame.timestamp)
    return EmbodimentTarget(wrist=wrist_target, gripper=new_state.state), new_state
