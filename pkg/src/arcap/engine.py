"""Deterministic per-tick orchestration of retargeting, IK, and feedback.

Each tracker frame is retargeted by embodiment, solved with warm-started IK,
speed-clamped against the previous configuration, and checked for collision,
visibility, and tracking mismatch. The display state follows a strict
priority: blue (collision, blinking + haptic) over yellow (lagging or speed
mismatch) over red (normal). Identical inputs produce bit-identical outputs.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ContractViolation, OrderingError
from .geometry import Pose
from .kinematics import (
    DEX_HAND,
    PARALLEL_GRIPPER,
    IkParams,
    RobotModel,
    clamp_joint_step,
    frame_pose,
    load_packaged_model,
    load_robot_model,
    packaged_model_path,
    parse_robot_model,
    robot_model_to_dict,
    solve_fingertip_ik,
    solve_frame_ik,
)
from .retargeting import (
    DEFAULT_OPEN_WIDTH,
    DEFAULT_TOGGLE_PERIOD,
    GripperCommand,
    GripperState,
    HandFrame,
    retarget_dex_hand,
    retarget_parallel_gripper,
)
from .scene import (
    DEFAULT_COLLISION_MARGIN,
    DEFAULT_SPEED_ORI_THRESHOLD,
    DEFAULT_SPEED_POS_THRESHOLD,
    DEFAULT_VISIBILITY_THRESHOLD,
    DEFAULT_VOXEL_RESOLUTION,
    CameraModel,
    FeedbackDisplay,
    FeedbackEvent,
    VoxelGrid,
    check_collision,
    check_visibility,
    detect_speed_mismatch,
    display_for_tick,
)

CONFIG_SCHEMA = 1

# Display blink runs at 2 Hz; the phase counter ticks at four steps per
# second so clients can render the square wave identically.
BLINK_PHASE_HZ = 4.0

DEFAULT_TICK_RATE = 60.0
DEFAULT_CROP_MIN = (0.2, -0.4, 0.0)
DEFAULT_CROP_MAX = (0.9, 0.4, 0.6)

# Fingertip solves take their own params so the pull toward the hand's rest
# posture can be tuned separately from the arm solve.
DEFAULT_FINGER_IK = dict(damping=0.05, max_iterations=50, position_tolerance=1e-4,
                         orientation_tolerance=1e-3, null_space_gain=0.1)


def crop_box_corners(crop_min, crop_max) -> np.ndarray:
    lo = np.asarray(crop_min, dtype=np.float64)
    hi = np.asarray(crop_max, dtype=np.float64)
    return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])


@dataclass
class EngineConfig:
    embodiment: str
    model: RobotModel
    model_ref: str = ""
    base_pose: Pose = field(default_factory=Pose.identity)
    ik: IkParams = field(default_factory=IkParams)
    ik_fingers: IkParams = field(default_factory=lambda: IkParams(**DEFAULT_FINGER_IK))
    open_width: float = DEFAULT_OPEN_WIDTH
    toggle_period: float = DEFAULT_TOGGLE_PERIOD
    camera: CameraModel = field(default_factory=CameraModel)
    voxel_resolution: float = DEFAULT_VOXEL_RESOLUTION
    collision_margin: float = DEFAULT_COLLISION_MARGIN
    visibility_threshold: float = DEFAULT_VISIBILITY_THRESHOLD
    speed_pos_threshold: float = DEFAULT_SPEED_POS_THRESHOLD
    speed_ori_threshold: float = DEFAULT_SPEED_ORI_THRESHOLD
    tick_rate: float = DEFAULT_TICK_RATE
    crop_min: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_CROP_MIN))
    crop_max: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_CROP_MAX))
    watch_points: np.ndarray | None = None

    def __post_init__(self):
        if self.tick_rate <= 0:
            raise ContractViolation("tick rate must be > 0")
        self.crop_min = np.asarray(self.crop_min, dtype=np.float64).reshape(3)
        self.crop_max = np.asarray(self.crop_max, dtype=np.float64).reshape(3)
        if np.any(self.crop_min >= self.crop_max):
            raise ContractViolation("crop box corners must be ordered per axis")
        if self.model.embodiment != self.embodiment:
            raise ContractViolation(
                f"config embodiment {self.embodiment!r} does not match model {self.model.embodiment!r}")
        if self.watch_points is not None:
            self.watch_points = np.asarray(self.watch_points, dtype=np.float64).reshape(-1, 3)

    def effective_watch_points(self) -> np.ndarray:
        if self.watch_points is not None and len(self.watch_points):
            return self.watch_points
        return crop_box_corners(self.crop_min, self.crop_max)

    def wrist_frame(self) -> str:
        return self.model.wrist_frame()

    def gripper_joint_index(self) -> int:
        if not self.model.gripper_joint:
            raise ContractViolation("model declares no gripper joint")
        for i, j in enumerate(self.model.joints):
            if j.name == self.model.gripper_joint:
                return i
        raise ContractViolation(f"gripper joint {self.model.gripper_joint!r} not in model")


@dataclass(frozen=True)
class EngineState:
    q: np.ndarray
    gripper: GripperState
    last_timestamp: float | None
    display: FeedbackDisplay
    blink_phase: int


@dataclass(frozen=True)
class EngineOutput:
    timestamp: float
    joint_angles: np.ndarray
    gripper_command: GripperCommand | None
    ee_pose: Pose
    events: tuple[FeedbackEvent, ...]
    display: FeedbackDisplay
    lagging: bool
    blink_phase: int


def initial_state(config: EngineConfig) -> EngineState:
    q = config.model.clamp_limits(np.asarray(config.model.rest_posture, dtype=np.float64))
    return EngineState(q=q, gripper=GripperState(), last_timestamp=None,
                       display=FeedbackDisplay(), blink_phase=0)


def process_frame(
    state: EngineState,
    frame: HandFrame,
    config: EngineConfig,
    grid: VoxelGrid,
) -> tuple[EngineState, EngineOutput]:
    """Run one engine tick; pure in (state, frame, config, grid)."""
    if state.last_timestamp is not None and frame.timestamp <= state.last_timestamp:
        raise OrderingError(
            f"frame timestamp {frame.timestamp} not after {state.last_timestamp}")
    dt = (frame.timestamp - state.last_timestamp) if state.last_timestamp is not None else 1.0 / config.tick_rate

    model = config.model
    base = config.base_pose
    world_to_base = base.inverse()
    wrist_frame_name = config.wrist_frame()
    gripper_state = state.gripper
    gripper_command: GripperCommand | None = None

    if config.embodiment == DEX_HAND:
        target = retarget_dex_hand(frame, base)
        wrist_target_base = world_to_base * target.wrist
        arm_result = solve_frame_ik(model, wrist_frame_name, wrist_target_base, state.q, config.ik)
        finger_result = solve_fingertip_ik(model, target.fingertips, arm_result.q, config.ik_fingers)
        q_goal = finger_result.q
    elif config.embodiment == PARALLEL_GRIPPER:
        target, gripper_state = retarget_parallel_gripper(
            frame, state.gripper, config.open_width, config.toggle_period)
        gripper_command = target.gripper
        wrist_target_base = world_to_base * target.wrist
        arm_result = solve_frame_ik(model, wrist_frame_name, wrist_target_base, state.q, config.ik)
        q_goal = arm_result.q.copy()
        ji = config.gripper_joint_index()
        q_goal[ji] = model.hi[ji] if gripper_command == GripperCommand.OPEN else model.lo[ji]
    else:
        raise ContractViolation(f"unknown embodiment {config.embodiment!r}")

    q_next, lagging = clamp_joint_step(state.q, q_goal, dt, model)

    events: list[FeedbackEvent] = []
    colliding = check_collision(model, q_next, base, grid, config.collision_margin)
    if colliding:
        events.append(FeedbackEvent.collision(frame.timestamp, colliding))

    ee_base = frame_pose(model, q_next, wrist_frame_name)
    mismatch = detect_speed_mismatch(
        wrist_target_base, ee_base, config.speed_pos_threshold, config.speed_ori_threshold)
    if mismatch is not None:
        events.append(FeedbackEvent.speed_limit(
            frame.timestamp, mismatch["position_error"], mismatch["orientation_error"]))

    camera_pose = frame.headset * config.camera.mount_offset
    fraction, lost = check_visibility(
        camera_pose, config.camera, config.effective_watch_points(), config.visibility_threshold)
    if lost:
        events.append(FeedbackEvent.visibility_loss(frame.timestamp, fraction))

    display = display_for_tick(collision=bool(colliding), speed_warning=lagging or mismatch is not None)
    blink_phase = int(np.floor(frame.timestamp * BLINK_PHASE_HZ))

    output = EngineOutput(
        timestamp=frame.timestamp,
        joint_angles=q_next,
        gripper_command=gripper_command,
        ee_pose=base * ee_base,
        events=tuple(events),
        display=display,
        lagging=lagging,
        blink_phase=blink_phase,
    )
    new_state = EngineState(q=q_next, gripper=gripper_state, last_timestamp=frame.timestamp,
                            display=display, blink_phase=blink_phase)
    return new_state, output


def place_virtual_robot(config: EngineConfig, base: Pose) -> EngineConfig:
    """Pin the virtual robot base at a fixed world pose; reset state afterwards."""
    return dataclasses.replace(config, base_pose=base)


def calibrate_extrinsics(robot_base_world: Pose, camera_world: Pose) -> Pose:
    """Camera pose in the robot base frame from two aligned world poses."""
    return robot_base_world.inverse() * camera_world


# ---------------------------------------------------------------------------
# Config files


def _pose_from_cfg(d) -> Pose:
    if not d:
        return Pose.identity()
    return Pose(np.asarray(d.get("position") or (0, 0, 0), dtype=np.float64),
                np.asarray(d.get("orientation") or (1, 0, 0, 0), dtype=np.float64))


def _pose_to_cfg(p: Pose) -> dict:
    return {"position": [float(x) for x in p.position],
            "orientation": [float(x) for x in p.orientation]}


def _ik_from_cfg(d: dict | None, defaults: dict | None = None) -> IkParams:
    merged = dict(defaults or {})
    merged.update(d or {})
    known = {k: merged[k] for k in
             ("damping", "max_iterations", "position_tolerance", "orientation_tolerance", "null_space_gain")
             if k in merged}
    params = IkParams(**known)
    if merged.get("rest_posture") is not None:
        params = params.with_rest(np.asarray(merged["rest_posture"], dtype=np.float64))
    return params


def _ik_to_cfg(p: IkParams) -> dict:
    d = {"damping": p.damping, "max_iterations": p.max_iterations,
         "position_tolerance": p.position_tolerance, "orientation_tolerance": p.orientation_tolerance,
         "null_space_gain": p.null_space_gain}
    if p.rest_posture is not None:
        d["rest_posture"] = [float(x) for x in p.rest_posture]
    return d


def resolve_model(ref: str, search_dir: Path | None = None) -> RobotModel:
    """A model reference is a packaged model name or a path to a YAML file."""
    candidate = Path(ref)
    if candidate.suffix in (".yaml", ".yml") or candidate.exists():
        if not candidate.is_absolute() and search_dir is not None and not candidate.exists():
            candidate = search_dir / candidate
        return load_robot_model(candidate)
    packaged = packaged_model_path(ref)
    if packaged.exists():
        return load_packaged_model(ref)
    raise ContractViolation(f"cannot resolve robot model {ref!r}")


def config_from_dict(doc: dict, search_dir: Path | None = None) -> EngineConfig:
    if doc.get("schema") != CONFIG_SCHEMA:
        raise ContractViolation(f"unsupported config schema {doc.get('schema')!r}")
    if "model_spec" in doc:
        model = parse_robot_model(doc["model_spec"])
    else:
        model = resolve_model(doc["model"], search_dir)
    cam = doc.get("camera") or {}
    camera = CameraModel(
        hfov_deg=float(cam.get("hfov_deg", 87.0)),
        vfov_deg=float(cam.get("vfov_deg", 58.0)),
        near=float(cam.get("near_m", 0.3)),
        far=float(cam.get("far_m", 3.0)),
        mount_offset=_pose_from_cfg(cam.get("mount_offset")),
    )
    grip = doc.get("gripper") or {}
    speed = doc.get("speed_mismatch") or {}
    box = doc.get("workspace") or {}
    watch = doc.get("watch_points")
    return EngineConfig(
        embodiment=doc["embodiment"],
        model=model,
        model_ref=doc.get("model", model.name),
        base_pose=_pose_from_cfg(doc.get("base_pose")),
        ik=_ik_from_cfg(doc.get("ik")),
        ik_fingers=_ik_from_cfg(doc.get("ik_fingers"), DEFAULT_FINGER_IK),
        open_width=float(grip.get("open_width_m", DEFAULT_OPEN_WIDTH)),
        toggle_period=float(grip.get("toggle_period_s", DEFAULT_TOGGLE_PERIOD)),
        camera=camera,
        voxel_resolution=float(doc.get("voxel_resolution_m", DEFAULT_VOXEL_RESOLUTION)),
        collision_margin=float(doc.get("collision_margin_m", DEFAULT_COLLISION_MARGIN)),
        visibility_threshold=float(doc.get("visibility_threshold", DEFAULT_VISIBILITY_THRESHOLD)),
        speed_pos_threshold=float(speed.get("position_m", DEFAULT_SPEED_POS_THRESHOLD)),
        speed_ori_threshold=float(np.deg2rad(speed["orientation_deg"])) if "orientation_deg" in speed
        else DEFAULT_SPEED_ORI_THRESHOLD,
        tick_rate=float(doc.get("tick_rate_hz", DEFAULT_TICK_RATE)),
        crop_min=np.asarray(box.get("min", DEFAULT_CROP_MIN), dtype=np.float64),
        crop_max=np.asarray(box.get("max", DEFAULT_CROP_MAX), dtype=np.float64),
        watch_points=np.asarray(watch, dtype=np.float64) if watch else None,
    )


def config_to_dict(config: EngineConfig, embed_model: bool = True) -> dict:
    doc = {
        "schema": CONFIG_SCHEMA,
        "embodiment": config.embodiment,
        "model": config.model_ref or config.model.name,
        "base_pose": _pose_to_cfg(config.base_pose),
        "ik": _ik_to_cfg(config.ik),
        "ik_fingers": _ik_to_cfg(config.ik_fingers),
        "gripper": {"open_width_m": config.open_width, "toggle_period_s": config.toggle_period},
        "camera": {
            "hfov_deg": config.camera.hfov_deg, "vfov_deg": config.camera.vfov_deg,
            "near_m": config.camera.near, "far_m": config.camera.far,
            "mount_offset": _pose_to_cfg(config.camera.mount_offset),
        },
        "voxel_resolution_m": config.voxel_resolution,
        "collision_margin_m": config.collision_margin,
        "visibility_threshold": config.visibility_threshold,
        "speed_mismatch": {"position_m": config.speed_pos_threshold,
                           "orientation_deg": float(np.rad2deg(config.speed_ori_threshold))},
        "tick_rate_hz": config.tick_rate,
        "workspace": {"min": [float(x) for x in config.crop_min],
                      "max": [float(x) for x in config.crop_max]},
    }
    if config.watch_points is not None:
        doc["watch_points"] = [[float(v) for v in p] for p in config.watch_points]
    if embed_model:
        doc["model_spec"] = robot_model_to_dict(config.model)
    return doc


def load_config(path: str | Path) -> EngineConfig:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(yaml.safe_load(fh), search_dir=path.parent)


def default_config(embodiment: str) -> EngineConfig:
    if embodiment == DEX_HAND:
        model_ref = "arm_dexhand"
    elif embodiment == PARALLEL_GRIPPER:
        model_ref = "arm_gripper"
    else:
        raise ContractViolation(f"unknown embodiment {embodiment!r}")
    return EngineConfig(embodiment=embodiment, model=load_packaged_model(model_ref), model_ref=model_ref)
