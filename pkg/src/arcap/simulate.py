"""Synthetic tracker streams for desk-scale testing without any hardware.

Each scenario is a smooth minimum-jerk wrist trajectory at 60 Hz with a
scenario-specific violation injected: sweeping through a voxel obstacle,
teleport steps that outrun the joint speed limits, or a headset pan that
drops the workspace out of the camera frustum. Streams are deterministic in
(scenario, seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import EngineConfig, default_config
from .errors import ContractViolation
from .geometry import Pose, matrix_to_quat, quat_from_axis_angle, quat_multiply
from .kinematics import DEX_HAND, forward_kinematics, load_packaged_model
from .retargeting import HandFrame
from .scene import ColoredPointCloud, visible_mask

SCENARIOS = ("reach", "pick_place", "sweep_through_obstacle", "fast_jerk", "out_of_view")

TICK_RATE = 60.0

HEADSET_POSITION = np.array([-0.45, 0.0, 1.0])
HEADSET_TARGET = np.array([0.55, 0.0, 0.30])

# Wrist orientation matches the arm's rest tool direction (forward, slightly
# down) so tracking starts without a transient.
WRIST_QUAT = quat_from_axis_angle([0, 1, 0], np.deg2rad(100.0))

OBSTACLE_MIN = np.array([0.50, 0.06, 0.22])
OBSTACLE_MAX = np.array([0.62, 0.18, 0.40])

PINCH_OPEN = 0.12
PINCH_CLOSED = 0.02


def look_at_pose(position, target) -> Pose:
    """Camera-convention pose (+z forward, +y down) looking from position to target."""
    z = np.asarray(target, dtype=np.float64) - np.asarray(position, dtype=np.float64)
    z = z / np.linalg.norm(z)
    x = np.cross([0.0, 0.0, -1.0], z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.asarray(position, dtype=np.float64), matrix_to_quat(np.stack([x, y, z], axis=1)))


def min_jerk(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return 10 * u**3 - 15 * u**4 + 6 * u**5


class _Path:
    """Piecewise minimum-jerk interpolation through (time, value) knots."""

    def __init__(self, knots: list[tuple[float, np.ndarray]]):
        self.times = np.array([t for t, _ in knots])
        self.values = np.array([np.atleast_1d(np.asarray(v, dtype=np.float64)) for _, v in knots])

    def at(self, t: float) -> np.ndarray:
        if t <= self.times[0]:
            return self.values[0]
        if t >= self.times[-1]:
            return self.values[-1]
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        t0, t1 = self.times[i], self.times[i + 1]
        s = min_jerk(np.array([(t - t0) / (t1 - t0)]))[0]
        return self.values[i] + s * (self.values[i + 1] - self.values[i])


def _dex_rest_tips() -> dict[str, np.ndarray]:
    hand = load_packaged_model("dexhand16")
    fk = forward_kinematics(hand, hand.rest_posture)
    tips = {name.replace("_tip", ""): fk[name].position for name in hand.fingertip_frames()}
    tips["pinky"] = tips["ring"] + np.array([0.0, 0.022, -0.01])
    return tips


def _fingertips(config: EngineConfig, pinch: float, dex_tips: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Wrist-frame fingertip set with the requested index-thumb separation."""
    if config.embodiment == DEX_HAND:
        tips = {k: v.copy() for k, v in dex_tips.items()}
        mid = 0.5 * (tips["index"] + tips["thumb"])
        gap = tips["index"] - tips["thumb"]
        gap_norm = float(np.linalg.norm(gap))
        scale = pinch / gap_norm if gap_norm > 1e-9 else 0.0
        tips["index"] = mid + 0.5 * scale * gap
        tips["thumb"] = mid - 0.5 * scale * gap
        return tips
    return {
        "index": np.array([0.0, -pinch / 2, 0.0]),
        "thumb": np.array([0.0, pinch / 2, 0.0]),
        "middle": np.array([0.02, -0.01, 0.06]),
        "ring": np.array([0.02, 0.015, 0.06]),
        "pinky": np.array([0.02, 0.04, 0.05]),
    }


def obstacle_lattice(config: EngineConfig, lo=OBSTACLE_MIN, hi=OBSTACLE_MAX) -> np.ndarray:
    """Points on the voxel-center lattice filling [lo, hi] (grid origin 0)."""
    res = config.voxel_resolution
    axes = [np.arange(np.floor(l / res), np.ceil(h / res)) * res + res / 2 for l, h in zip(lo, hi)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    keep = np.all((pts >= lo) & (pts <= hi), axis=1)
    return pts[keep]


def table_patch(config: EngineConfig, step: float = 0.06) -> np.ndarray:
    lo, hi = config.crop_min, config.crop_max
    xs = np.arange(lo[0] + 0.02, hi[0] - 0.02, step)
    ys = np.arange(lo[1] + 0.02, hi[1] - 0.02, step)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)


def scenario_scene(scenario: str, config: EngineConfig | None = None) -> ColoredPointCloud:
    """The static scan a demonstrator would capture for this scenario."""
    config = config or default_config("parallel_gripper")
    table = table_patch(config)
    colors = [np.tile(np.array([120, 120, 120], dtype=np.uint8), (len(table), 1))]
    points = [table]
    if scenario == "sweep_through_obstacle":
        obst = obstacle_lattice(config)
        points.append(obst)
        colors.append(np.tile(np.array([200, 60, 40], dtype=np.uint8), (len(obst), 1)))
    return ColoredPointCloud(np.concatenate(points), np.concatenate(colors))


@dataclass
class _Script:
    wrist_path: _Path
    pinch_path: _Path
    duration: float
    headset_fn: object = None  # optional callable t -> Pose


def _build_script(scenario: str, seed: int, rng: np.random.Generator) -> _Script:
    rest = np.array([0.5, 0.0, 0.35])
    j = lambda: rng.uniform(-0.02, 0.02, 3)  # small per-seed waypoint variation

    if scenario == "reach":
        a = rest + j()
        b = np.array([0.62, 0.16, 0.26]) + j()
        c = np.array([0.48, -0.12, 0.30]) + j()
        wrist = _Path([(0.0, a), (1.8, b), (3.0, b), (4.6, c), (6.0, a)])
        pinch = _Path([(0.0, np.array([PINCH_OPEN])), (6.0, np.array([PINCH_OPEN]))])
        return _Script(wrist, pinch, 6.0)

    if scenario == "pick_place":
        a = rest + j()
        pick = np.array([0.56, -0.16, 0.24]) + j()
        lift = pick + np.array([0.0, 0.0, 0.16])
        place = np.array([0.56, 0.18, 0.40]) + j()
        down = place - np.array([0.0, 0.0, 0.14])
        wrist = _Path([(0.0, a), (1.6, pick), (3.2, pick), (4.4, lift), (6.0, place),
                       (7.2, down), (8.8, down), (10.0, a)])
        pinch = _Path([(0.0, np.array([PINCH_OPEN])), (1.8, np.array([PINCH_OPEN])),
                       (2.4, np.array([PINCH_CLOSED])), (8.4, np.array([PINCH_CLOSED])),
                       (9.0, np.array([PINCH_OPEN])), (10.0, np.array([PINCH_OPEN]))])
        return _Script(wrist, pinch, 10.0)

    if scenario == "sweep_through_obstacle":
        mid = 0.5 * (OBSTACLE_MIN + OBSTACLE_MAX)
        a = np.array([mid[0], -0.22, mid[2]]) + j()
        b = np.array([mid[0], 0.34, mid[2]])  # straight sweep through the box in y
        wrist = _Path([(0.0, a), (1.0, a), (3.4, b), (4.0, b), (6.4, a)])
        pinch = _Path([(0.0, np.array([PINCH_OPEN])), (6.4, np.array([PINCH_OPEN]))])
        return _Script(wrist, pinch, 6.4)

    if scenario == "fast_jerk":
        left = np.array([0.48, -0.24, 0.32])
        right = np.array([0.48, 0.26, 0.32])  # 0.5 m apart
        knots = [(0.0, rest + j())]
        t = 1.0
        side = left
        while t < 9.0:
            knots.append((t, side.copy()))
            # an instantaneous step: the next knot starts at the other side
            knots.append((t + 1.0 / TICK_RATE / 2, np.array(right if side is left else left)))
            side = right if side is left else left
            t += 1.0 + float(rng.uniform(0.0, 0.5))
        knots.append((t + 1.0, rest + j()))
        wrist = _Path(knots)
        pinch = _Path([(0.0, np.array([PINCH_OPEN])), (t + 1.0, np.array([PINCH_OPEN]))])
        return _Script(wrist, pinch, t + 1.0)

    if scenario == "out_of_view":
        a = rest + j()
        b = np.array([0.60, 0.10, 0.30]) + j()
        wrist = _Path([(0.0, a), (2.0, b), (5.0, b), (7.0, a)])
        pinch = _Path([(0.0, np.array([PINCH_OPEN])), (7.0, np.array([PINCH_OPEN]))])
        yaw = _Path([(0.0, np.array([0.0])), (2.2, np.array([0.0])), (3.4, np.array([2.2])),
                     (4.6, np.array([2.2])), (5.8, np.array([0.0])), (7.0, np.array([0.0]))])
        base_pose = look_at_pose(HEADSET_POSITION, HEADSET_TARGET)

        def headset(t: float) -> Pose:
            angle = float(yaw.at(t)[0])
            return Pose(base_pose.position,
                        quat_multiply(quat_from_axis_angle([0, 0, 1], angle), base_pose.orientation))

        return _Script(wrist, pinch, 7.0, headset_fn=headset)

    raise ContractViolation(f"unknown scenario {scenario!r}; choose one of {SCENARIOS}")


def generate_stream(
    scenario: str,
    seed: int,
    config: EngineConfig | None = None,
    include_clouds: bool = True,
) -> list[tuple[HandFrame, ColoredPointCloud | None]]:
    """Deterministic 60 Hz (HandFrame, camera cloud) stream for a scenario."""
    if scenario not in SCENARIOS:
        raise ContractViolation(f"unknown scenario {scenario!r}; choose one of {SCENARIOS}")
    config = config or default_config("parallel_gripper")
    rng = np.random.default_rng(seed)
    script = _build_script(scenario, seed, rng)
    headset_default = look_at_pose(HEADSET_POSITION, HEADSET_TARGET)
    scene = scenario_scene(scenario, config) if include_clouds else None
    dex_tips = _dex_rest_tips() if config.embodiment == DEX_HAND else {}
    frames: list[tuple[HandFrame, ColoredPointCloud | None]] = []
    n = int(round(script.duration * TICK_RATE))
    for k in range(n):
        t = k / TICK_RATE
        wrist = Pose(script.wrist_path.at(t), WRIST_QUAT)
        pinch = float(script.pinch_path.at(t)[0])
        headset = script.headset_fn(t) if script.headset_fn else headset_default
        frame = HandFrame(timestamp=t, wrist=wrist, headset=headset,
                          fingertips=_fingertips(config, pinch, dex_tips))
        cloud = None
        if scene is not None:
            cam_pose = headset * config.camera.mount_offset
            keep = visible_mask(cam_pose, config.camera, scene.points)
            cam_pts = cam_pose.inverse().transform_points(scene.points[keep])
            cloud = ColoredPointCloud(cam_pts.astype(np.float32).astype(np.float64), scene.colors[keep])
        frames.append((frame, cloud))
    return frames


def simulate_to_file(scenario: str, seed: int, path: str | Path,
                     config: EngineConfig | None = None, include_clouds: bool = True) -> int:
    from .protocol import write_hand_stream

    frames = generate_stream(scenario, seed, config, include_clouds)
    write_hand_stream(path, frames)
    return len(frames)
