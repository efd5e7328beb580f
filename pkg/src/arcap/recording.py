"""Demonstration recording, the session container, and post-processing.

A session is a directory ``session-<id>/`` holding a JSON ``manifest`` and
numbered binary chunks of 60 frames each (little-endian; see docs in the
README for the exact layout). Frames are coerced to their storage precision
(float32 / uint8) when built, so encode/decode round-trips are bit-exact and
re-recording the same stream reproduces identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import EngineConfig, config_from_dict, config_to_dict
from .errors import ContractViolation, IntegrityError, OrderingError, StateError
from .geometry import Pose
from .kinematics import RobotModel
from .retargeting import GripperCommand
from .scene import CameraModel, ColoredPointCloud, EventKind, visible_mask

CHUNK_FRAMES = 60
MANIFEST_NAME = "manifest"
MANIFEST_SCHEMA = 1

STATUS_RECORDING = "recording"
STATUS_FINALIZED = "finalized"
STATUS_DISCARDED = "discarded"

_EVENT_BITS = {EventKind.COLLISION: 1, EventKind.SPEED_LIMIT: 2, EventKind.VISIBILITY_LOSS: 4}
_GRIPPER_CODES = {None: 0, GripperCommand.OPEN: 1, GripperCommand.CLOSED: 2}
_GRIPPER_FROM_CODE = {0: None, 1: GripperCommand.OPEN, 2: GripperCommand.CLOSED}

# Robot points get a fixed per-link color so superimposed clouds are stable.
LINK_COLOR_TABLE = (
    (230, 60, 60), (60, 160, 230), (90, 200, 90), (235, 170, 50),
    (170, 90, 220), (70, 210, 200), (230, 110, 180), (150, 150, 150),
    (200, 200, 70), (100, 120, 230), (120, 220, 140), (220, 130, 80),
)


def _f32(a) -> np.ndarray:
    """Round float64 values to their float32 representation (kept as float64)."""
    return np.asarray(np.asarray(a, dtype=np.float32), dtype=np.float64)


@dataclass(frozen=True, eq=False)
class DemoFrame:
    """One recorded tick: the four data channels plus event annotations."""

    timestamp: float
    cloud: ColoredPointCloud
    joint_angles: np.ndarray
    headset_position: np.ndarray
    headset_orientation: np.ndarray
    base_position: np.ndarray
    base_orientation: np.ndarray
    gripper_command: GripperCommand | None
    events: frozenset[EventKind]

    @staticmethod
    def create(timestamp, cloud: ColoredPointCloud | None, joint_angles, headset: Pose,
               base: Pose, gripper_command=None, events=()) -> "DemoFrame":
        cloud = cloud if cloud is not None else ColoredPointCloud()
        return DemoFrame(
            timestamp=float(timestamp),
            cloud=ColoredPointCloud(_f32(cloud.points), cloud.colors),
            joint_angles=_f32(joint_angles).reshape(-1),
            headset_position=_f32(headset.position),
            headset_orientation=_f32(headset.orientation),
            base_position=_f32(base.position),
            base_orientation=_f32(base.orientation),
            gripper_command=gripper_command,
            events=frozenset(events),
        )

    def headset_pose(self) -> Pose:
        return Pose(self.headset_position, self.headset_orientation)

    def base_pose(self) -> Pose:
        return Pose(self.base_position, self.base_orientation)

    def event_bitmask(self) -> int:
        return sum(_EVENT_BITS[e] for e in self.events)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DemoFrame):
            return NotImplemented
        return (
            self.timestamp == other.timestamp
            and np.array_equal(self.cloud.points, other.cloud.points)
            and np.array_equal(self.cloud.colors, other.cloud.colors)
            and np.array_equal(self.joint_angles, other.joint_angles)
            and np.array_equal(self.headset_position, other.headset_position)
            and np.array_equal(self.headset_orientation, other.headset_orientation)
            and np.array_equal(self.base_position, other.base_position)
            and np.array_equal(self.base_orientation, other.base_orientation)
            and self.gripper_command == other.gripper_command
            and self.events == other.events
        )


def encode_demo_frame(frame: DemoFrame) -> bytes:
    parts = [struct.pack("<d", frame.timestamp), struct.pack("<I", len(frame.cloud))]
    if len(frame.cloud):
        rec = np.empty(len(frame.cloud), dtype=np.dtype([("xyz", "<f4", 3), ("rgb", "u1", 3)]))
        rec["xyz"] = frame.cloud.points.astype("<f4")
        rec["rgb"] = frame.cloud.colors
        parts.append(rec.tobytes())
    parts.append(struct.pack("<H", len(frame.joint_angles)))
    parts.append(frame.joint_angles.astype("<f4").tobytes())
    for vec in (frame.headset_position, frame.headset_orientation, frame.base_position, frame.base_orientation):
        parts.append(np.asarray(vec).astype("<f4").tobytes())
    parts.append(struct.pack("<BB", _GRIPPER_CODES[frame.gripper_command], frame.event_bitmask()))
    return b"".join(parts)


def decode_demo_frame(buf: bytes, offset: int = 0) -> tuple[DemoFrame, int]:
    try:
        (timestamp,) = struct.unpack_from("<d", buf, offset)
        offset += 8
        (count,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        point_bytes = count * 15
        rec = np.frombuffer(buf, dtype=np.dtype([("xyz", "<f4", 3), ("rgb", "u1", 3)]), count=count, offset=offset)
        offset += point_bytes
        (dof,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        q = np.frombuffer(buf, dtype="<f4", count=dof, offset=offset).astype(np.float64)
        offset += 4 * dof
        pose_vals = np.frombuffer(buf, dtype="<f4", count=14, offset=offset).astype(np.float64)
        offset += 4 * 14
        grip_code, mask = struct.unpack_from("<BB", buf, offset)
        offset += 2
    except (struct.error, ValueError) as exc:
        raise IntegrityError(f"truncated frame at byte {offset}: {exc}") from exc
    if grip_code not in _GRIPPER_FROM_CODE:
        raise IntegrityError(f"bad gripper code {grip_code}")
    events = frozenset(kind for kind, bit in _EVENT_BITS.items() if mask & bit)
    cloud = ColoredPointCloud(rec["xyz"].astype(np.float64), rec["rgb"].copy())
    frame = DemoFrame(
        timestamp=timestamp, cloud=cloud, joint_angles=q,
        headset_position=pose_vals[0:3], headset_orientation=pose_vals[3:7],
        base_position=pose_vals[7:10], base_orientation=pose_vals[10:14],
        gripper_command=_GRIPPER_FROM_CODE[grip_code], events=events,
    )
    return frame, offset


@dataclass
class DemoSession:
    session_id: str
    config: dict
    frames: list[DemoFrame]
    status: str

    def engine_config(self) -> EngineConfig:
        return config_from_dict(self.config)


def _chunk_name(index: int) -> str:
    return f"chunk-{index:05d}.bin"


class DemoRecorder:
    """Single-writer recorder for one session directory."""

    def __init__(self, directory: str | Path, config: EngineConfig):
        self.directory = Path(directory)
        if self.directory.exists() and any(self.directory.iterdir()):
            raise StateError(f"{self.directory} already exists and is not empty")
        self.directory.mkdir(parents=True, exist_ok=True)
        name = self.directory.name
        self.session_id = name[len("session-"):] if name.startswith("session-") else name
        self.config_doc = config_to_dict(config)
        self.status = STATUS_RECORDING
        self._buffer: list[DemoFrame] = []
        self._chunks: list[dict] = []
        self._frame_count = 0
        self._event_totals = {kind.value: 0 for kind in EventKind}
        self._last_timestamp: float | None = None

    def append(self, frame: DemoFrame) -> None:
        if self.status != STATUS_RECORDING:
            raise StateError(f"cannot append to a {self.status} session")
        if self._last_timestamp is not None and frame.timestamp <= self._last_timestamp:
            raise OrderingError(
                f"frame timestamp {frame.timestamp} not after {self._last_timestamp}")
        self._buffer.append(frame)
        self._last_timestamp = frame.timestamp
        self._frame_count += 1
        for kind in frame.events:
            self._event_totals[kind.value] += 1
        if len(self._buffer) >= CHUNK_FRAMES:
            self._flush()

    def _flush(self) -> None:
        if not self._buffer:
            return
        data = b"".join(encode_demo_frame(f) for f in self._buffer)
        name = _chunk_name(len(self._chunks))
        (self.directory / name).write_bytes(data)
        self._chunks.append({"file": name, "frames": len(self._buffer),
                             "sha256": hashlib.sha256(data).hexdigest()})
        self._buffer = []

    def _write_manifest(self) -> None:
        doc = {
            "schema": MANIFEST_SCHEMA,
            "session_id": self.session_id,
            "status": self.status,
            "frame_count": self._frame_count,
            "event_totals": self._event_totals,
            "chunks": self._chunks,
            "config": self.config_doc,
        }
        (self.directory / MANIFEST_NAME).write_text(
            json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    def finalize(self) -> None:
        if self.status != STATUS_RECORDING:
            raise StateError(f"cannot finalize a {self.status} session")
        self._flush()
        self.status = STATUS_FINALIZED
        self._write_manifest()

    def discard(self) -> None:
        """Drop the payload but keep a tombstone manifest for bookkeeping."""
        if self.status != STATUS_RECORDING:
            raise StateError(f"cannot discard a {self.status} session")
        self._buffer = []
        for chunk in self._chunks:
            path = self.directory / chunk["file"]
            if path.exists():
                path.unlink()
        self._chunks = []
        self.status = STATUS_DISCARDED
        self._write_manifest()


def read_session(directory: str | Path) -> DemoSession:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise StateError(f"{directory} has no manifest (session still recording or missing)")
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{manifest_path}: invalid manifest: {exc}") from exc
    if doc.get("schema") != MANIFEST_SCHEMA:
        raise IntegrityError(f"unsupported manifest schema {doc.get('schema')!r}")
    frames: list[DemoFrame] = []
    frame_index = 0
    for ci, chunk in enumerate(doc.get("chunks", ())):
        path = directory / chunk["file"]
        if not path.exists():
            raise IntegrityError(f"missing chunk {chunk['file']} (frame {frame_index})")
        data = path.read_bytes()
        if hashlib.sha256(data).hexdigest() != chunk["sha256"]:
            raise IntegrityError(f"checksum mismatch in {chunk['file']} (frames from {frame_index})")
        offset = 0
        for _ in range(chunk["frames"]):
            try:
                frame, offset = decode_demo_frame(data, offset)
            except IntegrityError as exc:
                raise IntegrityError(f"{chunk['file']}: corrupt frame {frame_index}: {exc}") from exc
            frames.append(frame)
            frame_index += 1
        if offset != len(data):
            raise IntegrityError(f"{chunk['file']}: {len(data) - offset} trailing bytes after frame {frame_index - 1}")
    if doc["status"] == STATUS_FINALIZED and len(frames) != doc.get("frame_count"):
        raise IntegrityError(f"manifest says {doc.get('frame_count')} frames, found {len(frames)}")
    return DemoSession(session_id=doc["session_id"], config=doc.get("config", {}),
                       frames=frames, status=doc["status"])


# ---------------------------------------------------------------------------
# Post-processing


@dataclass(frozen=True)
class ProcessedFrame:
    """World-frame cropped cloud with per-point source labels (0=scene, 1=robot)."""

    timestamp: float
    points: np.ndarray
    colors: np.ndarray
    labels: np.ndarray
    joint_angles: np.ndarray
    headset_position: np.ndarray
    headset_orientation: np.ndarray
    base_position: np.ndarray
    base_orientation: np.ndarray
    gripper_command: GripperCommand | None


def fibonacci_sphere(n: int) -> np.ndarray:
    """Deterministic, roughly uniform unit-sphere lattice."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    phi = golden * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def render_robot_cloud(
    model: RobotModel,
    q,
    base: Pose,
    camera_pose: Pose,
    cam: CameraModel,
    samples_per_sphere: int = 64,
) -> tuple[ColoredPointCloud, np.ndarray]:
    """Camera-visible surface samples of the robot's collision spheres.

    A sample survives if it sits inside the camera frustum and its outward
    normal faces the camera. Returns (cloud in world frame, link index per
    point).
    """
    if samples_per_sphere < 1:
        raise ContractViolation("samples_per_sphere must be >= 1")
    lattice = fibonacci_sphere(samples_per_sphere)
    centers = model.sphere_world_centers(q, base)
    cam_pos = camera_pose.position
    pts_out, col_out, link_out = [], [], []
    for si in range(len(centers)):
        pts = centers[si] + model.sphere_radii[si] * lattice
        facing = np.einsum("ij,ij->i", lattice, cam_pos - pts) > 0.0
        keep = facing & visible_mask(camera_pose, cam, pts)
        if np.any(keep):
            li = int(model.sphere_link[si])
            color = LINK_COLOR_TABLE[li % len(LINK_COLOR_TABLE)]
            pts_out.append(pts[keep])
            col_out.append(np.tile(np.asarray(color, dtype=np.uint8), (int(np.count_nonzero(keep)), 1)))
            link_out.append(np.full(int(np.count_nonzero(keep)), li, dtype=np.int64))
    if not pts_out:
        return ColoredPointCloud(), np.zeros(0, dtype=np.int64)
    return (ColoredPointCloud(np.concatenate(pts_out), np.concatenate(col_out)),
            np.concatenate(link_out))


def crop_mask(points: np.ndarray, crop_min, crop_max) -> np.ndarray:
    lo = np.asarray(crop_min, dtype=np.float64)
    hi = np.asarray(crop_max, dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return np.all((pts >= lo) & (pts <= hi), axis=1)


def postprocess_session(
    session: DemoSession,
    crop_min=None,
    crop_max=None,
    model: RobotModel | None = None,
    samples_per_sphere: int = 64,
) -> list[ProcessedFrame]:
    """World-frame transform, workspace crop, and robot-cloud superimposition."""
    if session.status != STATUS_FINALIZED:
        raise StateError(f"cannot post-process a {session.status} session")
    config = session.engine_config()
    model = model or config.model
    lo = np.asarray(crop_min if crop_min is not None else config.crop_min, dtype=np.float64)
    hi = np.asarray(crop_max if crop_max is not None else config.crop_max, dtype=np.float64)
    out: list[ProcessedFrame] = []
    for frame in session.frames:
        camera_pose = frame.headset_pose() * config.camera.mount_offset
        world = camera_pose.transform_points(frame.cloud.points) if len(frame.cloud) else np.zeros((0, 3))
        keep = crop_mask(world, lo, hi) if len(world) else np.zeros(0, dtype=bool)
        scene_pts = world[keep]
        scene_col = frame.cloud.colors[keep]
        robot_cloud, _ = render_robot_cloud(
            model, frame.joint_angles, frame.base_pose(), camera_pose, config.camera, samples_per_sphere)
        rkeep = crop_mask(robot_cloud.points, lo, hi) if len(robot_cloud) else np.zeros(0, dtype=bool)
        robot_pts = robot_cloud.points[rkeep]
        robot_col = robot_cloud.colors[rkeep]
        out.append(ProcessedFrame(
            timestamp=frame.timestamp,
            points=np.concatenate([scene_pts, robot_pts]) if len(scene_pts) + len(robot_pts) else np.zeros((0, 3)),
            colors=np.concatenate([scene_col, robot_col]) if len(scene_col) + len(robot_col) else np.zeros((0, 3), dtype=np.uint8),
            labels=np.concatenate([np.zeros(len(scene_pts), dtype=np.int8), np.ones(len(robot_pts), dtype=np.int8)]),
            joint_angles=frame.joint_angles,
            headset_position=frame.headset_position,
            headset_orientation=frame.headset_orientation,
            base_position=frame.base_position,
            base_orientation=frame.base_orientation,
            gripper_command=frame.gripper_command,
        ))
    return out


def export_hdf5(session: DemoSession, processed: list[ProcessedFrame], path: str | Path) -> None:
    """Write the training-ready layout: /obs, /poses, /actions groups."""
    import h5py

    grip_num = {None: -1, GripperCommand.CLOSED: 0, GripperCommand.OPEN: 1}
    with h5py.File(path, "w", track_order=False) as hf:
        def dset(name, data):
            hf.create_dataset(name, data=data, track_times=False)

        T = len(processed)
        dof = len(processed[0].joint_angles) if T else 0
        dset("/obs/joint_angles", np.array([p.joint_angles for p in processed], dtype=np.float32).reshape(T, dof))
        dset("/poses/headset", np.array(
            [np.concatenate([p.headset_position, p.headset_orientation]) for p in processed],
            dtype=np.float32).reshape(T, 7))
        dset("/poses/robot_base", np.array(
            [np.concatenate([p.base_position, p.base_orientation]) for p in processed],
            dtype=np.float32).reshape(T, 7))
        dset("/actions/gripper", np.array([grip_num[p.gripper_command] for p in processed], dtype=np.int8))
        dset("/timestamps", np.array([p.timestamp for p in processed], dtype=np.float64))
        pc = hf.create_group("/obs/point_cloud")
        for i, p in enumerate(processed):
            cols = np.concatenate(
                [p.points, p.colors.astype(np.float64), p.labels[:, None].astype(np.float64)], axis=1)
            pc.create_dataset(f"{i:06d}", data=cols.astype(np.float32), track_times=False)
        hf.attrs["session_id"] = session.session_id
        hf.attrs["frame_count"] = T
