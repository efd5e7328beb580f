"""Scene occupancy, collision checking, frustum visibility, and feedback.

The scanned scene becomes a voxel occupancy grid. A robot link is flagged as
colliding when any of its spheres comes within radius + margin + half the
voxel diagonal of an occupied voxel center; this is conservative against a
point-level check (no false negatives) at the cost of positives within the
half-diagonal inflation band.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractViolation, IntegrityError
from .geometry import Pose, rotvec_between
from .kinematics import RobotModel

PCD_MAGIC = b"ARCPCD1"

DEFAULT_VOXEL_RESOLUTION = 0.02
DEFAULT_COLLISION_MARGIN = 0.01
DEFAULT_VISIBILITY_THRESHOLD = 0.95
DEFAULT_SPEED_POS_THRESHOLD = 0.05
DEFAULT_SPEED_ORI_THRESHOLD = np.deg2rad(15.0)

_POINT_DTYPE = np.dtype([("xyz", "<f4", 3), ("rgb", "u1", 3)])


@dataclass(frozen=True)
class ColoredPointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    colors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.uint8))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.size and not np.all(np.isfinite(pts)):
            raise ContractViolation("point cloud contains non-finite coordinates")
        cols = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if len(cols) != len(pts):
            if len(cols) == 0:
                cols = np.zeros((len(pts), 3), dtype=np.uint8)
            else:
                raise ContractViolation("colors length must match points")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "colors", cols)

    def __len__(self) -> int:
        return len(self.points)


def save_point_cloud(path: str | Path, cloud: ColoredPointCloud, binary: bool = True) -> None:
    path = Path(path)
    if binary:
        rec = np.empty(len(cloud), dtype=_POINT_DTYPE)
        rec["xyz"] = cloud.points.astype("<f4")
        rec["rgb"] = cloud.colors
        with open(path, "wb") as fh:
            fh.write(PCD_MAGIC)
            fh.write(struct.pack("<I", len(cloud)))
            fh.write(rec.tobytes())
    else:
        with open(path, "w", encoding="utf-8") as fh:
            for (x, y, z), (r, g, b) in zip(cloud.points, cloud.colors):
                fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r} {int(r)} {int(g)} {int(b)}\n")


def load_point_cloud(path: str | Path) -> ColoredPointCloud:
    """Read a scene cloud, binary (magic-prefixed) or plain-text xyzrgb."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(PCD_MAGIC))
        if head == PCD_MAGIC:
            raw = fh.read(4)
            if len(raw) < 4:
                raise IntegrityError(f"{path}: truncated header")
            (count,) = struct.unpack("<I", raw)
            body = fh.read(count * _POINT_DTYPE.itemsize)
            if len(body) != count * _POINT_DTYPE.itemsize:
                raise IntegrityError(f"{path}: expected {count} points, file truncated")
            rec = np.frombuffer(body, dtype=_POINT_DTYPE)
            return ColoredPointCloud(rec["xyz"].astype(np.float64), rec["rgb"].copy())
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 6:
                raise IntegrityError(f"{path}:{lineno}: expected 'x y z r g b'")
            rows.append([float(v) for v in parts])
    if not rows:
        return ColoredPointCloud()
    arr = np.asarray(rows)
    return ColoredPointCloud(arr[:, :3], arr[:, 3:].astype(np.uint8))


class VoxelGrid:
    """Occupancy grid with floor((p - origin)/resolution) indexing."""

    def __init__(self, origin, resolution: float, occupied=()):
        if resolution <= 0:
            raise ContractViolation("resolution must be > 0")
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.resolution = float(resolution)
        self.occupied: frozenset[tuple[int, int, int]] = frozenset(tuple(int(i) for i in ix) for ix in occupied)
        self._tree: cKDTree | None = None
        self._centers: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.occupied)

    @property
    def half_diagonal(self) -> float:
        return self.resolution * np.sqrt(3.0) / 2.0

    def centers(self) -> np.ndarray:
        if self._centers is None:
            if self.occupied:
                idx = np.array(sorted(self.occupied), dtype=np.float64)
                self._centers = (idx + 0.5) * self.resolution + self.origin
            else:
                self._centers = np.zeros((0, 3))
        return self._centers

    def nearest_center_distances(self, points: np.ndarray) -> np.ndarray:
        """Distance from each query point to the nearest occupied voxel center."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if not self.occupied:
            return np.full(len(points), np.inf)
        if self._tree is None:
            self._tree = cKDTree(self.centers())
        dist, _ = self._tree.query(points)
        return dist


def voxelize(cloud, origin, resolution: float) -> VoxelGrid:
    """Occupancy of every voxel containing at least one cloud point."""
    if resolution <= 0:
        raise ContractViolation("resolution must be > 0")
    points = cloud.points if isinstance(cloud, ColoredPointCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    if len(points) == 0:
        return VoxelGrid(origin, resolution)
    idx = np.floor((points - origin) / resolution).astype(np.int64)
    return VoxelGrid(origin, resolution, set(map(tuple, idx.tolist())))


def check_collision(model: RobotModel, q, base: Pose, grid: VoxelGrid, margin: float = DEFAULT_COLLISION_MARGIN) -> list[str]:
    """Names of links whose spheres come within the inflated band of the scene."""
    if len(grid) == 0 or len(model.sphere_radii) == 0:
        return []
    centers = model.sphere_world_centers(q, base)
    dist = grid.nearest_center_distances(centers)
    hit = dist <= model.sphere_radii + margin + grid.half_diagonal
    names = []
    for li in np.unique(model.sphere_link[hit]):
        names.append(model.links[li].name)
    return sorted(names, key=lambda n: model.link_index[n])


@dataclass(frozen=True)
class CameraModel:
    hfov_deg: float = 87.0
    vfov_deg: float = 58.0
    near: float = 0.3
    far: float = 3.0
    mount_offset: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise ContractViolation("camera needs 0 < near < far")
        if not (0 < self.hfov_deg < 180 and 0 < self.vfov_deg < 180):
            raise ContractViolation("FOV must be in (0, 180) degrees")

    def tan_half(self) -> tuple[float, float]:
        return (float(np.tan(np.deg2rad(self.hfov_deg) / 2)), float(np.tan(np.deg2rad(self.vfov_deg) / 2)))


def visible_mask(camera_pose: Pose, cam: CameraModel, points_world: np.ndarray) -> np.ndarray:
    """Per-point frustum test; camera frame is +z forward, +x right, +y down."""
    pts = camera_pose.inverse().transform_points(points_world)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    th, tv = cam.tan_half()
    with np.errstate(divide="ignore", invalid="ignore"):
        inside = (z >= cam.near) & (z <= cam.far) & (np.abs(x) <= th * z) & (np.abs(y) <= tv * z)
    return inside


def check_visibility(
    camera_pose: Pose,
    cam: CameraModel,
    watch_points,
    threshold: float = DEFAULT_VISIBILITY_THRESHOLD,
) -> tuple[float, bool]:
    """(visible fraction, lost flag) for the configured watch points."""
    pts = np.asarray(watch_points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ContractViolation("watch points must be non-empty")
    fraction = float(np.count_nonzero(visible_mask(camera_pose, cam, pts))) / len(pts)
    return fraction, fraction < threshold


def detect_speed_mismatch(
    target: Pose,
    actual: Pose,
    pos_threshold: float = DEFAULT_SPEED_POS_THRESHOLD,
    ori_threshold: float = DEFAULT_SPEED_ORI_THRESHOLD,
) -> dict | None:
    """Error magnitudes when the end effector visibly trails its target, else None."""
    if pos_threshold <= 0 or ori_threshold <= 0:
        raise ContractViolation("thresholds must be > 0")
    pos_error = float(np.linalg.norm(target.position - actual.position))
    ori_error = float(np.linalg.norm(rotvec_between(target.orientation, actual.orientation)))
    if pos_error > pos_threshold or ori_error > ori_threshold:
        return {"position_error": pos_error, "orientation_error": ori_error}
    return None


class EventKind(enum.Enum):
    COLLISION = "collision"
    SPEED_LIMIT = "speed_limit"
    VISIBILITY_LOSS = "visibility_loss"


_DETAIL_KEYS = {
    EventKind.COLLISION: {"links"},
    EventKind.SPEED_LIMIT: {"position_error", "orientation_error"},
    EventKind.VISIBILITY_LOSS: {"visible_fraction"},
}


@dataclass(frozen=True)
class FeedbackEvent:
    kind: EventKind
    timestamp: float
    detail: dict

    def __post_init__(self):
        if set(self.detail) != _DETAIL_KEYS[self.kind]:
            raise ContractViolation(f"{self.kind.value} detail must have keys {_DETAIL_KEYS[self.kind]}")

    @staticmethod
    def collision(timestamp: float, links) -> "FeedbackEvent":
        return FeedbackEvent(EventKind.COLLISION, timestamp, {"links": list(links)})

    @staticmethod
    def speed_limit(timestamp: float, position_error: float, orientation_error: float) -> "FeedbackEvent":
        return FeedbackEvent(EventKind.SPEED_LIMIT, timestamp,
                             {"position_error": position_error, "orientation_error": orientation_error})

    @staticmethod
    def visibility_loss(timestamp: float, visible_fraction: float) -> "FeedbackEvent":
        return FeedbackEvent(EventKind.VISIBILITY_LOSS, timestamp, {"visible_fraction": visible_fraction})


class DisplayColor(enum.Enum):
    RED = "red"        # normal recording
    YELLOW = "yellow"  # speed limit / tracking lag
    BLUE = "blue"      # collision


@dataclass(frozen=True)
class FeedbackDisplay:
    color: DisplayColor = DisplayColor.RED
    blinking: bool = False
    haptic: bool = False


def display_for_tick(collision: bool, speed_warning: bool) -> FeedbackDisplay:
    """Frame color by priority blue > yellow > red; haptic rides with collision."""
    if collision:
        return FeedbackDisplay(DisplayColor.BLUE, blinking=True, haptic=True)
    if speed_warning:
        return FeedbackDisplay(DisplayColor.YELLOW, blinking=False, haptic=False)
    return FeedbackDisplay(DisplayColor.RED, blinking=False, haptic=False)
