import numpy as np
import pytest

from arcap.errors import ContractViolation, IntegrityError
from arcap.geometry import Pose, quat_from_axis_angle
from arcap.scene import (
    CameraModel,
    ColoredPointCloud,
    DisplayColor,
    FeedbackEvent,
    EventKind,
    VoxelGrid,
    check_collision,
    check_visibility,
    detect_speed_mismatch,
    display_for_tick,
    load_point_cloud,
    save_point_cloud,
    voxelize,
)


# ---------------------------------------------------------------------------
# Voxelization


def test_voxelize_three_points_one_voxel():
    pts = np.array([[0.01, 0.01, 0.01], [0.015, 0.002, 0.019], [0.0, 0.0, 0.0]])
    grid = voxelize(pts, (0, 0, 0), 0.02)
    assert grid.occupied == {(0, 0, 0)}


def test_voxelize_empty_cloud():
    grid = voxelize(ColoredPointCloud(), (0, 0, 0), 0.02)
    assert len(grid) == 0


def test_voxelize_boundary_goes_to_higher_voxel():
    # resolution 0.25 is exactly representable, so the boundary is exact
    grid = voxelize(np.array([[0.25, 0.0, 0.0]]), (0, 0, 0), 0.25)
    assert grid.occupied == {(1, 0, 0)}


def test_voxelize_permutation_and_duplication_invariant():
    rng = np.random.default_rng(31)
    pts = rng.uniform(-1, 1, (200, 3))
    g1 = voxelize(pts, (0, 0, 0), 0.05)
    g2 = voxelize(np.concatenate([pts[::-1], pts[:50]]), (0, 0, 0), 0.05)
    assert g1.occupied == g2.occupied


def test_voxelize_requires_positive_resolution():
    with pytest.raises(ContractViolation):
        voxelize(np.zeros((1, 3)), (0, 0, 0), 0.0)


# ---------------------------------------------------------------------------
# Collision checking


def test_collision_empty_grid(planar2):
    grid = VoxelGrid((0, 0, 0), 0.02)
    assert check_collision(planar2, np.zeros(2), Pose.identity(), grid, 0.01) == []


def test_collision_sphere_near_voxel_center(planar2):
    # planar2 l2 has a sphere of radius 0.05 at its tip (1,0,0) for q=0.
    # Put a point so the voxel center lands ~0.01 m from the sphere center.
    res = 0.02
    center = np.array([1.0 + 0.01, 0.0, 0.0])
    grid = voxelize(np.array([center - 0.001]), (0, 0, 0), res)
    hits = check_collision(planar2, np.zeros(2), Pose.identity(), grid, margin=0.01)
    assert "l2" in hits


def test_collision_boundary_distance_exact():
    # One occupied voxel center; a 1-sphere model placed exactly at the
    # decision boundary +- 1e-6 (scalar-arithmetic oracle for the distance).
    from arcap.kinematics import parse_robot_model

    res = 0.02
    margin = 0.01
    radius = 0.05
    half_diag = res * np.sqrt(3) / 2
    grid = voxelize(np.array([[res / 2, res / 2, res / 2]]), (0, 0, 0), res)
    voxel_center = np.array([res / 2, res / 2, res / 2])

    def model_at(x):
        return parse_robot_model({
            "schema": 1, "name": "probe", "embodiment": "parallel_gripper", "base_link": "base",
            "joints": [{"name": "j", "parent": "base", "child": "l", "axis": [0, 0, 1],
                        "origin": {"position": [x, 0, 0]}, "limits": [-1, 1], "velocity_limit": 1.0}],
            "links": [{"name": "base"}, {"name": "l", "spheres": [{"center": [0, 0, 0], "radius": radius}]}],
            "frames": {"ee": {"link": "l"}},
        })

    threshold = radius + margin + half_diag
    x_out = voxel_center[0] + threshold + 1e-6
    x_in = voxel_center[0] + threshold - 1e-6
    base = Pose(np.array([0.0, voxel_center[1], voxel_center[2]]))
    assert check_collision(model_at(x_out), np.zeros(1), base, grid, margin) == []
    assert check_collision(model_at(x_in), np.zeros(1), base, grid, margin) == ["l"]


def _brute_force_collisions(model, q, base, points, margin):
    centers = model.sphere_world_centers(q, base)
    names = []
    for si in range(len(centers)):
        d = np.linalg.norm(points - centers[si], axis=1) - model.sphere_radii[si]
        if np.any(d <= margin):
            names.append(model.links[model.sphere_link[si]].name)
    return sorted(set(names), key=lambda n: model.link_index[n])


def test_collision_conservative_no_false_negatives(arm7):
    rng = np.random.default_rng(32)
    res, margin = 0.02, 0.01
    diag = res * np.sqrt(3)
    for _ in range(100):
        pts = rng.uniform([-0.3, -0.6, 0.0], [0.9, 0.6, 0.9], (rng.integers(1, 400), 3))
        grid = voxelize(pts, (0, 0, 0), res)
        q = rng.uniform(arm7.lo, arm7.hi)
        oracle = set(_brute_force_collisions(arm7, q, Pose.identity(), pts, margin))
        got = set(check_collision(arm7, q, Pose.identity(), grid, margin))
        assert oracle <= got  # conservative: no false negatives
        # grid-only positives are within the inflation band
        for name in got - oracle:
            li = arm7.link_index[name]
            sel = arm7.sphere_link == li
            centers = arm7.sphere_world_centers(q)[sel]
            radii = arm7.sphere_radii[sel]
            d = (np.linalg.norm(pts[None, :, :] - centers[:, None, :], axis=2) - radii[:, None]).min()
            assert d <= margin + diag + 1e-9


# ---------------------------------------------------------------------------
# Visibility


def _projection_oracle(camera_pose: Pose, cam: CameraModel, pts):
    # independent formulation: 4x4 matrix inverse + angular comparison
    T = np.linalg.inv(camera_pose.to_matrix())
    out = []
    for p in np.atleast_2d(pts):
        v = T @ np.array([p[0], p[1], p[2], 1.0])
        x, y, z = v[:3]
        ok = (z >= cam.near and z <= cam.far
              and abs(np.arctan2(x, z)) <= np.deg2rad(cam.hfov_deg) / 2
              and abs(np.arctan2(y, z)) <= np.deg2rad(cam.vfov_deg) / 2)
        out.append(ok)
    return np.array(out)


def test_visibility_on_axis():
    cam = CameraModel(87, 58, 0.3, 3.0)
    frac, lost = check_visibility(Pose.identity(), cam, [[0, 0, 1.0]])
    assert frac == 1.0 and not lost


def test_visibility_behind_camera():
    cam = CameraModel(87, 58, 0.3, 3.0)
    frac, lost = check_visibility(Pose.identity(), cam, [[0, 0, -1.0]])
    assert frac == 0.0 and lost


def test_visibility_fov_edge():
    # tan(43.5 deg) ~= 0.9490: x=0.948 at z=1 is inside, x=0.950 is out
    cam = CameraModel(87, 58, 0.3, 3.0)
    frac, _ = check_visibility(Pose.identity(), cam, [[0.948, 0, 1.0]])
    assert frac == 1.0
    frac, _ = check_visibility(Pose.identity(), cam, [[0.950, 0, 1.0]])
    assert frac == 0.0


def test_visibility_empty_watch_points():
    with pytest.raises(ContractViolation):
        check_visibility(Pose.identity(), CameraModel(), [])


def test_frustum_matches_projection_oracle():
    rng = np.random.default_rng(33)
    cam = CameraModel(87, 58, 0.3, 3.0)
    pose = Pose(rng.uniform(-1, 1, 3), quat_from_axis_angle(rng.normal(size=3), 0.8))
    pts = rng.uniform(-4, 4, (2000, 3))
    from arcap.scene import visible_mask

    got = visible_mask(pose, cam, pts)
    oracle = _projection_oracle(pose, cam, pts)
    assert np.array_equal(got, oracle)


def test_visibility_fraction_counts():
    cam = CameraModel(87, 58, 0.3, 3.0)
    pts = [[0, 0, 1.0], [0, 0, -1.0], [0, 0, 2.0], [0, 0, 5.0]]
    frac, lost = check_visibility(Pose.identity(), cam, pts, threshold=0.95)
    assert frac == 0.5 and lost


# ---------------------------------------------------------------------------
# Speed mismatch


def test_speed_mismatch_identical_poses():
    assert detect_speed_mismatch(Pose.identity(), Pose.identity(), 0.05, np.deg2rad(15)) is None


def test_speed_mismatch_position():
    a = Pose(np.array([0.1, 0, 0]))
    d = detect_speed_mismatch(a, Pose.identity(), 0.05, np.deg2rad(15))
    assert d is not None and abs(d["position_error"] - 0.1) < 1e-12


def test_speed_mismatch_orientation():
    a = Pose(np.zeros(3), quat_from_axis_angle([0, 0, 1], np.deg2rad(20)))
    d = detect_speed_mismatch(a, Pose.identity(), 0.05, np.deg2rad(15))
    assert d is not None and abs(d["orientation_error"] - np.deg2rad(20)) < 1e-9


def test_speed_mismatch_below_thresholds():
    a = Pose(np.array([0.01, 0, 0]), quat_from_axis_angle([0, 0, 1], np.deg2rad(5)))
    assert detect_speed_mismatch(a, Pose.identity(), 0.05, np.deg2rad(15)) is None


# ---------------------------------------------------------------------------
# Feedback display & events


def test_display_priority_blue_over_yellow():
    d = display_for_tick(collision=True, speed_warning=True)
    assert d.color == DisplayColor.BLUE and d.blinking and d.haptic


def test_display_yellow():
    d = display_for_tick(collision=False, speed_warning=True)
    assert d.color == DisplayColor.YELLOW and not d.haptic


def test_display_red_normal():
    d = display_for_tick(collision=False, speed_warning=False)
    assert d.color == DisplayColor.RED and not d.blinking and not d.haptic


def test_event_detail_variant_enforced():
    with pytest.raises(ContractViolation):
        FeedbackEvent(EventKind.COLLISION, 0.0, {"visible_fraction": 0.5})
    e = FeedbackEvent.speed_limit(1.0, 0.2, 0.1)
    assert e.detail["position_error"] == 0.2


# ---------------------------------------------------------------------------
# Point cloud files


def test_point_cloud_binary_round_trip(tmp_path):
    rng = np.random.default_rng(34)
    cloud = ColoredPointCloud(rng.uniform(-1, 1, (100, 3)).astype(np.float32).astype(np.float64),
                              rng.integers(0, 255, (100, 3)).astype(np.uint8))
    path = tmp_path / "scene.pcd"
    save_point_cloud(path, cloud, binary=True)
    again = load_point_cloud(path)
    assert np.array_equal(cloud.points, again.points)
    assert np.array_equal(cloud.colors, again.colors)


def test_point_cloud_text_round_trip(tmp_path):
    cloud = ColoredPointCloud(np.array([[0.5, -0.25, 1.0]]), np.array([[10, 20, 30]], dtype=np.uint8))
    path = tmp_path / "scene.xyzrgb"
    save_point_cloud(path, cloud, binary=False)
    again = load_point_cloud(path)
    assert np.array_equal(cloud.points, again.points)
    assert np.array_equal(cloud.colors, again.colors)


def test_point_cloud_truncated_binary(tmp_path):
    cloud = ColoredPointCloud(np.zeros((10, 3)), np.zeros((10, 3), dtype=np.uint8))
    path = tmp_path / "scene.pcd"
    save_point_cloud(path, cloud, binary=True)
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(IntegrityError):
        load_point_cloud(path)


def test_point_cloud_bad_text(tmp_path):
    path = tmp_path / "scene.xyzrgb"
    path.write_text("1.0 2.0\n")
    with pytest.raises(IntegrityError):
        load_point_cloud(path)
