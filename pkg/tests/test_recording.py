import hashlib
import json

import numpy as np
import pytest

from arcap.engine import default_config
from arcap.errors import IntegrityError, OrderingError, StateError
from arcap.geometry import Pose, quat_from_axis_angle
from arcap.recording import (
    CHUNK_FRAMES,
    DemoFrame,
    DemoRecorder,
    decode_demo_frame,
    encode_demo_frame,
    export_hdf5,
    fibonacci_sphere,
    postprocess_session,
    read_session,
    render_robot_cloud,
    crop_mask,
)
from arcap.retargeting import GripperCommand
from arcap.scene import CameraModel, ColoredPointCloud, EventKind, visible_mask


def make_demo_frame(t, rng=None, n_points=20, gripper=GripperCommand.OPEN, events=()):
    rng = rng or np.random.default_rng(int(t * 1000) % 2**31)
    cloud = ColoredPointCloud(rng.uniform(-1, 1, (n_points, 3)),
                              rng.integers(0, 255, (n_points, 3)).astype(np.uint8))
    return DemoFrame.create(
        timestamp=t,
        cloud=cloud,
        joint_angles=rng.uniform(-2, 2, 8),
        headset=Pose(rng.uniform(-1, 1, 3), quat_from_axis_angle(rng.normal(size=3), 0.4)),
        base=Pose.identity(),
        gripper_command=gripper,
        events=events,
    )


# ---------------------------------------------------------------------------
# Frame codec


def test_frame_encode_decode_bit_exact():
    rng = np.random.default_rng(50)
    for t in (0.0, 0.5, 123.456):
        frame = make_demo_frame(t, rng, events=(EventKind.COLLISION, EventKind.SPEED_LIMIT))
        data = encode_demo_frame(frame)
        again, consumed = decode_demo_frame(data)
        assert consumed == len(data)
        assert again == frame


def test_frame_decode_truncated():
    frame = make_demo_frame(1.0)
    data = encode_demo_frame(frame)
    with pytest.raises(IntegrityError):
        decode_demo_frame(data[:-3])


def test_empty_cloud_frame():
    frame = DemoFrame.create(0.1, None, np.zeros(8), Pose.identity(), Pose.identity())
    again, _ = decode_demo_frame(encode_demo_frame(frame))
    assert again == frame
    assert len(again.cloud) == 0


# ---------------------------------------------------------------------------
# Recorder lifecycle


def test_append_and_finalize(tmp_path):
    config = default_config("parallel_gripper")
    rec = DemoRecorder(tmp_path / "session-x1", config)
    rec.append(make_demo_frame(0.0))
    assert rec._frame_count == 1
    for k in range(1, 130):
        rec.append(make_demo_frame(k / 60.0))
    rec.finalize()
    session = read_session(tmp_path / "session-x1")
    assert session.status == "finalized"
    assert len(session.frames) == 130
    manifest = json.loads((tmp_path / "session-x1" / "manifest").read_text())
    assert manifest["frame_count"] == 130
    assert [c["frames"] for c in manifest["chunks"]] == [60, 60, 10]


def test_append_out_of_order(tmp_path):
    rec = DemoRecorder(tmp_path / "session-x2", default_config("parallel_gripper"))
    rec.append(make_demo_frame(1.0))
    with pytest.raises(OrderingError):
        rec.append(make_demo_frame(0.5))
    assert rec._frame_count == 1  # session unchanged


def test_append_after_finalize(tmp_path):
    rec = DemoRecorder(tmp_path / "session-x3", default_config("parallel_gripper"))
    rec.append(make_demo_frame(0.0))
    rec.finalize()
    with pytest.raises(StateError):
        rec.append(make_demo_frame(1.0))


def test_discard_leaves_tombstone(tmp_path):
    rec = DemoRecorder(tmp_path / "session-x4", default_config("parallel_gripper"))
    for k in range(80):
        rec.append(make_demo_frame(k / 60.0))
    rec.discard()
    files = sorted(p.name for p in (tmp_path / "session-x4").iterdir())
    assert files == ["manifest"]
    session = read_session(tmp_path / "session-x4")
    assert session.status == "discarded"
    assert session.frames == []
    with pytest.raises(StateError):
        rec.finalize()


def test_double_finalize_errors(tmp_path):
    rec = DemoRecorder(tmp_path / "session-x5", default_config("parallel_gripper"))
    rec.append(make_demo_frame(0.0))
    rec.finalize()
    with pytest.raises(StateError):
        rec.finalize()
    with pytest.raises(StateError):
        rec.discard()


def test_durability_on_chunk_boundary(tmp_path):
    rec = DemoRecorder(tmp_path / "session-x6", default_config("parallel_gripper"))
    for k in range(CHUNK_FRAMES):
        rec.append(make_demo_frame(k / 60.0))
    assert (tmp_path / "session-x6" / "chunk-00000.bin").exists()


def test_round_trip_session_bit_exact(tmp_path):
    config = default_config("parallel_gripper")
    rec = DemoRecorder(tmp_path / "session-x7", config)
    frames = [make_demo_frame(k / 60.0, events=(EventKind.VISIBILITY_LOSS,) if k % 7 == 0 else ())
              for k in range(95)]
    for f in frames:
        rec.append(f)
    rec.finalize()
    session = read_session(tmp_path / "session-x7")
    assert len(session.frames) == len(frames)
    for a, b in zip(frames, session.frames):
        assert a == b


def test_finalized_immutability_checksums(tmp_path):
    rec = DemoRecorder(tmp_path / "session-x8", default_config("parallel_gripper"))
    for k in range(70):
        rec.append(make_demo_frame(k / 60.0))
    rec.finalize()
    paths = sorted((tmp_path / "session-x8").glob("chunk-*.bin"))
    before = [hashlib.sha256(p.read_bytes()).hexdigest() for p in paths]
    with pytest.raises(StateError):
        rec.append(make_demo_frame(100.0))
    with pytest.raises(StateError):
        rec.discard()
    after = [hashlib.sha256(p.read_bytes()).hexdigest() for p in paths]
    assert before == after


def test_corrupt_chunk_names_frame(tmp_path):
    rec = DemoRecorder(tmp_path / "session-x9", default_config("parallel_gripper"))
    for k in range(61):
        rec.append(make_demo_frame(k / 60.0))
    rec.finalize()
    chunk = tmp_path / "session-x9" / "chunk-00001.bin"
    data = bytearray(chunk.read_bytes())
    data[5] ^= 0xFF
    chunk.write_bytes(bytes(data))
    with pytest.raises(IntegrityError) as exc:
        read_session(tmp_path / "session-x9")
    assert "chunk-00001.bin" in str(exc.value)


def test_recorder_refuses_nonempty_dir(tmp_path):
    d = tmp_path / "session-dup"
    d.mkdir()
    (d / "junk").write_text("x")
    with pytest.raises(StateError):
        DemoRecorder(d, default_config("parallel_gripper"))


# ---------------------------------------------------------------------------
# Robot cloud rendering


def test_render_sphere_on_axis_hemisphere():
    from arcap.kinematics import parse_robot_model

    model = parse_robot_model({
        "schema": 1, "name": "ball", "embodiment": "parallel_gripper", "base_link": "base",
        "joints": [{"name": "j", "parent": "base", "child": "l", "axis": [0, 0, 1],
                    "origin": {}, "limits": [-1, 1], "velocity_limit": 1.0}],
        "links": [{"name": "base"}, {"name": "l", "spheres": [{"center": [0, 0, 0], "radius": 0.05}]}],
        "frames": {"ee": {"link": "l"}},
    })
    cam = CameraModel(87, 58, 0.3, 3.0)
    camera_pose = Pose.identity()  # +z forward
    base = Pose(np.array([0.0, 0.0, 1.0]))  # sphere 1 m down the axis
    cloud, links = render_robot_cloud(model, np.zeros(1), base, camera_pose, cam, samples_per_sphere=100)
    # brute-force oracle over the same lattice
    lattice = fibonacci_sphere(100)
    pts = base.position + 0.05 * lattice
    facing = np.einsum("ij,ij->i", lattice, camera_pose.position - pts) > 0
    inside = visible_mask(camera_pose, cam, pts)
    expected = int(np.count_nonzero(facing & inside))
    assert len(cloud) == expected
    assert 40 <= len(cloud) <= 60


def test_render_sphere_behind_camera():
    from arcap.kinematics import parse_robot_model

    model = parse_robot_model({
        "schema": 1, "name": "ball", "embodiment": "parallel_gripper", "base_link": "base",
        "joints": [{"name": "j", "parent": "base", "child": "l", "axis": [0, 0, 1],
                    "origin": {}, "limits": [-1, 1], "velocity_limit": 1.0}],
        "links": [{"name": "base"}, {"name": "l", "spheres": [{"center": [0, 0, 0], "radius": 0.05}]}],
        "frames": {"ee": {"link": "l"}},
    })
    cloud, _ = render_robot_cloud(model, np.zeros(1), Pose(np.array([0, 0, -1.0])),
                                  Pose.identity(), CameraModel(), samples_per_sphere=100)
    assert len(cloud) == 0


def test_render_disjoint_spheres_additive():
    from arcap.kinematics import parse_robot_model

    def one_sphere(center):
        return parse_robot_model({
            "schema": 1, "name": "ball", "embodiment": "parallel_gripper", "base_link": "base",
            "joints": [{"name": "j", "parent": "base", "child": "l", "axis": [0, 0, 1],
                        "origin": {}, "limits": [-1, 1], "velocity_limit": 1.0}],
            "links": [{"name": "base"}, {"name": "l", "spheres": [{"center": list(center), "radius": 0.04}]}],
            "frames": {"ee": {"link": "l"}},
        })

    two = parse_robot_model({
        "schema": 1, "name": "balls", "embodiment": "parallel_gripper", "base_link": "base",
        "joints": [{"name": "j", "parent": "base", "child": "l", "axis": [0, 0, 1],
                    "origin": {}, "limits": [-1, 1], "velocity_limit": 1.0}],
        "links": [{"name": "base"}, {"name": "l", "spheres": [
            {"center": [0.2, 0, 1.0], "radius": 0.04}, {"center": [-0.2, 0, 1.0], "radius": 0.04}]}],
        "frames": {"ee": {"link": "l"}},
    })
    cam = CameraModel()
    kwargs = dict(q=np.zeros(1), base=Pose.identity(), camera_pose=Pose.identity(), cam=cam,
                  samples_per_sphere=64)
    n_two, _ = render_robot_cloud(two, **kwargs)
    n_a, _ = render_robot_cloud(one_sphere([0.2, 0, 1.0]), **kwargs)
    n_b, _ = render_robot_cloud(one_sphere([-0.2, 0, 1.0]), **kwargs)
    assert len(n_two) == len(n_a) + len(n_b)


def test_rendered_points_lie_on_sphere_surfaces(arm_gripper):
    cam = CameraModel()
    camera_pose = Pose(np.array([-0.5, 0.0, 0.8]), quat_from_axis_angle([0, 1, 0], np.deg2rad(60)))
    q = arm_gripper.rest_posture
    cloud, links = render_robot_cloud(arm_gripper, q, Pose.identity(), camera_pose, cam, 50)
    centers = arm_gripper.sphere_world_centers(q)
    radii = arm_gripper.sphere_radii
    for p in cloud.points:
        d = np.abs(np.linalg.norm(p - centers, axis=1) - radii).min()
        assert d < 1e-6


# ---------------------------------------------------------------------------
# Post-processing


def _record_simple_session(tmp_path, name="session-pp", n=10, cloud_in_camera=None):
    config = default_config("parallel_gripper")
    rec = DemoRecorder(tmp_path / name, config)
    headset = Pose(np.array([-0.45, 0.0, 1.0]), quat_from_axis_angle([0, 1, 0], np.deg2rad(115)))
    for k in range(n):
        cloud = cloud_in_camera if cloud_in_camera is not None else ColoredPointCloud(
            np.array([[0.0, 0.0, 1.0]]), np.array([[255, 0, 0]], dtype=np.uint8))
        rec.append(DemoFrame.create(k / 60.0, cloud, config.model.rest_posture,
                                    headset, config.base_pose, GripperCommand.OPEN))
    rec.finalize()
    return read_session(tmp_path / name), config


def test_postprocess_requires_finalized(tmp_path):
    session, _ = _record_simple_session(tmp_path)
    session.status = "recording"
    with pytest.raises(StateError):
        postprocess_session(session)


def test_postprocess_identity_transform_keeps_point(tmp_path):
    # identity headset + identity mount: camera frame == world frame
    config = default_config("parallel_gripper")
    rec = DemoRecorder(tmp_path / "session-ident", config)
    inside = np.array([[0.5, 0.0, 0.3]], dtype=np.float64)
    rec.append(DemoFrame.create(0.0, ColoredPointCloud(inside, np.array([[1, 2, 3]], dtype=np.uint8)),
                                config.model.rest_posture, Pose.identity(), config.base_pose, None))
    rec.finalize()
    processed = postprocess_session(read_session(tmp_path / "session-ident"), samples_per_sphere=4)
    scene_pts = processed[0].points[processed[0].labels == 0]
    assert np.allclose(scene_pts, inside, atol=1e-6)


def test_postprocess_crops_outside_point(tmp_path):
    config = default_config("parallel_gripper")
    rec = DemoRecorder(tmp_path / "session-crop", config)
    outside = np.array([[config.crop_max[0] + 0.001, 0.0, 0.3]])
    rec.append(DemoFrame.create(0.0, ColoredPointCloud(outside, np.array([[1, 2, 3]], dtype=np.uint8)),
                                config.model.rest_posture, Pose.identity(), config.base_pose, None))
    rec.finalize()
    processed = postprocess_session(read_session(tmp_path / "session-crop"), samples_per_sphere=4)
    assert np.count_nonzero(processed[0].labels == 0) == 0


def test_world_camera_world_round_trip():
    rng = np.random.default_rng(51)
    headset = Pose(rng.uniform(-1, 1, 3), quat_from_axis_angle(rng.normal(size=3), 1.1))
    mount = Pose(np.array([0.0, 0.05, 0.02]), quat_from_axis_angle([1, 0, 0], 0.2))
    camera = headset * mount
    pts = rng.uniform(-2, 2, (1000, 3))
    back = camera.transform_points(camera.inverse().transform_points(pts))
    assert np.abs(back - pts).max() < 1e-9


def test_crop_exactness_vs_brute_force():
    rng = np.random.default_rng(52)
    lo, hi = np.array([0.2, -0.4, 0.0]), np.array([0.9, 0.4, 0.6])
    pts = rng.uniform(-0.5, 1.5, (2000, 3))
    mask = crop_mask(pts, lo, hi)
    for i, p in enumerate(pts):
        expected = all(lo[d] <= p[d] <= hi[d] for d in range(3))
        assert mask[i] == expected


def test_postprocess_labels_robot_points_on_spheres(tmp_path):
    session, config = _record_simple_session(tmp_path, "session-robo")
    processed = postprocess_session(session, samples_per_sphere=32)
    model = config.model
    found_robot = False
    for p in processed:
        robot_pts = p.points[p.labels == 1]
        if len(robot_pts) == 0:
            continue
        found_robot = True
        centers = model.sphere_world_centers(p.joint_angles)
        for pt in robot_pts[:50]:
            d = np.abs(np.linalg.norm(pt - centers, axis=1) - model.sphere_radii).min()
            assert d < 1e-6
        assert np.all(crop_mask(robot_pts, config.crop_min, config.crop_max))
    assert found_robot


def test_export_hdf5_layout(tmp_path):
    import h5py

    session, _ = _record_simple_session(tmp_path, "session-h5", n=5)
    processed = postprocess_session(session, samples_per_sphere=8)
    out = tmp_path / "out.h5"
    export_hdf5(session, processed, out)
    with h5py.File(out, "r") as hf:
        assert hf["/obs/joint_angles"].shape == (5, 8)
        assert hf["/poses/headset"].shape == (5, 7)
        assert hf["/poses/robot_base"].shape == (5, 7)
        assert hf["/actions/gripper"].shape == (5,)
        assert set(hf["/obs/point_cloud"].keys()) == {f"{i:06d}" for i in range(5)}
        assert hf["/actions/gripper"][0] == 1  # open
