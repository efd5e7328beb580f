import numpy as np
import pytest

from arcap.engine import default_config
from arcap.errors import ContractViolation
from arcap.simulate import (
    SCENARIOS,
    generate_stream,
    obstacle_lattice,
    scenario_scene,
    simulate_to_file,
)


def test_simulate_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    simulate_to_file("reach", 7, a)
    simulate_to_file("reach", 7, b)
    assert a.read_bytes() == b.read_bytes()


def test_different_seeds_differ(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    simulate_to_file("reach", 1, a)
    simulate_to_file("reach", 2, b)
    assert a.read_bytes() != b.read_bytes()


def test_unknown_scenario_usage_error():
    with pytest.raises(ContractViolation):
        generate_stream("wiggle", 0)


def test_timestamps_strictly_increase_at_60hz():
    frames = generate_stream("pick_place", 0, include_clouds=False)
    ts = [f.timestamp for f, _ in frames]
    deltas = np.diff(ts)
    assert np.all(deltas > 0)
    assert np.allclose(deltas, 1 / 60.0, atol=1e-12)


def test_fast_jerk_contains_half_meter_steps():
    frames = generate_stream("fast_jerk", 0, include_clouds=False)
    pos = np.array([f.wrist.position for f, _ in frames])
    steps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    assert steps.max() > 0.45


def test_reach_is_smooth():
    frames = generate_stream("reach", 0, include_clouds=False)
    pos = np.array([f.wrist.position for f, _ in frames])
    steps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    assert steps.max() < 0.01  # < 0.6 m/s at 60 Hz


def test_obstacle_lattice_on_voxel_centers():
    config = default_config("parallel_gripper")
    pts = obstacle_lattice(config)
    res = config.voxel_resolution
    frac = (pts / res) - np.floor(pts / res)
    assert np.allclose(frac, 0.5, atol=1e-9)


def test_scene_includes_obstacle_only_for_sweep():
    base = scenario_scene("reach")
    sweep = scenario_scene("sweep_through_obstacle")
    assert len(sweep) > len(base)


def test_all_scenarios_generate(tmp_path):
    for scenario in SCENARIOS:
        frames = generate_stream(scenario, 0, include_clouds=False)
        assert len(frames) > 60


def test_fast_jerk_triggers_speed_limit_events():
    from arcap.engine import initial_state, process_frame
    from arcap.scene import EventKind, VoxelGrid

    config = default_config("parallel_gripper")
    state = initial_state(config)
    grid = VoxelGrid((0, 0, 0), config.voxel_resolution)
    speed_events = 0
    for frame, _ in generate_stream("fast_jerk", 1, config, include_clouds=False):
        state, out = process_frame(state, frame, config, grid)
        speed_events += sum(e.kind == EventKind.SPEED_LIMIT for e in out.events)
    assert speed_events >= 1


def test_clouds_are_camera_frame_and_nonempty():
    frames = generate_stream("reach", 0, include_clouds=True)
    f, cloud = frames[0]
    assert cloud is not None and len(cloud) > 0
    assert np.all(cloud.points[:, 2] > 0)  # in front of the camera
