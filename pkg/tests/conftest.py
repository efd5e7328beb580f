import numpy as np
import pytest

from arcap.kinematics import load_packaged_model


@pytest.fixture(scope="session")
def planar2():
    return load_packaged_model("planar2")


@pytest.fixture(scope="session")
def arm7():
    return load_packaged_model("arm7")


@pytest.fixture(scope="session")
def dexhand():
    return load_packaged_model("dexhand16")


@pytest.fixture(scope="session")
def arm_gripper():
    return load_packaged_model("arm_gripper")


@pytest.fixture(scope="session")
def arm_dexhand():
    return load_packaged_model("arm_dexhand")


def random_pose(rng: np.random.Generator, span: float = 1.0):
    from arcap.geometry import Pose, quat_from_axis_angle

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Pose(rng.uniform(-span, span, 3), quat_from_axis_angle(axis, rng.uniform(-np.pi, np.pi)))
