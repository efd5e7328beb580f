"""arcap: hardware-free AR teleoperation data-collection core.

Retargets streamed human hand motion onto virtual robot embodiments with
real-time collision / speed / visibility feedback, records robot-executable
demonstration sessions, and post-processes them into training-ready data.
"""

from .geometry import Pose
from .kinematics import (
    IkParams,
    RobotModel,
    clamp_joint_step,
    forward_kinematics,
    load_packaged_model,
    load_robot_model,
    solve_fingertip_ik,
    solve_frame_ik,
)
from .retargeting import (
    EmbodimentTarget,
    GripperCommand,
    GripperState,
    HandFrame,
    retarget_dex_hand,
    retarget_parallel_gripper,
)
from .scene import (
    CameraModel,
    ColoredPointCloud,
    DisplayColor,
    EventKind,
    FeedbackDisplay,
    FeedbackEvent,
    VoxelGrid,
    check_collision,
    check_visibility,
    detect_speed_mismatch,
    voxelize,
)
from .engine import (
    EngineConfig,
    EngineOutput,
    EngineState,
    calibrate_extrinsics,
    default_config,
    initial_state,
    place_virtual_robot,
    process_frame,
)
from .recording import DemoFrame, DemoRecorder, DemoSession, postprocess_session, read_session, render_robot_cloud
from .analyze import analyze_session

__version__ = "0.1.0"
