"""Kinematic models, forward kinematics, and damped-least-squares IK.

Models are revolute trees loaded from YAML data files (see ``docs/MODELS.md``
for the schema). The solver is plain damped least squares on the 6-D frame
error with an optional null-space pull toward a rest posture; joint limits
are enforced by clamping every iterate, which keeps results deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import ContractViolation
from .geometry import Pose, matrix_to_quat, quat_to_rotvec

MODEL_SCHEMA = 1

# Orientation rows of the Jacobian and error vector are down-weighted
# relative to position so a near-unreachable orientation cannot starve
# position tracking.
ORI_WEIGHT = 0.5

DEX_HAND = "dex_hand"
PARALLEL_GRIPPER = "parallel_gripper"
EMBODIMENTS = (DEX_HAND, PARALLEL_GRIPPER)


@dataclass(frozen=True)
class Joint:
    name: str
    parent: str
    child: str
    origin: Pose
    axis: np.ndarray
    lo: float
    hi: float
    velocity_limit: float


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float


@dataclass(frozen=True)
class Link:
    name: str
    spheres: tuple[Sphere, ...] = ()


@dataclass
class IkParams:
    damping: float = 0.05
    max_iterations: int = 50
    position_tolerance: float = 1e-4
    orientation_tolerance: float = 1e-3
    null_space_gain: float = 0.1
    rest_posture: np.ndarray | None = None

    def __post_init__(self):
        if self.damping <= 0:
            raise ContractViolation("damping must be > 0")
        if self.position_tolerance <= 0 or self.orientation_tolerance <= 0:
            raise ContractViolation("tolerances must be > 0")
        if not 0.0 <= self.null_space_gain < 1.0:
            raise ContractViolation("null-space gain must be in [0, 1)")
        if self.rest_posture is not None:
            self.rest_posture = np.asarray(self.rest_posture, dtype=np.float64)

    def with_rest(self, rest: np.ndarray) -> "IkParams":
        return replace(self, rest_posture=np.asarray(rest, dtype=np.float64))


@dataclass(frozen=True)
class IkResult:
    q: np.ndarray
    position_residual: float
    orientation_residual: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class FingertipIkResult:
    q: np.ndarray
    residuals: dict[str, float]
    converged: bool


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


_EYE3 = np.eye(3)


class _ChainData:
    """Per-frame precomputed arrays so the IK inner loop stays cheap."""

    __slots__ = ("joint_idx", "origin_pos", "origin_rot", "axis_world0", "pos_axis",
                 "K", "K2", "frame_off_pos", "frame_off_rot")

    def __init__(self, model: "RobotModel", frame: str):
        link_idx, offset = model.frames[frame]
        chain = model.link_chains[link_idx]
        self.joint_idx = np.array(chain, dtype=np.intp)
        n = len(chain)
        self.origin_pos = np.empty((n, 3))
        self.origin_rot = np.empty((n, 3, 3))
        self.axis_world0 = np.empty((n, 3))  # joint axis after the fixed origin rotation
        self.K = np.empty((n, 3, 3))
        self.K2 = np.empty((n, 3, 3))
        for i, j in enumerate(chain):
            joint = model.joints[j]
            self.origin_pos[i] = joint.origin.position
            R0 = joint.origin.rotation_matrix()
            self.origin_rot[i] = R0
            self.axis_world0[i] = R0 @ joint.axis
            K = _skew(joint.axis)
            self.K[i] = K
            self.K2[i] = K @ K
        # offset and axis side by side: both transform with one matmul
        self.pos_axis = np.stack([self.origin_pos, self.axis_world0], axis=2)
        self.frame_off_pos = offset.position
        self.frame_off_rot = offset.rotation_matrix()

    def fk(self, q_chain: np.ndarray):
        """Frame pose plus per-joint world axes and pivot points.

        Returns (p_frame, R_frame, pivots (n,3), axes (n,3)).
        """
        s = np.sin(q_chain)
        c = 1.0 - np.cos(q_chain)
        # Rotation about the local axis folded together with the fixed origin
        # rotation: Rq[i] = origin_rot[i] @ (I + sin*K + (1-cos)*K^2).
        Rq = self.origin_rot @ (_EYE3 + s[:, None, None] * self.K + c[:, None, None] * self.K2)
        n = len(q_chain)
        pivots = np.empty((n, 3))
        axes = np.empty((n, 3))
        R = _EYE3
        p = np.zeros(3)
        for i in range(n):
            # one matmul transforms both the link offset and the joint axis
            m = R @ self.pos_axis[i]
            p = p + m[:, 0]
            axes[i] = m[:, 1]
            pivots[i] = p
            R = R @ Rq[i]
        return p + R @ self.frame_off_pos, R @ self.frame_off_rot, pivots, axes


@dataclass
class RobotModel:
    """A revolute kinematic tree with collision spheres and named frames."""

    name: str
    embodiment: str
    base_link: str
    joints: list[Joint]
    links: list[Link]
    frames: dict[str, tuple[int, Pose]] = field(default_factory=dict)
    rest_posture: np.ndarray | None = None
    hand_root_link: str | None = None
    gripper_joint: str | None = None

    def __post_init__(self):
        if self.embodiment not in EMBODIMENTS:
            raise ContractViolation(f"unknown embodiment {self.embodiment!r}")
        self.link_index = {ln.name: i for i, ln in enumerate(self.links)}
        if self.base_link not in self.link_index:
            raise ContractViolation(f"base link {self.base_link!r} not defined")
        self._validate_tree()
        self.lo = np.array([j.lo for j in self.joints])
        self.hi = np.array([j.hi for j in self.joints])
        self.velocity_limits = np.array([j.velocity_limit for j in self.joints])
        if np.any(self.lo >= self.hi):
            raise ContractViolation("every joint needs lo < hi")
        if np.any(self.velocity_limits <= 0):
            raise ContractViolation("velocity limits must be > 0")
        for link in self.links:
            for s in link.spheres:
                if s.radius <= 0:
                    raise ContractViolation(f"sphere radius must be > 0 on link {link.name}")
        # Chain of joint indices from the base to each link.
        child_of = {j.child: i for i, j in enumerate(self.joints)}
        self.link_chains: list[tuple[int, ...]] = []
        for link in self.links:
            chain: list[int] = []
            cur = link.name
            while cur != self.base_link:
                ji = child_of[cur]
                chain.append(ji)
                cur = self.joints[ji].parent
            self.link_chains.append(tuple(reversed(chain)))
        if self.rest_posture is None:
            self.rest_posture = np.clip(np.zeros(self.dof), self.lo, self.hi)
        else:
            self.rest_posture = np.asarray(self.rest_posture, dtype=np.float64)
            if self.rest_posture.shape != (self.dof,):
                raise ContractViolation("rest_posture length must equal DOF count")
        # Flattened sphere arrays for collision checks.
        sl, sc, sr = [], [], []
        for li, link in enumerate(self.links):
            for s in link.spheres:
                sl.append(li)
                sc.append(s.center)
                sr.append(s.radius)
        self.sphere_link = np.array(sl, dtype=np.intp)
        self.sphere_centers = np.array(sc, dtype=np.float64).reshape(-1, 3)
        self.sphere_radii = np.array(sr, dtype=np.float64)
        self._chain_cache: dict[str, _ChainData] = {}
        # Per-joint arrays for whole-tree FK.
        self._parent_link = np.array([self.link_index[j.parent] for j in self.joints], dtype=np.intp)
        self._child_link = np.array([self.link_index[j.child] for j in self.joints], dtype=np.intp)
        self._origin_pos = np.array([j.origin.position for j in self.joints]).reshape(-1, 3)
        self._origin_rot = np.array([j.origin.rotation_matrix() for j in self.joints]).reshape(-1, 3, 3)
        self._K = np.array([_skew(j.axis) for j in self.joints]).reshape(-1, 3, 3)
        self._K2 = np.array([_skew(j.axis) @ _skew(j.axis) for j in self.joints]).reshape(-1, 3, 3)

    def _validate_tree(self):
        known = {self.base_link}
        for j in self.joints:
            if j.parent not in known:
                raise ContractViolation(f"joint {j.name!r}: parent link {j.parent!r} not reachable from base")
            if j.child in known:
                raise ContractViolation(f"joint {j.name!r}: child link {j.child!r} already attached (not a tree)")
            if j.child not in self.link_index:
                raise ContractViolation(f"joint {j.name!r}: child link {j.child!r} not defined")
            known.add(j.child)
        if len(known) != len(self.links):
            orphans = set(self.link_index) - known
            raise ContractViolation(f"links not connected to the base: {sorted(orphans)}")

    @property
    def dof(self) -> int:
        return len(self.joints)

    def check_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dof,):
            raise ContractViolation(f"expected {self.dof} joint angles, got shape {q.shape}")
        return q

    def clamp_limits(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.lo, self.hi)

    def frame_link(self, frame: str) -> int:
        if frame not in self.frames:
            raise ContractViolation(f"unknown frame {frame!r}")
        return self.frames[frame][0]

    def chain_data(self, frame: str) -> _ChainData:
        data = self._chain_cache.get(frame)
        if data is None:
            if frame not in self.frames:
                raise ContractViolation(f"unknown frame {frame!r}")
            data = _ChainData(self, frame)
            self._chain_cache[frame] = data
        return data

    def wrist_frame(self) -> str:
        for name in ("wrist", "ee"):
            if name in self.frames:
                return name
        raise ContractViolation("model defines neither 'wrist' nor 'ee' frame")

    def fingertip_frames(self) -> list[str]:
        return [f for f in self.frames if f.endswith("_tip")]

    def finger_chain(self, frame: str) -> tuple[int, ...]:
        """Joint indices of the finger sub-chain below hand_root_link."""
        root = self.hand_root_link or self.base_link
        root_chain = set(self.link_chains[self.link_index[root]])
        return tuple(j for j in self.link_chains[self.frame_link(frame)] if j not in root_chain)

    def link_poses(self, q) -> tuple[np.ndarray, np.ndarray]:
        """World rotation (L,3,3) and position (L,3) of every link for config q."""
        q = self.check_q(q)
        s = np.sin(q)
        c = 1.0 - np.cos(q)
        Rq = self._origin_rot @ (np.eye(3) + s[:, None, None] * self._K + c[:, None, None] * self._K2)
        L = len(self.links)
        R = np.empty((L, 3, 3))
        p = np.empty((L, 3))
        bi = self.link_index[self.base_link]
        R[bi] = np.eye(3)
        p[bi] = 0.0
        for j in range(self.dof):
            pi, ci = self._parent_link[j], self._child_link[j]
            p[ci] = p[pi] + R[pi] @ self._origin_pos[j]
            R[ci] = R[pi] @ Rq[j]
        return R, p

    def sphere_world_centers(self, q, base: Pose | None = None) -> np.ndarray:
        """(S,3) world centers of all collision spheres at config q."""
        R, p = self.link_poses(q)
        centers = p[self.sphere_link] + np.einsum("nij,nj->ni", R[self.sphere_link], self.sphere_centers)
        if base is not None:
            centers = base.transform_points(centers)
        return centers


def forward_kinematics(model: RobotModel, q) -> dict[str, Pose]:
    """Pose of every named frame, expressed in the model base frame."""
    q = model.check_q(q)
    R, p = model.link_poses(q)
    out: dict[str, Pose] = {}
    for name, (li, offset) in model.frames.items():
        pos = p[li] + R[li] @ offset.position
        rot = R[li] @ offset.rotation_matrix()
        out[name] = Pose(pos, matrix_to_quat(rot))
    return out


def frame_pose(model: RobotModel, q, frame: str) -> Pose:
    data = model.chain_data(frame)
    p, R, _, _ = data.fk(model.check_q(q)[data.joint_idx])
    return Pose(p, matrix_to_quat(R))


def frame_jacobian(model: RobotModel, q, frame: str) -> np.ndarray:
    """Analytic 6 x dof Jacobian of a frame (position rows first, then rotation)."""
    q = model.check_q(q)
    data = model.chain_data(frame)
    p_f, _, pivots, axes = data.fk(q[data.joint_idx])
    J = np.zeros((6, model.dof))
    J[:3, data.joint_idx] = _cross_rows(axes, p_f - pivots).T
    J[3:, data.joint_idx] = axes.T
    return J


def _ori_error(R_target: np.ndarray, R_current: np.ndarray) -> np.ndarray:
    """Rotation vector of R_target @ R_current^T (world-frame error)."""
    R = R_target @ R_current.T
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    cos_t = 0.5 * (tr - 1.0)
    if cos_t > 0.999999:
        # small angle: the skew part already approximates the rotation vector
        return np.array([0.5 * (R[2, 1] - R[1, 2]), 0.5 * (R[0, 2] - R[2, 0]), 0.5 * (R[1, 0] - R[0, 1])])
    if cos_t < -0.99999:
        # near pi: fall back to the quaternion path, stable at the branch point
        return quat_to_rotvec(matrix_to_quat(R))
    theta = np.arccos(cos_t)
    k = 0.5 * theta / np.sin(theta)
    return np.array([k * (R[2, 1] - R[1, 2]), k * (R[0, 2] - R[2, 0]), k * (R[1, 0] - R[0, 1])])


# The damping actually applied is error-proportional, lambda * min(1, ||e||):
# full damping while the error is large, Newton-like steps near the solution
# so tight tolerances are reached within the iteration budget.
def _dls_step(J: np.ndarray, err: np.ndarray, damping: float) -> np.ndarray:
    lam = max(damping * min(1.0, float(np.sqrt(err @ err))), 1e-9)
    A = J.T @ J
    A.ravel()[:: A.shape[0] + 1] += lam
    return np.linalg.solve(A, J.T @ err)


# Null-space pull toward the rest posture, capped at the task step's norm so
# the regulation decays together with the task error instead of re-injecting
# second-order error forever (the fingertip solver's settle phase then walks
# the manifold explicitly once the task has converged).
def _null_space_step(J: np.ndarray, gain: float, rest: np.ndarray, q: np.ndarray,
                     task_step: np.ndarray) -> np.ndarray:
    null = _null_pull(J, gain, rest - q)
    n_task = float(np.sqrt(task_step @ task_step))
    n_null = float(np.sqrt(null @ null))
    if n_null > n_task:
        null = null * (n_task / max(n_null, 1e-12))
    return null


def _cross_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cross product without np.cross's axis-juggling overhead."""
    out = np.empty_like(a)
    out[:, 0] = a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1]
    out[:, 1] = a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2]
    out[:, 2] = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return out


_MAX_STEP = 0.5        # rad, per-joint trust region
_NO_PROGRESS_ITERS = 10  # bail out early when the best residual stops improving
_SETTLE_ITERS = 20     # post-convergence null-space settle budget


def _null_pull(J: np.ndarray, gain: float, pull: np.ndarray) -> np.ndarray:
    JJT = J @ J.T
    JJT.ravel()[:: JJT.shape[0] + 1] += 1e-12
    return gain * (pull - J.T @ np.linalg.solve(JJT, J @ pull))


def solve_frame_ik(model: RobotModel, frame: str, target: Pose, q_init, params: IkParams) -> IkResult:
    """Damped-least-squares solve driving `frame` onto `target` (base frame).

    Only the joints on the chain to the frame move. After each task step the
    rest posture is pulled in through the Jacobian null space; every iterate
    is clamped to joint limits. Unreachable targets return the best iterate
    found with converged=False rather than raising.
    """
    q = model.check_q(q_init).copy()
    if np.any(q < model.lo - 1e-9) or np.any(q > model.hi + 1e-9):
        raise ContractViolation("q_init violates joint limits")
    data = model.chain_data(frame)
    ci = data.joint_idx
    if len(ci) == 0:
        p, Rf, _, _ = data.fk(q[ci])
        dp, dr = Pose(p, matrix_to_quat(Rf)).distance_to(target)
        ok = dp <= params.position_tolerance and dr <= params.orientation_tolerance
        return IkResult(q, dp, dr, ok, 0)
    rest = (params.rest_posture if params.rest_posture is not None else model.rest_posture)[ci]
    lo, hi = model.lo[ci], model.hi[ci]
    target_p = target.position
    target_R = target.rotation_matrix()
    qc = q[ci].copy()
    best_q, best_err = qc.copy(), np.inf
    best_res = (np.inf, np.inf)
    best_iter = 0
    converged = False
    iters = 0
    err = np.empty(6)
    for iters in range(1, params.max_iterations + 1):
        p_f, R_f, pivots, axes = data.fk(qc)
        e_pos = target_p - p_f
        e_ori = _ori_error(target_R, R_f)
        pos_res = float(np.sqrt(e_pos @ e_pos))
        ori_res = float(np.sqrt(e_ori @ e_ori))
        score = pos_res + ori_res
        if score < best_err * (1.0 - 1e-3):
            best_err, best_q, best_res, best_iter = score, qc.copy(), (pos_res, ori_res), iters
        if pos_res <= params.position_tolerance and ori_res <= params.orientation_tolerance:
            converged = True
            break
        if iters - best_iter >= _NO_PROGRESS_ITERS:
            break
        J = np.empty((6, len(ci)))
        J[:3] = _cross_rows(axes, p_f - pivots).T
        J[3:] = axes.T * ORI_WEIGHT
        err[:3] = e_pos
        err[3:] = e_ori * ORI_WEIGHT
        dq = _dls_step(J, err, params.damping)
        if params.null_space_gain > 0.0:
            dq = dq + _null_space_step(J, params.null_space_gain, rest, qc, dq)
        mx = float(np.max(np.abs(dq)))
        if mx > _MAX_STEP:
            dq = dq * (_MAX_STEP / mx)
        qn = np.clip(qc + dq, lo, hi)
        if float(np.max(np.abs(qn - qc))) < 1e-13:
            qc = qn
            break
        qc = qn
    if converged:
        q[ci] = qc
        return IkResult(q, pos_res, ori_res, True, iters)
    q[ci] = best_q
    return IkResult(q, best_res[0], best_res[1], False, iters)


def solve_fingertip_ik(model: RobotModel, tip_targets: dict[str, np.ndarray], q_init, params: IkParams) -> FingertipIkResult:
    """Position-only IK for each fingertip's serial sub-chain.

    Targets are 3-vectors in the model base frame. Each finger is solved
    independently over its own joints (everything above the hand root stays
    fixed), with the redundant DOF consumed by the rest-posture pull.
    """
    if model.embodiment != DEX_HAND:
        raise ContractViolation("fingertip IK requires a dex_hand model")
    q = model.check_q(q_init).copy()
    tips = model.fingertip_frames()
    for frame in tip_targets:
        if frame not in tips:
            raise ContractViolation(f"{frame!r} is not a fingertip frame")
    rest_full = params.rest_posture if params.rest_posture is not None else model.rest_posture
    residuals: dict[str, float] = {}
    all_ok = True
    for frame in sorted(tip_targets):
        target = np.asarray(tip_targets[frame], dtype=np.float64).reshape(3)
        data = model.chain_data(frame)
        ci = data.joint_idx
        finger = np.array([i for i, j in enumerate(ci) if j in set(model.finger_chain(frame))], dtype=np.intp)
        qc = q[ci].copy()
        lo, hi = model.lo[ci], model.hi[ci]
        rest = rest_full[ci]
        best_q, best_res = qc.copy(), np.inf
        best_iter = 0
        ok = False
        conv_res = np.inf
        for it in range(1, params.max_iterations + 1):
            p_f, _, pivots, axes = data.fk(qc)
            e = target - p_f
            res = float(np.sqrt(e @ e))
            if res < best_res * (1.0 - 1e-3):
                best_res, best_q, best_iter = res, qc.copy(), it
            if res <= params.position_tolerance:
                ok = True
                conv_res = res
                break
            if it - best_iter >= _NO_PROGRESS_ITERS:
                break
            J = _cross_rows(axes[finger], p_f - pivots[finger]).T  # 3 x n_finger
            dq = _dls_step(J, e, params.damping)
            if params.null_space_gain > 0.0:
                dq = dq + _null_space_step(J, params.null_space_gain, rest[finger], qc[finger], dq)
            mx = float(np.max(np.abs(dq)))
            if mx > _MAX_STEP:
                dq = dq * (_MAX_STEP / mx)
            qf = np.clip(qc[finger] + dq, lo[finger], hi[finger])
            stalled = float(np.max(np.abs(qf - qc[finger]))) < 1e-13
            qc[finger] = qf
            if stalled:
                break
        if ok and params.null_space_gain > 0.0:
            # Settle along the self-motion manifold: alternate an uncapped
            # rest-pull with a task-correcting step, keeping the within-
            # tolerance iterate closest to the rest posture.
            rest_f = rest[finger]
            best_valid = qc[finger].copy()
            best_dist = float(np.sqrt((best_valid - rest_f) @ (best_valid - rest_f)))
            stale = 0
            for _ in range(_SETTLE_ITERS):
                p_f, _, pivots, axes = data.fk(qc)
                e = target - p_f
                res = float(np.sqrt(e @ e))
                qf = qc[finger]
                dist = float(np.sqrt((qf - rest_f) @ (qf - rest_f)))
                if res <= params.position_tolerance and dist < best_dist - 1e-6:
                    best_valid, best_dist = qf.copy(), dist
                    stale = 0
                else:
                    stale += 1
                    if stale >= 3:
                        break
                J = _cross_rows(axes[finger], p_f - pivots[finger]).T
                dq = _dls_step(J, e, params.damping) + _null_pull(J, params.null_space_gain, rest_f - qf)
                qn = np.clip(qf + dq, lo[finger], hi[finger])
                if float(np.max(np.abs(qn - qf))) < 1e-12:
                    break
                qc[finger] = qn
            qc[finger] = best_valid
            p_f, _, _, _ = data.fk(qc)
            conv_res = float(np.linalg.norm(target - p_f))
        q[ci] = qc if ok else best_q
        residuals[frame] = conv_res if ok else best_res
        all_ok = all_ok and ok
    return FingertipIkResult(q, residuals, all_ok)


def clamp_joint_step(q_prev, q_target, dt: float, model: RobotModel) -> tuple[np.ndarray, bool]:
    """Advance q_prev toward q_target without exceeding per-joint speed limits."""
    if dt <= 0:
        raise ContractViolation("dt must be > 0")
    q_prev = model.check_q(q_prev)
    q_target = model.check_q(q_target)
    max_step = model.velocity_limits * dt
    delta = q_target - q_prev
    clipped = np.clip(delta, -max_step, max_step)
    lagging = bool(np.any(np.abs(delta) > max_step))
    return model.clamp_limits(q_prev + clipped), lagging


# ---------------------------------------------------------------------------
# Model files


def _pose_from_dict(d: dict | None) -> Pose:
    if not d:
        return Pose.identity()
    pos = d.get("position") or (0, 0, 0)
    ori = d.get("orientation") or (1, 0, 0, 0)
    return Pose(np.asarray(pos, dtype=np.float64), np.asarray(ori, dtype=np.float64))


def _pose_to_dict(p: Pose) -> dict:
    return {"position": [float(x) for x in p.position], "orientation": [float(x) for x in p.orientation]}


def parse_robot_model(doc: dict) -> RobotModel:
    if doc.get("schema") != MODEL_SCHEMA:
        raise ContractViolation(f"unsupported model schema {doc.get('schema')!r}")
    joints = []
    for jd in doc.get("joints", []):
        axis = np.asarray(jd["axis"], dtype=np.float64)
        n = float(np.linalg.norm(axis))
        if n < 1e-9:
            raise ContractViolation(f"joint {jd['name']!r} axis is zero")
        lo, hi = (float(x) for x in jd["limits"])
        joints.append(Joint(jd["name"], jd["parent"], jd["child"], _pose_from_dict(jd.get("origin")),
                            axis / n, lo, hi, float(jd["velocity_limit"])))
    link_names = [doc.get("base_link", "base")]
    for j in joints:
        for name in (j.parent, j.child):
            if name not in link_names:
                link_names.append(name)
    spheres_by_link: dict[str, list[Sphere]] = {}
    for ld in doc.get("links", []):
        spheres_by_link[ld["name"]] = [
            Sphere(np.asarray(sd["center"], dtype=np.float64), float(sd["radius"]))
            for sd in ld.get("spheres", [])
        ]
        if ld["name"] not in link_names:
            link_names.append(ld["name"])
    links = [Link(name, tuple(spheres_by_link.get(name, ()))) for name in link_names]
    model = RobotModel(
        name=doc.get("name", "unnamed"),
        embodiment=doc["embodiment"],
        base_link=doc.get("base_link", "base"),
        joints=joints,
        links=links,
        rest_posture=np.asarray(doc["rest_posture"], dtype=np.float64) if "rest_posture" in doc else None,
        hand_root_link=doc.get("hand_root_link"),
        gripper_joint=doc.get("gripper_joint"),
    )
    for name, fd in doc.get("frames", {}).items():
        if fd["link"] not in model.link_index:
            raise ContractViolation(f"frame {name!r} references unknown link {fd['link']!r}")
        model.frames[name] = (model.link_index[fd["link"]], _pose_from_dict(fd.get("offset")))
    return model


def robot_model_to_dict(model: RobotModel) -> dict:
    return {
        "schema": MODEL_SCHEMA,
        "name": model.name,
        "embodiment": model.embodiment,
        "base_link": model.base_link,
        "rest_posture": [float(x) for x in model.rest_posture],
        "hand_root_link": model.hand_root_link,
        "gripper_joint": model.gripper_joint,
        "joints": [
            {
                "name": j.name, "parent": j.parent, "child": j.child,
                "origin": _pose_to_dict(j.origin), "axis": [float(x) for x in j.axis],
                "limits": [j.lo, j.hi], "velocity_limit": j.velocity_limit,
            }
            for j in model.joints
        ],
        "links": [
            {"name": ln.name,
             "spheres": [{"center": [float(x) for x in s.center], "radius": s.radius} for s in ln.spheres]}
            for ln in model.links
        ],
        "frames": {
            name: {"link": model.links[li].name, "offset": _pose_to_dict(off)}
            for name, (li, off) in model.frames.items()
        },
    }


def load_robot_model(path: str | Path) -> RobotModel:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_robot_model(yaml.safe_load(fh))


def packaged_model_path(name: str) -> Path:
    return Path(__file__).parent / "models" / f"{name}.yaml"


def load_packaged_model(name: str) -> RobotModel:
    return load_robot_model(packaged_model_path(name))
