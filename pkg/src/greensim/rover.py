"""Rover model: skid-steer base, slip-noised odometry with filter, 6-DOF arm
forward kinematics, joint-space motion planning, and the gripper grasp rule.

The base follows a unicycle model with the yaw rate attenuated by a slip
coefficient (skid-steer turning loses some commanded rotation to wheel slip).
Odometry integrates the same model from noisy wheel speeds; a lightweight
exponential filter fuses it with the commanded kinematics and an optional
wall-heading estimate from the lidar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import wrap_angle

# Classic UR5 standard-DH table, rows of (a_m, alpha_rad, d_m, theta_offset_rad).
UR5_DH = (
    (0.0, math.pi / 2, 0.089159, 0.0),
    (-0.425, 0.0, 0.0, 0.0),
    (-0.39225, 0.0, 0.0, 0.0),
    (0.0, math.pi / 2, 0.10915, 0.0),
    (0.0, -math.pi / 2, 0.09465, 0.0),
    (0.0, 0.0, 0.0823, 0.0),
)

JOINT_NAMES = ("base", "shoulder", "elbow", "wrist1", "wrist2", "wrist3")

# planner rejection reasons
JOINT_LIMIT = "JOINT_LIMIT"
WORKSPACE = "WORKSPACE"
FLOOR = "FLOOR"


@dataclass
class ArmConfig:
    dh: tuple = UR5_DH
    joint_limits: tuple = tuple((-2.0 * math.pi, 2.0 * math.pi) for _ in range(6))
    velocity_limits: tuple = tuple(math.pi for _ in range(6))
    # arm base in the rover frame (no rotation: arm x/y axes == rover x/y)
    mount_xyz: tuple = (0.10, 0.0, 0.50)
    max_reach_m: float = 0.850       # datasheet sphere around the shoulder
    fingertip_offset_m: float = 0.12  # flange -> fingertip midpoint, along tool z
    plan_step_rad: float = math.radians(1.0)
    default_speed_rad_s: float = math.radians(30.0)


@dataclass
class GripperConfig:
    max_aperture_m: float = 0.12
    grasp_radius_m: float = 0.04
    fingertip_radius_m: float = 0.03


@dataclass
class BaseConfig:
    track_width_m: float = 0.50
    wheel_speed_limit: float = 1.0
    slip_coefficient: float = 0.10          # kappa in [0,1): yaw-rate attenuation
    odometry_noise_sigma: float = 0.02      # stddev as a fraction of wheel speed
    filter_alpha: float = 0.3               # EWMA weight on the odometry increment
    wall_heading_gain: float = 0.2          # lidar wall-heading correction gain


@dataclass
class RoverConfig:
    base: BaseConfig = field(default_factory=BaseConfig)
    arm: ArmConfig = field(default_factory=ArmConfig)
    gripper: GripperConfig = field(default_factory=GripperConfig)
    # tomato basket footprint in the rover frame (trolley front)
    basket_rect: tuple = (0.30, -0.25, 0.60, 0.25)  # x0, y0, x1, y1


@dataclass
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


@dataclass
class BaseState:
    pose: Pose2D = field(default_factory=Pose2D)
    v_left: float = 0.0
    v_right: float = 0.0
    raw_odometry: Pose2D = field(default_factory=Pose2D)
    filtered_odometry: Pose2D = field(default_factory=Pose2D)


@dataclass
class ArmState:
    q: np.ndarray = field(default_factory=lambda: np.zeros(6))
    qd: np.ndarray = field(default_factory=lambda: np.zeros(6))


@dataclass
class GripperState:
    aperture_m: float = 0.10
    grasped_tomato: int | None = None


@dataclass
class RoverState:
    base: BaseState = field(default_factory=BaseState)
    arm: ArmState = field(default_factory=ArmState)
    gripper: GripperState = field(default_factory=GripperState)


def _integrate_arc(pose: Pose2D, v: float, omega: float, dt: float) -> Pose2D:
    """Exact pose update for one step of constant (v, omega)."""
    th = pose.theta
    if abs(omega) < 1e-12:
        return Pose2D(pose.x + v * math.cos(th) * dt, pose.y + v * math.sin(th) * dt, th)
    th1 = th + omega * dt
    r = v / omega
    return Pose2D(
        pose.x + r * (math.sin(th1) - math.sin(th)),
        pose.y - r * (math.cos(th1) - math.cos(th)),
        wrap_angle(th1),
    )


def twist_from_wheels(v_left: float, v_right: float, cfg: BaseConfig) -> tuple[float, float]:
    """(v, omega) of the slip-attenuated unicycle model."""
    v = 0.5 * (v_left + v_right)
    omega = (v_right - v_left) / cfg.track_width_m * (1.0 - cfg.slip_coefficient)
    return v, omega


def step_base(state: BaseState, cfg: BaseConfig, dt: float,
              wheel_noise: tuple[float, float] = (0.0, 0.0)) -> tuple[BaseState, Pose2D, Pose2D]:
    """Advance true pose and raw odometry by one step.

    `wheel_noise` is the pre-drawn additive wheel-speed error (m/s) for this
    step; the engine owns the random stream so runs replay bit-exactly.
    Returns (new_state, raw_increment, commanded_increment) with increments as
    world-frame deltas, ready for the odometry filter.
    """
    vl = max(-cfg.wheel_speed_limit, min(cfg.wheel_speed_limit, state.v_left))
    vr = max(-cfg.wheel_speed_limit, min(cfg.wheel_speed_limit, state.v_right))
    v, omega = twist_from_wheels(vl, vr, cfg)
    pose1 = _integrate_arc(state.pose, v, omega, dt)

    vn, on = twist_from_wheels(vl + wheel_noise[0], vr + wheel_noise[1], cfg)
    raw1 = _integrate_arc(state.raw_odometry, vn, on, dt)
    raw_inc = Pose2D(raw1.x - state.raw_odometry.x, raw1.y - state.raw_odometry.y,
                     wrap_angle(raw1.theta - state.raw_odometry.theta))

    cmd1 = _integrate_arc(state.filtered_odometry, v, omega, dt)
    cmd_inc = Pose2D(cmd1.x - state.filtered_odometry.x, cmd1.y - state.filtered_odometry.y,
                     wrap_angle(cmd1.theta - state.filtered_odometry.theta))

    new = replace(state, pose=pose1, raw_odometry=raw1, v_left=vl, v_right=vr)
    return new, raw_inc, cmd_inc


def filter_odometry(filtered: Pose2D, raw_inc: Pose2D, cmd_inc: Pose2D, cfg: BaseConfig,
                    wall_heading_estimate: float | None = None) -> Pose2D:
    """EWMA fusion of the noisy odometry increment with the commanded one.

    alpha=1 passes raw odometry through untouched. When the navigator tracks a
    wall, the heading is additionally pulled toward the lidar wall-normal
    estimate of the rover heading.
    """
    a = cfg.filter_alpha
    x = filtered.x + a * raw_inc.x + (1.0 - a) * cmd_inc.x
    y = filtered.y + a * raw_inc.y + (1.0 - a) * cmd_inc.y
    th = filtered.theta + a * raw_inc.theta + (1.0 - a) * cmd_inc.theta
    if wall_heading_estimate is not None:
        th += cfg.wall_heading_gain * wrap_angle(wall_heading_estimate - th)
    return Pose2D(x, y, wrap_angle(th))


# --- arm forward kinematics -------------------------------------------------

def _dh_matrix(theta: float, a: float, alpha: float, d: float) -> np.ndarray:
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(alpha), math.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def forward_kinematics(q, dh=UR5_DH) -> tuple[np.ndarray, np.ndarray]:
    """Flange pose in the arm base frame: (position (3,), rotation (3,3))."""
    T = np.eye(4)
    for qi, (a, alpha, d, off) in zip(q, dh):
        T = T @ _dh_matrix(float(qi) + off, a, alpha, d)
    return T[:3, 3].copy(), T[:3, :3].copy()


def batch_forward_kinematics(Q: np.ndarray, dh=UR5_DH) -> np.ndarray:
    """Flange positions (N,3) for joint configurations Q (N,6). Vectorized so
    trajectory feasibility checks stay cheap."""
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    T = np.broadcast_to(np.eye(4), (n, 4, 4)).copy()
    for j, (a, alpha, d, off) in enumerate(dh):
        th = Q[:, j] + off
        ct, st = np.cos(th), np.sin(th)
        ca, sa = math.cos(alpha), math.sin(alpha)
        Tj = np.zeros((n, 4, 4))
        Tj[:, 0, 0] = ct
        Tj[:, 0, 1] = -st * ca
        Tj[:, 0, 2] = st * sa
        Tj[:, 0, 3] = a * ct
        Tj[:, 1, 0] = st
        Tj[:, 1, 1] = ct * ca
        Tj[:, 1, 2] = -ct * sa
        Tj[:, 1, 3] = a * st
        Tj[:, 2, 1] = sa
        Tj[:, 2, 2] = ca
        Tj[:, 2, 3] = d
        Tj[:, 3, 3] = 1.0
        T = T @ Tj
    return T[:, :3, 3]


def shoulder_origin(cfg: ArmConfig) -> np.ndarray:
    """Shoulder frame origin in the arm base frame (top of the first link)."""
    return np.array([0.0, 0.0, cfg.dh[0][2]])


def flange_pose_rover(q, cfg: ArmConfig) -> tuple[np.ndarray, np.ndarray]:
    pos, rot = forward_kinematics(q, cfg.dh)
    return pos + np.asarray(cfg.mount_xyz), rot


def fingertip_rover(q, cfg: ArmConfig) -> np.ndarray:
    """Fingertip midpoint in the rover frame (flange + offset along tool z)."""
    pos, rot = forward_kinematics(q, cfg.dh)
    tip = pos + rot[:, 2] * cfg.fingertip_offset_m
    return tip + np.asarray(cfg.mount_xyz)


def fingertip_world(base_pose: Pose2D, q, cfg: ArmConfig) -> np.ndarray:
    tip = fingertip_rover(q, cfg)
    c, s = math.cos(base_pose.theta), math.sin(base_pose.theta)
    return np.array([
        base_pose.x + c * tip[0] - s * tip[1],
        base_pose.y + s * tip[0] + c * tip[1],
        tip[2],
    ])


# --- joint-space planning ---------------------------------------------------

@dataclass
class JointTrajectory:
    waypoints: np.ndarray  # (N, 6)


@dataclass
class Infeasible:
    reason: str            # JOINT_LIMIT | WORKSPACE | FLOOR
    waypoint_index: int
    detail: str = ""


def plan_joint_motion(q_from, q_to, cfg: ArmConfig, workspace_aabb, floor_clearance_m: float,
                      step_rad: float | None = None) -> JointTrajectory | Infeasible:
    """Linear joint-space interpolation with per-waypoint feasibility checks.

    Waypoints are spaced so no joint moves more than `step_rad` between
    consecutive waypoints; the list excludes the (already valid) start and
    includes the goal. Checks run in order JOINT_LIMIT, WORKSPACE, FLOOR per
    waypoint and report the first violation.

    `workspace_aabb` is (x0, y0, z0, x1, y1, z1) in the rover frame; the floor
    plane check applies `floor_clearance_m` to the flange height.
    """
    q_from = np.asarray(q_from, dtype=float)
    q_to = np.asarray(q_to, dtype=float)
    goal_lims = np.asarray(cfg.joint_limits, dtype=float)
    goal_bad = (q_to < goal_lims[:, 0] - 1e-12) | (q_to > goal_lims[:, 1] + 1e-12)
    if goal_bad.any():
        j = int(np.argmax(goal_bad))
        return Infeasible(JOINT_LIMIT, -1, f"goal joint {j} at {q_to[j]:.4f} rad")
    step = cfg.plan_step_rad if step_rad is None else step_rad
    n = max(1, math.ceil(float(np.abs(q_to - q_from).max()) / step))
    fracs = np.arange(1, n + 1, dtype=float)[:, None] / n
    waypoints = q_from[None, :] + fracs * (q_to - q_from)[None, :]

    lims = np.asarray(cfg.joint_limits, dtype=float)
    below = waypoints < lims[None, :, 0] - 1e-12
    above = waypoints > lims[None, :, 1] + 1e-12
    bad = below | above
    ee = batch_forward_kinematics(waypoints, cfg.dh) + np.asarray(cfg.mount_xyz)[None, :]
    x0, y0, z0, x1, y1, z1 = workspace_aabb
    out_box = ((ee[:, 0] < x0) | (ee[:, 0] > x1) |
               (ee[:, 1] < y0) | (ee[:, 1] > y1) |
               (ee[:, 2] < z0) | (ee[:, 2] > z1))
    below_floor = ee[:, 2] < floor_clearance_m

    for i in range(n):
        if bad[i].any():
            j = int(np.argmax(bad[i]))
            return Infeasible(JOINT_LIMIT, i, f"joint {j} at {waypoints[i, j]:.4f} rad")
        if out_box[i]:
            return Infeasible(WORKSPACE, i, f"flange at {np.round(ee[i], 4).tolist()}")
        if below_floor[i]:
            return Infeasible(FLOOR, i, f"flange z {ee[i, 2]:.4f} m")
    return JointTrajectory(waypoints)


def grasp_candidate(tomatoes, fingertip_xyz: np.ndarray, aperture_m: float,
                    grasp_radius_m: float) -> int | None:
    """The tomato the gripper would hold: within grasp radius of the fingertip
    midpoint and wider than the current aperture. Ties break by distance, then
    by id."""
    best = None
    for t in tomatoes:
        if 2.0 * t.radius_m <= aperture_m:
            continue
        d = float(np.linalg.norm(np.asarray(t.center) - fingertip_xyz))
        if d > grasp_radius_m:
            continue
        key = (d, t.tomato_id)
        if best is None or key < best[0]:
            best = (key, t.tomato_id)
    return None if best is None else best[1]
