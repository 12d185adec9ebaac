"""Base kinematics vs the closed-form arc oracle, FK vs the elementary
transform oracle, planner feasibility, odometry filter behavior, grasping."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from greensim.rover import (ArmConfig, BaseConfig, BaseState, GripperConfig, Infeasible,
                            JointTrajectory, Pose2D, UR5_DH, batch_forward_kinematics,
                            filter_odometry, forward_kinematics, grasp_candidate,
                            plan_joint_motion, step_base)

from oracles import arc_pose_oracle, fk_oracle

WORKSPACE = (-1.1, -1.1, 0.0, 1.1, 1.1, 1.9)


class _T:
    def __init__(self, tomato_id, center, radius_m=0.035):
        self.tomato_id = tomato_id
        self.center = np.asarray(center, dtype=float)
        self.radius_m = radius_m


# --- base kinematics ---------------------------------------------------------

def test_equal_wheels_drive_straight():
    cfg = BaseConfig(slip_coefficient=0.0, odometry_noise_sigma=0.0)
    st0 = BaseState(pose=Pose2D(0, 0, 0), v_left=0.5, v_right=0.5)
    st1, _, _ = step_base(st0, cfg, 1.0)
    assert st1.pose.x == pytest.approx(0.5, abs=1e-12)
    assert st1.pose.y == pytest.approx(0.0, abs=1e-12)
    assert st1.pose.theta == pytest.approx(0.0, abs=1e-12)


def test_counter_wheels_rotate_in_place():
    cfg = BaseConfig(slip_coefficient=0.0)
    st0 = BaseState(pose=Pose2D(2, 3, 0.3), v_left=-0.5, v_right=0.5)
    st1, _, _ = step_base(st0, cfg, 0.5)
    assert st1.pose.x == pytest.approx(2.0, abs=1e-12)
    assert st1.pose.y == pytest.approx(3.0, abs=1e-12)
    assert st1.pose.theta != pytest.approx(0.3)


def test_arc_matches_closed_form_oracle():
    cfg = BaseConfig(track_width_m=0.5, slip_coefficient=0.0, odometry_noise_sigma=0.0)
    st0 = BaseState(pose=Pose2D(0, 0, 0), v_left=0.0, v_right=0.5)
    st1, _, _ = step_base(st0, cfg, 1.0)
    v = 0.25
    omega = 0.5 / 0.5
    ox, oy, oth = arc_pose_oracle(0, 0, 0, v, omega, 1.0)
    assert st1.pose.x == pytest.approx(ox, abs=1e-12)
    assert st1.pose.y == pytest.approx(oy, abs=1e-12)
    assert st1.pose.theta == pytest.approx(oth, abs=1e-12)


def test_arc_oracle_randomized():
    rng = np.random.default_rng(7)
    for _ in range(500):
        cfg = BaseConfig(track_width_m=rng.uniform(0.2, 1.0),
                         slip_coefficient=rng.uniform(0.0, 0.9),
                         odometry_noise_sigma=0.0)
        pose = Pose2D(*rng.uniform(-5, 5, 2), rng.uniform(-math.pi, math.pi))
        vl, vr = rng.uniform(-1, 1, 2)
        dt = rng.uniform(0.005, 0.5)
        st1, _, _ = step_base(BaseState(pose=pose, v_left=vl, v_right=vr), cfg, dt)
        v = 0.5 * (vl + vr)
        omega = (vr - vl) / cfg.track_width_m * (1 - cfg.slip_coefficient)
        ox, oy, oth = arc_pose_oracle(pose.x, pose.y, pose.theta, v, omega, dt)
        assert st1.pose.x == pytest.approx(ox, abs=1e-9)
        assert st1.pose.y == pytest.approx(oy, abs=1e-9)
        assert math.cos(st1.pose.theta) == pytest.approx(math.cos(oth), abs=1e-9)
        assert math.sin(st1.pose.theta) == pytest.approx(math.sin(oth), abs=1e-9)


def test_zero_noise_raw_odometry_tracks_truth_exactly():
    cfg = BaseConfig(slip_coefficient=0.2, odometry_noise_sigma=0.0)
    state = BaseState(pose=Pose2D(1, 1, 0.1), raw_odometry=Pose2D(1, 1, 0.1),
                      filtered_odometry=Pose2D(1, 1, 0.1))
    rng = np.random.default_rng(0)
    for _ in range(200):
        state.v_left, state.v_right = rng.uniform(-1, 1, 2)
        state, raw_inc, cmd_inc = step_base(state, cfg, 0.02)
        state.filtered_odometry = filter_odometry(state.filtered_odometry, raw_inc,
                                                  cmd_inc, cfg)
    assert state.raw_odometry.x == pytest.approx(state.pose.x, abs=1e-12)
    assert state.raw_odometry.y == pytest.approx(state.pose.y, abs=1e-12)
    assert state.filtered_odometry.x == pytest.approx(state.pose.x, abs=1e-9)


def test_alpha_one_filter_is_raw_passthrough():
    cfg = BaseConfig(filter_alpha=1.0, odometry_noise_sigma=0.05, slip_coefficient=0.0)
    state = BaseState(v_left=0.5, v_right=0.4)
    rng = np.random.default_rng(3)
    for _ in range(100):
        noise = tuple(rng.normal(0, 0.01, 2))
        state, raw_inc, cmd_inc = step_base(state, cfg, 0.02, noise)
        state.filtered_odometry = filter_odometry(state.filtered_odometry, raw_inc,
                                                  cmd_inc, cfg)
    assert state.filtered_odometry.x == pytest.approx(state.raw_odometry.x, abs=1e-9)
    assert state.filtered_odometry.y == pytest.approx(state.raw_odometry.y, abs=1e-9)


def test_filter_beats_raw_odometry_over_noisy_runs():
    """Monte-Carlo: filtered RMSE strictly below raw RMSE on 20 m straight
    runs across >= 100 seeds."""
    cfg = BaseConfig(slip_coefficient=0.0, odometry_noise_sigma=0.05, filter_alpha=0.3)
    wins = 0
    seeds = 120
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        state = BaseState(v_left=0.5, v_right=0.5)
        raw_err = filt_err = 0.0
        n = 2000  # 20 m at 0.5 m/s, dt 0.02
        for _ in range(n):
            noise = (rng.normal(0, cfg.odometry_noise_sigma * 0.5),
                     rng.normal(0, cfg.odometry_noise_sigma * 0.5))
            state, raw_inc, cmd_inc = step_base(state, cfg, 0.02, noise)
            state.filtered_odometry = filter_odometry(state.filtered_odometry, raw_inc,
                                                      cmd_inc, cfg)
            raw_err += ((state.raw_odometry.x - state.pose.x) ** 2
                        + (state.raw_odometry.y - state.pose.y) ** 2)
            filt_err += ((state.filtered_odometry.x - state.pose.x) ** 2
                         + (state.filtered_odometry.y - state.pose.y) ** 2)
        if math.sqrt(filt_err / n) < math.sqrt(raw_err / n):
            wins += 1
    assert wins >= seeds * 0.95  # filtering must essentially always help


# --- forward kinematics ---------------------------------------------------------

def test_fk_zero_config_matches_dh_offsets():
    pos, _ = forward_kinematics(np.zeros(6))
    expected = fk_oracle(np.zeros(6), UR5_DH)
    assert np.allclose(pos, expected, atol=1e-12)
    # classic UR5 zero-config flange position
    assert pos[0] == pytest.approx(-0.81725, abs=1e-9)
    assert pos[1] == pytest.approx(-(0.10915 + 0.0823), abs=1e-9)


def test_fk_base_rotation_preserves_z():
    q = np.zeros(6)
    z0 = forward_kinematics(q)[0][2]
    q[0] = math.pi
    z1 = forward_kinematics(q)[0][2]
    assert z0 == pytest.approx(z1, abs=1e-12)


def test_fk_matches_oracle_random():
    rng = np.random.default_rng(11)
    Q = rng.uniform(-2 * math.pi, 2 * math.pi, size=(2000, 6))
    batch = batch_forward_kinematics(Q)
    for q, b in zip(Q, batch):
        pos, _ = forward_kinematics(q)
        oracle = fk_oracle(q, UR5_DH)
        assert np.linalg.norm(pos - oracle) < 1e-9
        assert np.linalg.norm(b - oracle) < 1e-9


# --- planner ----------------------------------------------------------------------

def test_plan_identity_is_single_waypoint():
    cfg = ArmConfig()
    q = np.zeros(6)
    traj = plan_joint_motion(q, q, cfg, WORKSPACE, 0.05)
    assert isinstance(traj, JointTrajectory)
    assert traj.waypoints.shape == (1, 6)
    assert np.allclose(traj.waypoints[0], q)


def test_plan_elbow_30_deg_has_30_waypoints():
    cfg = ArmConfig()
    q0 = np.zeros(6)
    q1 = q0.copy()
    q1[2] += math.radians(30.0)
    traj = plan_joint_motion(q0, q1, cfg, WORKSPACE, 0.05)
    assert isinstance(traj, JointTrajectory), getattr(traj, "reason", None)
    assert len(traj.waypoints) == 30
    assert np.allclose(traj.waypoints[-1], q1)


def test_plan_joint_limit_violation():
    cfg = ArmConfig()
    q0 = np.zeros(6)
    q1 = q0.copy()
    q1[1] = 2.0 * math.pi + 0.5
    res = plan_joint_motion(q0, q1, cfg, WORKSPACE, 0.05)
    assert isinstance(res, Infeasible)
    assert res.reason == "JOINT_LIMIT"


def test_plan_floor_violation_reported():
    cfg = ArmConfig()
    q0 = np.zeros(6)
    q1 = q0.copy()
    q1[1] += math.pi  # swing the whole arm under the base
    res = plan_joint_motion(q0, q1, cfg, WORKSPACE, 0.05)
    assert isinstance(res, Infeasible)
    assert res.reason in ("FLOOR", "WORKSPACE")


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_planned_waypoints_respect_limits(seed):
    rng = np.random.default_rng(seed)
    cfg = ArmConfig()
    lims = np.asarray(cfg.joint_limits)
    q0 = rng.uniform(lims[:, 0] / 2, lims[:, 1] / 2)
    q1 = rng.uniform(lims[:, 0] * 1.1, lims[:, 1] * 1.1)
    res = plan_joint_motion(q0, q1, cfg, WORKSPACE, 0.05)
    if isinstance(res, JointTrajectory):
        assert (res.waypoints >= lims[None, :, 0] - 1e-9).all()
        assert (res.waypoints <= lims[None, :, 1] + 1e-9).all()


def test_plan_step_spacing():
    cfg = ArmConfig()
    q0 = np.zeros(6)
    q1 = np.full(6, math.radians(9.5))
    res = plan_joint_motion(q0, q1, cfg, WORKSPACE, 0.05)
    assert isinstance(res, JointTrajectory)
    steps = np.abs(np.diff(np.vstack([q0, res.waypoints]), axis=0))
    assert (steps <= cfg.plan_step_rad + 1e-12).all()


# --- grasping -----------------------------------------------------------------------

def test_grasp_within_radius_and_aperture():
    tip = np.array([0.5, 0.0, 0.5])
    toms = [_T(1, tip + [0.02, 0, 0], radius_m=0.03)]
    assert grasp_candidate(toms, tip, aperture_m=0.03, grasp_radius_m=0.04) == 1


def test_grasp_too_far_returns_none():
    tip = np.array([0.5, 0.0, 0.5])
    toms = [_T(1, tip + [0.10, 0, 0])]
    assert grasp_candidate(toms, tip, 0.03, 0.04) is None


def test_grasp_aperture_wider_than_tomato_returns_none():
    tip = np.array([0.5, 0.0, 0.5])
    toms = [_T(1, tip, radius_m=0.03)]
    assert grasp_candidate(toms, tip, aperture_m=0.08, grasp_radius_m=0.04) is None


def test_grasp_tie_breaks_by_distance_then_id():
    tip = np.zeros(3)
    near = _T(5, [0.01, 0, 0])
    far = _T(1, [0.02, 0, 0])
    assert grasp_candidate([far, near], tip, 0.03, 0.04) == 5
    equal_a = _T(7, [0.015, 0, 0])
    equal_b = _T(2, [-0.015, 0, 0])
    assert grasp_candidate([equal_a, equal_b], tip, 0.03, 0.04) == 2
