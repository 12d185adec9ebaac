"""Onboard autonomy: lidar wall following along greenhouse rows and
marker-indexed "visit pods" missions.

The wall estimate is a total-least-squares line fit over the side-sector
beams, which stays stable when pod boxes interrupt the wall. The controller
is PD-style: a distance term steers toward the target offset, a heading term
damps the approach.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import wrap_angle
from .rover import BaseConfig
from .sensors import LidarScan

NO_WALL = "NO_WALL"
MARKER_NOT_FOUND = "MARKER_NOT_FOUND"


@dataclass
class WallFollowConfig:
    target_distance_m: float = 0.6
    k_p: float = 1.2            # rad/s per meter of distance error
    k_heading: float = 0.8
    cruise_speed_m_s: float = 0.3
    side: str = "right"
    sector_rad: float = math.radians(60.0)  # beam sector centered on the wall side
    min_beams: int = 8


@dataclass
class WallFit:
    distance_m: float
    heading_rel_wall: float  # rover heading relative to the wall direction
    wall_dir_in_rover: float
    n_beams: int


def fit_wall(scan: LidarScan, cfg: WallFollowConfig) -> WallFit | None:
    """TLS line fit over the side sector; None when too few beams hit."""
    center = -math.pi / 2.0 if cfg.side == "right" else math.pi / 2.0
    half = cfg.sector_rad / 2.0
    sel = (np.abs(scan.bearings - center) <= half) & (scan.ranges < scan.max_range_m - 1e-9)
    if int(sel.sum()) < cfg.min_beams:
        return None
    b = scan.bearings[sel]
    r = scan.ranges[sel]
    pts = np.column_stack((r * np.cos(b), r * np.sin(b)))
    centroid = pts.mean(axis=0)
    d = pts - centroid
    cov = d.T @ d
    evals, evecs = np.linalg.eigh(cov)
    direction = evecs[:, int(np.argmax(evals))]
    beta = math.atan2(direction[1], direction[0])
    # canonical wall direction: pointing "forward" in the rover frame
    if beta > math.pi / 2.0:
        beta -= math.pi
    elif beta <= -math.pi / 2.0:
        beta += math.pi
    normal = np.array([-direction[1], direction[0]])
    dist = abs(float(centroid @ normal) / float(np.hypot(*normal)))
    return WallFit(distance_m=dist, heading_rel_wall=-beta, wall_dir_in_rover=beta,
                   n_beams=int(sel.sum()))


@dataclass
class WallFollowResult:
    v_left: float
    v_right: float
    fault: str | None = None
    fit: WallFit | None = None


def wall_follow_step(scan: LidarScan, cfg: WallFollowConfig, base_cfg: BaseConfig) -> WallFollowResult:
    """One control step: wheel speeds from the current scan, or a NO_WALL
    fault with zero velocities when the wall cannot be estimated."""
    fit = fit_wall(scan, cfg)
    if fit is None:
        return WallFollowResult(0.0, 0.0, fault=NO_WALL)
    side_sign = 1.0 if cfg.side == "right" else -1.0
    omega = (cfg.k_p * (cfg.target_distance_m - fit.distance_m) * side_sign
             - cfg.k_heading * fit.heading_rel_wall)
    v = cfg.cruise_speed_m_s
    half = omega * base_cfg.track_width_m / 2.0
    lim = base_cfg.wheel_speed_limit
    vl = max(-lim, min(lim, v - half))
    vr = max(-lim, min(lim, v + half))
    return WallFollowResult(vl, vr, fit=fit)


class MissionMode(str, Enum):
    IDLE = "idle"
    FOLLOWING_WALL = "following_wall"
    STOPPED_AT_POD = "stopped_at_pod"
    FAULT = "fault"


@dataclass
class MissionState:
    mode: MissionMode = MissionMode.IDLE
    targets: list = field(default_factory=list)   # ordered marker ids
    visited: list = field(default_factory=list)
    current_index: int = 0
    stopped_marker: int | None = None
    fault_reason: str | None = None
    traveled_since_marker_m: float = 0.0


class MissionController:
    """Sequential pod-visiting state machine, advanced once per engine tick.

    Wall-follows toward the next target marker and stops when its beacon
    reads closer than `stop_range` at a bearing within `stop_bearing_tol` of
    perpendicular; then waits for a resume command.
    """

    def __init__(self, follow_cfg: WallFollowConfig | None = None,
                 stop_range_m: float = 0.8,
                 stop_bearing_tol_rad: float = math.radians(30.0),
                 max_travel_per_marker_m: float = 40.0):
        self.follow_cfg = follow_cfg or WallFollowConfig()
        self.stop_range_m = stop_range_m
        self.stop_bearing_tol_rad = stop_bearing_tol_rad
        self.max_travel_per_marker_m = max_travel_per_marker_m
        self.state = MissionState()
        self.events: list[dict] = []

    @property
    def active(self) -> bool:
        return self.state.mode in (MissionMode.FOLLOWING_WALL, MissionMode.STOPPED_AT_POD)

    def _emit(self, event: str, **extra) -> None:
        self.events.append({"event": event, **extra})

    def drain_events(self) -> list[dict]:
        out, self.events = self.events, []
        return out

    def start(self, markers: list[int], known_markers: set[int],
              wall_side: str | None = None) -> bool:
        self.state = MissionState(targets=list(markers))
        if wall_side in ("left", "right"):
            self.follow_cfg.side = wall_side
        missing = [m for m in markers if m not in known_markers]
        if missing:
            self.state.mode = MissionMode.FAULT
            self.state.fault_reason = MARKER_NOT_FOUND
            self._emit("fault", reason=MARKER_NOT_FOUND, markers=missing)
            return False
        if not markers:
            self.state.mode = MissionMode.IDLE
            self._emit("completed", visited=[])
            return True
        self.state.mode = MissionMode.FOLLOWING_WALL
        self._emit("started", targets=list(markers))
        return True

    def resume(self) -> bool:
        if self.state.mode != MissionMode.STOPPED_AT_POD:
            return False
        self.state.stopped_marker = None
        if self.state.current_index >= len(self.state.targets):
            self.state.mode = MissionMode.IDLE
            self._emit("completed", visited=list(self.state.visited))
        else:
            self.state.mode = MissionMode.FOLLOWING_WALL
            self._emit("resumed", next_marker=self.state.targets[self.state.current_index])
        return True

    def abort(self, reason: str = "aborted") -> None:
        if self.state.mode != MissionMode.IDLE or self.state.targets:
            self._emit("aborted", reason=reason)
        self.state = MissionState()

    def step(self, scan: LidarScan, base_cfg: BaseConfig,
             distance_moved_m: float) -> tuple[float, float] | None:
        """Returns wheel speeds while driving, (0,0) when holding at a pod or
        faulted, None when idle."""
        st = self.state
        if st.mode == MissionMode.IDLE:
            return None
        if st.mode in (MissionMode.STOPPED_AT_POD, MissionMode.FAULT):
            return (0.0, 0.0)

        st.traveled_since_marker_m += distance_moved_m
        target = st.targets[st.current_index]
        for marker_id, bearing, rng in scan.marker_hits:
            if marker_id != target:
                continue
            off_perp = min(abs(wrap_angle(bearing - math.pi / 2.0)),
                           abs(wrap_angle(bearing + math.pi / 2.0)))
            if rng < self.stop_range_m and off_perp <= self.stop_bearing_tol_rad:
                st.visited.append(marker_id)
                st.current_index += 1
                st.stopped_marker = marker_id
                st.mode = MissionMode.STOPPED_AT_POD
                st.traveled_since_marker_m = 0.0
                self._emit("pod_reached", marker_id=marker_id, range_m=round(rng, 4))
                return (0.0, 0.0)

        if st.traveled_since_marker_m > self.max_travel_per_marker_m:
            st.mode = MissionMode.FAULT
            st.fault_reason = MARKER_NOT_FOUND
            self._emit("fault", reason=MARKER_NOT_FOUND, markers=[target])
            return (0.0, 0.0)

        res = wall_follow_step(scan, self.follow_cfg, base_cfg)
        if res.fault:
            st.mode = MissionMode.FAULT
            st.fault_reason = res.fault
            self._emit("fault", reason=res.fault)
            return (0.0, 0.0)
        return (res.v_left, res.v_right)

    def wall_heading_estimate(self, scan: LidarScan, filtered_theta: float) -> float | None:
        """Rover-heading estimate from the tracked wall, assuming axis-aligned
        greenhouse walls: pick the axis direction that keeps the estimate near
        the current filtered heading."""
        if self.state.mode != MissionMode.FOLLOWING_WALL:
            return None
        fit = fit_wall(scan, self.follow_cfg)
        if fit is None:
            return None
        best = None
        for k in range(4):
            wall_world = k * math.pi / 2.0
            cand = wrap_angle(wall_world - fit.wall_dir_in_rover)
            err = abs(wrap_angle(cand - filtered_theta))
            if best is None or err < best[0]:
                best = (err, cand)
        return best[1]
