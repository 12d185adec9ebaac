"""Lidar and sonar models: ray casting against walls and pod boxes, plus pod
marker beacons visible under line of sight."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import raycast, segment_blocks, wrap_angle
from .rover import Pose2D
from .world import MARKER_VISIBILITY_RANGE_M, WorldState


@dataclass
class LidarConfig:
    fov_rad: float = math.radians(270.0)
    step_rad: float = math.radians(0.5)
    max_range_m: float = 10.0

    def bearings(self) -> np.ndarray:
        n = int(round(self.fov_rad / self.step_rad)) + 1
        return -self.fov_rad / 2.0 + np.arange(n) * self.step_rad


@dataclass
class SonarConfig:
    count: int = 8
    max_range_m: float = 2.0
    min_range_m: float = 0.02

    def bearings(self) -> np.ndarray:
        return np.arange(self.count) * (2.0 * math.pi / self.count)


@dataclass
class LidarScan:
    bearings: np.ndarray            # sensor frame, rad
    ranges: np.ndarray              # (0, max_range]; max_range = no hit
    max_range_m: float
    marker_hits: list = field(default_factory=list)  # (marker_id, bearing, range)


def scan_lidar(world: WorldState, pose: Pose2D, cfg: LidarConfig | None = None) -> LidarScan:
    """Nearest wall/pod-box hit per beam, plus marker beacons in line of sight
    within the beacon range. Beacons are idealized (omnidirectional, id +
    position); a pod never occludes its own marker."""
    cfg = cfg or LidarConfig()
    bearings = cfg.bearings()
    segments = world.obstacle_segments()
    angles = bearings + pose.theta
    ranges = raycast((pose.x, pose.y), angles, segments, cfg.max_range_m)

    hits = []
    origin = np.array([pose.x, pose.y])
    for i, pod in enumerate(world.greenhouse.pods()):
        d = pod.position - origin
        r = float(np.hypot(d[0], d[1]))
        if r > MARKER_VISIBILITY_RANGE_M or r < 1e-9:
            continue
        if segment_blocks(origin, pod.position, segments, skip=world.pod_segment_slice(i)):
            continue
        bearing = wrap_angle(math.atan2(d[1], d[0]) - pose.theta)
        hits.append((pod.marker_id, bearing, r))
    hits.sort(key=lambda h: h[0])
    return LidarScan(bearings=bearings, ranges=ranges, max_range_m=cfg.max_range_m,
                     marker_hits=hits)


def scan_sonar(world: WorldState, pose: Pose2D, cfg: SonarConfig | None = None) -> np.ndarray:
    """Eight clipped range readings at 45 degree increments around the body."""
    cfg = cfg or SonarConfig()
    angles = cfg.bearings() + pose.theta
    ranges = raycast((pose.x, pose.y), angles, world.obstacle_segments(), cfg.max_range_m)
    return np.clip(ranges, cfg.min_range_m, cfg.max_range_m)
