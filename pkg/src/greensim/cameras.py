"""Geometric pseudo-perception: pinhole tomato detections and schematic
camera frames. Stands in for the neural perception stack and the RTSP video
feeds; the console renders the vector frames directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import wrap_angle
from .world import CameraSpec, TomatoState, WorldState

DEFAULT_PIXEL_SIGMA = 2.0

# state colors used by the schematic renderer and the console
TOMATO_COLORS = {
    TomatoState.ATTACHED: "#e53935",   # ripe red on the plant
    TomatoState.DETACHED: "#8e24aa",   # held / dropped
    TomatoState.COLLECTED: "#9e9e9e",  # in the basket
}
STATIC_TOMATO_COLOR = "#fb8c00"       # attached but not pluckable


def camera_rotation(spec: CameraSpec) -> np.ndarray:
    """Camera-to-world rotation. Camera frame: x right, y down, z optical axis.

    yaw=0, pitch=0 looks along world +x; positive pitch tilts the axis below
    the horizon.
    """
    cy, sy = math.cos(spec.yaw), math.sin(spec.yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    base = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    cp, sp = math.cos(-spec.pitch), math.sin(-spec.pitch)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    return rz @ base @ rx


def world_to_camera(spec: CameraSpec, points: np.ndarray) -> np.ndarray:
    rot = camera_rotation(spec)
    return (np.atleast_2d(points) - spec.position) @ rot


def vertical_fov(spec: CameraSpec) -> float:
    return 2.0 * math.atan(spec.image_size_px[1] / (2.0 * spec.focal_px))


def in_frustum(spec: CameraSpec, cam_point) -> bool:
    """Angular frustum test in the camera frame, plus the slant-range cap."""
    x, y, z = float(cam_point[0]), float(cam_point[1]), float(cam_point[2])
    if z <= 0.0:
        return False
    if math.sqrt(x * x + y * y + z * z) > spec.max_range_m:
        return False
    if abs(math.atan2(x, z)) > spec.horizontal_fov_rad / 2.0:
        return False
    return abs(math.atan2(y, z)) <= vertical_fov(spec) / 2.0


@dataclass
class Detection:
    tomato_id: int
    cam_point: np.ndarray  # (3,) camera frame
    pixel: np.ndarray      # (2,) u, v with noise applied


def _camera_by_id(world: WorldState, camera_id: int) -> CameraSpec:
    for c in world.greenhouse.cameras:
        if c.camera_id == camera_id:
            return c
    raise KeyError(f"unknown camera_id {camera_id}")


def camera_detections(world: WorldState, camera_id: int, noise_seed: int,
                      sigma_px: float = DEFAULT_PIXEL_SIGMA) -> list[Detection]:
    """Tomatoes inside the frustum, projected through the pinhole model with
    Gaussian pixel noise drawn deterministically from `noise_seed`. Results
    are ordered by tomato id."""
    spec = _camera_by_id(world, camera_id)
    rng = np.random.default_rng(noise_seed)
    tomatoes = sorted(world.greenhouse.tomatoes(), key=lambda t: t.tomato_id)
    out = []
    for t in tomatoes:
        p = world_to_camera(spec, np.asarray(t.center, dtype=float))[0]
        if not in_frustum(spec, p):
            continue
        u = spec.focal_px * p[0] / p[2] + spec.principal_px[0]
        v = spec.focal_px * p[1] / p[2] + spec.principal_px[1]
        if sigma_px > 0.0:
            du, dv = rng.normal(0.0, sigma_px, size=2)
        else:
            du = dv = 0.0
        out.append(Detection(t.tomato_id, p, np.array([u + du, v + dv])))
    return out


def _visible_2d(spec: CameraSpec, point_xy) -> bool:
    """Plan-view visibility for the schematic frame: inside the horizontal
    field wedge and ground range."""
    dx = float(point_xy[0]) - float(spec.position[0])
    dy = float(point_xy[1]) - float(spec.position[1])
    if math.hypot(dx, dy) > spec.max_range_m:
        return False
    return abs(wrap_angle(math.atan2(dy, dx) - spec.yaw)) <= spec.horizontal_fov_rad / 2.0


def render_snapshot(world: WorldState, camera_id: int) -> dict:
    """Schematic vector frame: typed 2D primitives in world coordinates with
    state colors. Deterministic for a fixed world state."""
    spec = _camera_by_id(world, camera_id)
    prims = []
    for (a, b) in world.greenhouse.walls:
        prims.append({"kind": "polyline", "points": [[a[0], a[1]], [b[0], b[1]]],
                      "color": "#455a64", "tag": "wall"})
    prims.append({"kind": "marker", "center": [float(spec.position[0]), float(spec.position[1])],
                  "yaw": round(spec.yaw, 6), "color": "#37474f", "tag": "camera",
                  "id": spec.camera_id})
    for pod in world.greenhouse.pods():
        if not _visible_2d(spec, pod.position):
            continue
        prims.append({"kind": "rect", "center": [round(float(pod.position[0]), 6),
                                                 round(float(pod.position[1]), 6)],
                      "size": [pod.size_m, pod.size_m], "color": "#8d6e63",
                      "tag": "pod", "id": pod.pod_id, "marker_id": pod.marker_id})
        prims.append({"kind": "circle", "center": [round(float(pod.plant.base_position[0]), 6),
                                                   round(float(pod.plant.base_position[1]), 6)],
                      "radius": 0.08, "color": "#2e7d32", "tag": "plant"})
    for t in sorted(world.greenhouse.tomatoes(), key=lambda t: t.tomato_id):
        if not _visible_2d(spec, t.center[:2]):
            continue
        if t.state == TomatoState.ATTACHED and not t.pluckable:
            color = STATIC_TOMATO_COLOR
        else:
            color = TOMATO_COLORS[t.state]
        prims.append({"kind": "circle", "center": [round(float(t.center[0]), 6),
                                                   round(float(t.center[1]), 6)],
                      "radius": t.radius_m, "color": color, "tag": "tomato",
                      "id": t.tomato_id, "state": t.state.value})
    pose = world.rover.base.pose
    if _visible_2d(spec, (pose.x, pose.y)):
        hw, hl = 0.30, 0.45
        c, s = math.cos(pose.theta), math.sin(pose.theta)
        corners = []
        for lx, ly in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)):
            corners.append([round(pose.x + c * lx - s * ly, 6), round(pose.y + s * lx + c * ly, 6)])
        prims.append({"kind": "polygon", "points": corners, "color": "#1e88e5", "tag": "rover"})
        prims.append({"kind": "polyline",
                      "points": [[round(pose.x, 6), round(pose.y, 6)],
                                 [round(pose.x + c * hl, 6), round(pose.y + s * hl, 6)]],
                      "color": "#0d47a1", "tag": "rover_heading"})
    return {
        "camera_id": camera_id,
        "tick": world.tick,
        "bounds": [0.0, 0.0, world.greenhouse.width_m, world.greenhouse.length_m],
        "primitives": prims,
    }
