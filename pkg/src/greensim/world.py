"""Greenhouse scene: pods, plants, tomatoes, cameras, walls, and the tomato
detachment rule. Scenarios are JSON documents with a `schema_version` field;
`load_scenario` validates every structural invariant and builds the initial
world deterministically. See docs/scenario.md for the full schema.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import point_in_rect, rectangle_segments, segments_to_array
from .rover import (ArmConfig, BaseConfig, GripperConfig, Pose2D, RoverConfig,
                    RoverState, UR5_DH, fingertip_world)

SCHEMA_VERSION = 1
MAX_PLUCKABLE = 5  # simulator-wide cap on pluckable tomatoes
DEFAULT_DETACH_THRESHOLD_N = 5.0
DEFAULT_CAMERA_COUNT = 4
MARKER_VISIBILITY_RANGE_M = 1.5


class ScenarioError(Exception):
    """Scenario rejected; `invariant` names the failed check."""

    def __init__(self, invariant: str, detail: str = ""):
        super().__init__(f"{invariant}: {detail}" if detail else invariant)
        self.invariant = invariant
        self.detail = detail


class ScenarioParseError(ScenarioError):
    def __init__(self, detail: str):
        super().__init__("parse", detail)


class ScenarioVersionError(ScenarioError):
    def __init__(self, detail: str):
        super().__init__("schema_version", detail)


class TomatoState(str, Enum):
    ATTACHED = "attached"
    DETACHED = "detached"
    COLLECTED = "collected"


class PluckOutcome(str, Enum):
    DETACHED = "detached"
    STILL_ATTACHED = "still_attached"
    NOT_PLUCKABLE = "not_pluckable"
    NOT_GRASPED = "not_grasped"


@dataclass
class Tomato:
    tomato_id: int
    center: np.ndarray  # (3,) world frame, meters
    radius_m: float
    pluckable: bool
    detach_threshold_n: float
    state: TomatoState = TomatoState.ATTACHED


@dataclass
class Plant:
    base_position: np.ndarray  # (3,)
    tomatoes: list = field(default_factory=list)


@dataclass
class Pod:
    pod_id: int
    marker_id: int
    position: np.ndarray  # (2,)
    plant: Plant
    size_m: float = 0.30  # square footprint edge


@dataclass
class PodRow:
    row_id: int
    pods: list
    wall_side: str  # "left" | "right"


@dataclass
class CameraSpec:
    camera_id: int
    position: np.ndarray  # (3,)
    yaw: float
    pitch: float  # positive tilts the optical axis below the horizon
    horizontal_fov_rad: float
    max_range_m: float
    focal_px: float
    principal_px: tuple  # (cx, cy)
    image_size_px: tuple  # (width, height)


@dataclass
class Greenhouse:
    width_m: float
    length_m: float
    rows: list
    cameras: list
    walls: list  # [((x,y),(x,y)), ...] closed boundary

    def pods(self):
        for row in self.rows:
            for pod in row.pods:
                yield pod

    def tomatoes(self):
        for pod in self.pods():
            for t in pod.plant.tomatoes:
                yield t


@dataclass
class WorldState:
    """Single source of truth stepped by the engine; reads take snapshots."""
    greenhouse: Greenhouse
    rover: RoverState
    rover_config: RoverConfig
    tick: int = 0
    sim_time_s: float = 0.0
    _tomato_index: dict = field(default_factory=dict, repr=False)
    _wall_array: np.ndarray | None = field(default=None, repr=False)
    _obstacle_array: np.ndarray | None = field(default=None, repr=False)

    def tomato(self, tomato_id: int) -> Tomato:
        try:
            return self._tomato_index[tomato_id]
        except KeyError:
            raise KeyError(f"unknown tomato_id {tomato_id}") from None

    def wall_segments(self) -> np.ndarray:
        if self._wall_array is None:
            self._wall_array = segments_to_array(self.greenhouse.walls)
        return self._wall_array

    def obstacle_segments(self) -> np.ndarray:
        """Walls + pod boxes as one (M,4) array; pod i occupies rows 4+4i..4+4i+3."""
        if self._obstacle_array is None:
            segs = list(self.greenhouse.walls)
            for pod in self.greenhouse.pods():
                h = pod.size_m / 2.0
                x, y = float(pod.position[0]), float(pod.position[1])
                segs.extend(rectangle_segments(x - h, y - h, x + h, y + h))
            self._obstacle_array = segments_to_array(segs)
        return self._obstacle_array

    def pod_segment_slice(self, pod_index: int) -> slice:
        base = len(self.greenhouse.walls)
        return slice(base + 4 * pod_index, base + 4 * pod_index + 4)


def apply_pluck(world: WorldState, tomato_id: int, applied_force_n: float) -> PluckOutcome:
    """Detachment rule: a grasped, pluckable, attached tomato detaches iff the
    applied force meets its pedicle threshold. On detach the tomato binds to
    the gripper and rides with it until released."""
    t = world.tomato(tomato_id)
    if world.rover.gripper.grasped_tomato != tomato_id:
        return PluckOutcome.NOT_GRASPED
    if not t.pluckable:
        return PluckOutcome.NOT_PLUCKABLE
    if t.state == TomatoState.DETACHED:
        return PluckOutcome.DETACHED  # already off the plant; idempotent
    if applied_force_n >= t.detach_threshold_n:
        t.state = TomatoState.DETACHED
        t.center = fingertip_world(world.rover.base.pose, world.rover.arm.q,
                                   world.rover_config.arm)
        return PluckOutcome.DETACHED
    return PluckOutcome.STILL_ATTACHED


# --- scenario loading --------------------------------------------------------

def _default_cameras(width: float, length: float) -> list:
    """Four corner cameras looking at the greenhouse center."""
    m = 0.3
    corners = [(m, m), (width - m, m), (width - m, length - m), (m, length - m)]
    cams = []
    cx, cy = width / 2.0, length / 2.0
    for i, (x, y) in enumerate(corners, start=1):
        yaw = math.atan2(cy - y, cx - x)
        cams.append(CameraSpec(
            camera_id=i,
            position=np.array([x, y, 2.2]),
            yaw=yaw,
            pitch=0.35,
            horizontal_fov_rad=1.3,
            max_range_m=18.0,
            focal_px=520.0,
            principal_px=(320.0, 240.0),
            image_size_px=(640, 480),
        ))
    return cams


def _req(obj: dict, key: str, ctx: str):
    if key not in obj:
        raise ScenarioError(f"{ctx}.{key}", "required field missing")
    return obj[key]


def _camera_from_dict(d: dict) -> CameraSpec:
    spec = CameraSpec(
        camera_id=int(_req(d, "camera_id", "camera")),
        position=np.asarray(_req(d, "position", "camera"), dtype=float),
        yaw=float(d.get("yaw", 0.0)),
        pitch=float(d.get("pitch", 0.0)),
        horizontal_fov_rad=float(d.get("horizontal_fov_rad", 1.3)),
        max_range_m=float(d.get("max_range_m", 18.0)),
        focal_px=float(d.get("focal_px", 520.0)),
        principal_px=tuple(d.get("principal_px", (320.0, 240.0))),
        image_size_px=tuple(d.get("image_size_px", (640, 480))),
    )
    if not (0.0 < spec.horizontal_fov_rad < math.pi):
        raise ScenarioError("camera.horizontal_fov", f"camera {spec.camera_id}: fov must be in (0, pi)")
    if spec.max_range_m <= 0:
        raise ScenarioError("camera.max_range", f"camera {spec.camera_id}: max_range must be > 0")
    return spec


def _rover_config_from_dict(d: dict) -> RoverConfig:
    base_d = d.get("base", {})
    arm_d = d.get("arm", {})
    grip_d = d.get("gripper", {})
    base = BaseConfig(
        track_width_m=float(base_d.get("track_width_m", 0.50)),
        wheel_speed_limit=float(base_d.get("wheel_speed_limit", 1.0)),
        slip_coefficient=float(base_d.get("slip_coefficient", 0.10)),
        odometry_noise_sigma=float(base_d.get("odometry_noise_sigma", 0.02)),
        filter_alpha=float(base_d.get("filter_alpha", 0.3)),
        wall_heading_gain=float(base_d.get("wall_heading_gain", 0.2)),
    )
    if not (0.0 <= base.slip_coefficient < 1.0):
        raise ScenarioError("rover.slip_coefficient", "must be in [0, 1)")
    if not (0.0 < base.filter_alpha <= 1.0):
        raise ScenarioError("rover.filter_alpha", "must be in (0, 1]")
    if base.wheel_speed_limit <= 0 or base.track_width_m <= 0:
        raise ScenarioError("rover.base", "wheel_speed_limit and track_width must be > 0")
    arm_kwargs = {}
    if "dh" in arm_d:
        dh = tuple(tuple(float(v) for v in row) for row in arm_d["dh"])
        if len(dh) != 6 or any(len(r) != 4 for r in dh):
            raise ScenarioError("rover.arm.dh", "expected 6 rows of (a, alpha, d, theta_offset)")
        arm_kwargs["dh"] = dh
    if "joint_limits" in arm_d:
        jl = tuple(tuple(float(v) for v in row) for row in arm_d["joint_limits"])
        if len(jl) != 6 or any(len(r) != 2 or r[0] >= r[1] for r in jl):
            raise ScenarioError("rover.arm.joint_limits", "expected 6 (lo, hi) pairs with lo < hi")
        arm_kwargs["joint_limits"] = jl
    if "velocity_limits" in arm_d:
        vl = tuple(float(v) for v in arm_d["velocity_limits"])
        if len(vl) != 6 or any(v <= 0 for v in vl):
            raise ScenarioError("rover.arm.velocity_limits", "expected 6 positive values")
        arm_kwargs["velocity_limits"] = vl
    for k in ("mount_xyz",):
        if k in arm_d:
            arm_kwargs[k] = tuple(float(v) for v in arm_d[k])
    for k in ("max_reach_m", "fingertip_offset_m", "plan_step_rad", "default_speed_rad_s"):
        if k in arm_d:
            arm_kwargs[k] = float(arm_d[k])
    arm = ArmConfig(**arm_kwargs)
    gripper = GripperConfig(
        max_aperture_m=float(grip_d.get("max_aperture_m", 0.12)),
        grasp_radius_m=float(grip_d.get("grasp_radius_m", 0.04)),
        fingertip_radius_m=float(grip_d.get("fingertip_radius_m", 0.03)),
    )
    basket = tuple(float(v) for v in d.get("basket_rect", (0.30, -0.25, 0.60, 0.25)))
    return RoverConfig(base=base, arm=arm, gripper=gripper, basket_rect=basket)


def load_scenario(scenario_text: str) -> WorldState:
    """Parse, validate, and instantiate a world. Deterministic: identical text
    yields an identical world."""
    try:
        doc = json.loads(scenario_text)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(str(e)) from e
    if not isinstance(doc, dict):
        raise ScenarioParseError("top level must be an object")
    if "schema_version" not in doc:
        raise ScenarioVersionError("schema_version field missing")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ScenarioVersionError(f"unknown schema version {doc['schema_version']!r}")

    gh_d = _req(doc, "greenhouse", "scenario")
    width = float(_req(gh_d, "width_m", "greenhouse"))
    length = float(_req(gh_d, "length_m", "greenhouse"))
    if width <= 0 or length <= 0:
        raise ScenarioError("greenhouse.footprint", "width and length must be > 0")

    rows = []
    tomato_ids: set[int] = set()
    marker_ids: set[int] = set()
    pluckable_count = 0
    for row_d in gh_d.get("rows", []):
        wall_side = row_d.get("wall_side", "right")
        if wall_side not in ("left", "right"):
            raise ScenarioError("row.wall_side", f"row {row_d.get('row_id')}: must be left or right")
        pods = []
        for pod_d in row_d.get("pods", []):
            marker_id = int(_req(pod_d, "marker_id", "pod"))
            if marker_id in marker_ids:
                raise ScenarioError("pod.marker_id_unique", f"duplicate marker_id {marker_id}")
            marker_ids.add(marker_id)
            plant_d = pod_d.get("plant", {})
            tomatoes = []
            for t_d in plant_d.get("tomatoes", []):
                tid = int(_req(t_d, "tomato_id", "tomato"))
                if tid in tomato_ids:
                    raise ScenarioError("tomato.id_unique", f"duplicate tomato_id {tid}")
                tomato_ids.add(tid)
                radius = float(t_d.get("radius_m", 0.035))
                if radius <= 0:
                    raise ScenarioError("tomato.radius", f"tomato {tid}: radius must be > 0")
                threshold = float(t_d.get("detach_threshold_n", DEFAULT_DETACH_THRESHOLD_N))
                if threshold <= 0:
                    raise ScenarioError("tomato.detach_threshold", f"tomato {tid}: threshold must be > 0")
                pluckable = bool(t_d.get("pluckable", False))
                if pluckable:
                    pluckable_count += 1
                tomatoes.append(Tomato(
                    tomato_id=tid,
                    center=np.asarray(_req(t_d, "center", "tomato"), dtype=float),
                    radius_m=radius,
                    pluckable=pluckable,
                    detach_threshold_n=threshold,
                ))
            pod_pos = np.asarray(_req(pod_d, "position", "pod"), dtype=float)
            plant_base = np.asarray(plant_d.get("base_position", [pod_pos[0], pod_pos[1], 0.0]),
                                    dtype=float)
            pods.append(Pod(
                pod_id=int(_req(pod_d, "pod_id", "pod")),
                marker_id=marker_id,
                position=pod_pos,
                plant=Plant(base_position=plant_base, tomatoes=tomatoes),
                size_m=float(pod_d.get("size_m", 0.30)),
            ))
        rows.append(PodRow(row_id=int(_req(row_d, "row_id", "row")), pods=pods, wall_side=wall_side))

    if pluckable_count > MAX_PLUCKABLE and not doc.get("allow_extra_pluckable", False):
        raise ScenarioError(
            "pluckable_limit",
            f"{pluckable_count} pluckable tomatoes exceed the cap of {MAX_PLUCKABLE}; "
            "set allow_extra_pluckable to override",
        )

    for row in rows:
        for pod in row.pods:
            h = pod.size_m / 2.0
            if not (h < pod.position[0] < width - h and h < pod.position[1] < length - h):
                raise ScenarioError("pod.inside_footprint",
                                    f"pod {pod.pod_id} at {pod.position.tolist()} not strictly inside")
        if len(row.pods) > 1:
            pts = np.array([p.position for p in row.pods])
            axis = int(np.argmax(pts.var(axis=0)))
            coords = pts[:, axis]
            if not all(coords[i] < coords[i + 1] for i in range(len(coords) - 1)):
                raise ScenarioError("row.pod_order",
                                    f"row {row.row_id}: pods not ordered along the row axis")

    if "cameras" in gh_d:
        cameras = [_camera_from_dict(c) for c in gh_d["cameras"]]
    else:
        cameras = _default_cameras(width, length)
    cam_ids = [c.camera_id for c in cameras]
    if len(set(cam_ids)) != len(cam_ids):
        raise ScenarioError("camera.id_unique", f"duplicate camera ids in {cam_ids}")

    walls = rectangle_segments(0.0, 0.0, width, length)
    _check_closed_boundary(walls)

    greenhouse = Greenhouse(width_m=width, length_m=length, rows=rows, cameras=cameras, walls=walls)

    rover_cfg = _rover_config_from_dict(doc.get("rover", {}))
    start = doc.get("rover", {}).get("start_pose", [1.0, 1.0, 0.0])
    pose = Pose2D(float(start[0]), float(start[1]), float(start[2]))
    rover = RoverState()
    rover.base.pose = pose
    rover.base.raw_odometry = Pose2D(*pose.as_tuple())
    rover.base.filtered_odometry = Pose2D(*pose.as_tuple())
    rover.gripper.aperture_m = min(0.10, rover_cfg.gripper.max_aperture_m)

    world = WorldState(greenhouse=greenhouse, rover=rover, rover_config=rover_cfg)
    world._tomato_index = {t.tomato_id: t for t in greenhouse.tomatoes()}
    return world


def _check_closed_boundary(walls) -> None:
    counts: dict[tuple, int] = {}
    for a, b in walls:
        for p in (a, b):
            key = (round(p[0], 9), round(p[1], 9))
            counts[key] = counts.get(key, 0) + 1
    bad = {k: v for k, v in counts.items() if v != 2}
    if bad:
        raise ScenarioError("walls.closed_boundary", f"endpoints not shared exactly twice: {bad}")


def serialize_scenario(world: WorldState) -> str:
    """Scenario document reproducing this world; load(serialize(load(x))) is a
    fixpoint, which the round-trip tests rely on."""
    gh = world.greenhouse
    doc = {
        "schema_version": SCHEMA_VERSION,
        "greenhouse": {
            "width_m": gh.width_m,
            "length_m": gh.length_m,
            "rows": [
                {
                    "row_id": row.row_id,
                    "wall_side": row.wall_side,
                    "pods": [
                        {
                            "pod_id": pod.pod_id,
                            "marker_id": pod.marker_id,
                            "position": pod.position.tolist(),
                            "size_m": pod.size_m,
                            "plant": {
                                "base_position": pod.plant.base_position.tolist(),
                                "tomatoes": [
                                    {
                                        "tomato_id": t.tomato_id,
                                        "center": t.center.tolist(),
                                        "radius_m": t.radius_m,
                                        "pluckable": t.pluckable,
                                        "detach_threshold_n": t.detach_threshold_n,
                                    }
                                    for t in pod.plant.tomatoes
                                ],
                            },
                        }
                        for pod in row.pods
                    ],
                }
                for row in gh.rows
            ],
            "cameras": [
                {
                    "camera_id": c.camera_id,
                    "position": c.position.tolist(),
                    "yaw": c.yaw,
                    "pitch": c.pitch,
                    "horizontal_fov_rad": c.horizontal_fov_rad,
                    "max_range_m": c.max_range_m,
                    "focal_px": c.focal_px,
                    "principal_px": list(c.principal_px),
                    "image_size_px": list(c.image_size_px),
                }
                for c in gh.cameras
            ],
        },
        "rover": {
            "start_pose": list(world.rover.base.pose.as_tuple()),
            "base": {
                "track_width_m": world.rover_config.base.track_width_m,
                "wheel_speed_limit": world.rover_config.base.wheel_speed_limit,
                "slip_coefficient": world.rover_config.base.slip_coefficient,
                "odometry_noise_sigma": world.rover_config.base.odometry_noise_sigma,
                "filter_alpha": world.rover_config.base.filter_alpha,
                "wall_heading_gain": world.rover_config.base.wall_heading_gain,
            },
            "arm": {
                "dh": [list(r) for r in world.rover_config.arm.dh],
                "joint_limits": [list(r) for r in world.rover_config.arm.joint_limits],
                "velocity_limits": list(world.rover_config.arm.velocity_limits),
                "mount_xyz": list(world.rover_config.arm.mount_xyz),
                "max_reach_m": world.rover_config.arm.max_reach_m,
                "fingertip_offset_m": world.rover_config.arm.fingertip_offset_m,
                "plan_step_rad": world.rover_config.arm.plan_step_rad,
                "default_speed_rad_s": world.rover_config.arm.default_speed_rad_s,
            },
            "gripper": {
                "max_aperture_m": world.rover_config.gripper.max_aperture_m,
                "grasp_radius_m": world.rover_config.gripper.grasp_radius_m,
                "fingertip_radius_m": world.rover_config.gripper.fingertip_radius_m,
            },
            "basket_rect": list(world.rover_config.basket_rect),
        },
        "allow_extra_pluckable": sum(1 for t in gh.tomatoes() if t.pluckable) > MAX_PLUCKABLE,
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def basket_contains_world_point(world: WorldState, point_xy) -> bool:
    """Is a world xy point over the basket footprint (rover-frame rectangle)?"""
    pose = world.rover.base.pose
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    dx = point_xy[0] - pose.x
    dy = point_xy[1] - pose.y
    local = (c * dx + s * dy, -s * dx + c * dy)
    x0, y0, x1, y1 = world.rover_config.basket_rect
    return point_in_rect(local, x0, y0, x1, y1)
