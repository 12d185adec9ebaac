"""Deterministic fixed-timestep simulation engine.

The engine is the sole writer of the world state. Network threads enqueue
already-filtered commands; each tick drains the queue, applies at most one
command per actuation category (latest wins, earlier ones acked SUPERSEDED),
advances the base/arm/gripper, evaluates grasp and pluck effects, and emits
telemetry for every channel whose substantive content changed.

Determinism contract: identical (scenario, seed, timestamped command trace)
yields an identical telemetry byte stream. All randomness flows from the
seed; telemetry timestamps are simulation time, never wall clock.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from queue import Empty, SimpleQueue

import numpy as np

from . import protocol
from .cameras import camera_detections, render_snapshot
from .navigation import MissionController, WallFollowConfig
from .rover import filter_odometry, step_base
from .sensors import LidarConfig, SonarConfig, scan_lidar, scan_sonar
from .world import (PluckOutcome, TomatoState, WorldState, apply_pluck,
                    basket_contains_world_point)

# telemetry topics
TOPIC_ODOM = "/rover/odom"
TOPIC_ODOM_FILTERED = "/rover/odom/filtered"
TOPIC_JOINTS = "/rover/arm/joint_states"
TOPIC_LIDAR = "/rover/lidar"
TOPIC_SONAR = "/rover/sonar"
TOPIC_GRIPPER = "/rover/gripper"
TOPIC_TOMATOES = "/world/tomatoes"
TOPIC_MISSION_EVENTS = "/rover/mission/events"


def camera_frame_topic(camera_id: int) -> str:
    return f"/camera/{camera_id}/frame"


def camera_detections_topic(camera_id: int) -> str:
    return f"/camera/{camera_id}/detections"


class CommandKind(str, Enum):
    BASE_VELOCITY = "base_velocity"
    JOINT_DELTA = "joint_delta"
    JOINT_TRAJECTORY = "joint_trajectory"
    GRIPPER_SET = "gripper_set"
    PLUCK = "pluck"
    STOP = "stop"
    MISSION = "mission"


@dataclass
class ActuationCommand:
    kind: CommandKind
    correlation_id: str = "0" * 32
    issued_by: str = "local"
    v_left: float = 0.0
    v_right: float = 0.0
    joint_index: int = 0
    delta_rad: float = 0.0
    speed_rad_s: float | None = None
    waypoints: np.ndarray | None = None
    aperture_m: float = 0.0
    force_n: float = 0.0
    mission_action: str = ""       # start | resume | abort
    markers: list = field(default_factory=list)


# failure reason codes surfaced in acks
NOT_GRASPED = "NOT_GRASPED"
STILL_ATTACHED = "STILL_ATTACHED"
NOT_PLUCKABLE = "NOT_PLUCKABLE"
MARKER_NOT_FOUND = "MARKER_NOT_FOUND"
BAD_MISSION_ACTION = "BAD_MISSION_ACTION"

_PLUCK_FAILONE = {
    PluckOutcome.STILL_ATTACHED: STILL_ATTACHED,
    PluckOutcome.NOT_PLUCKABLE: NOT_PLUCKABLE,
    PluckOutcome.NOT_GRASPED: NOT_GRASPED,
}


@dataclass
class EngineConfig:
    dt_s: float = 0.02
    lidar: LidarConfig = field(default_factory=LidarConfig)
    sonar: SonarConfig = field(default_factory=SonarConfig)
    pixel_noise_sigma: float = 2.0
    odom_period: int = 1
    joints_period: int = 1
    lidar_period: int = 5
    sonar_period: int = 5
    camera_period: int = 10
    perf_window_s: float = 5.0


@dataclass
class PerfMetrics:
    """Sliding-window pace metrics: rtf clamped to [0,1] for display, raw
    ratio alongside, ticks per wall second."""
    rtf: float
    raw_rtf: float
    fps: float
    window_s: float


@dataclass
class PerfReport:
    mode: str
    dt_s: float
    ticks: int
    sim_time_s: float
    wall_time_s: float
    rtf: float          # clamped to [0, 1] for reporting
    raw_rtf: float
    fps: float
    tick_ms_mean: float
    tick_ms_p95: float
    tick_ms_max: float

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "dt_s": self.dt_s, "ticks": self.ticks,
            "sim_time_s": round(self.sim_time_s, 6), "wall_time_s": round(self.wall_time_s, 6),
            "rtf": round(self.rtf, 4), "raw_rtf": round(self.raw_rtf, 4),
            "fps": round(self.fps, 2), "tick_ms_mean": round(self.tick_ms_mean, 4),
            "tick_ms_p95": round(self.tick_ms_p95, 4), "tick_ms_max": round(self.tick_ms_max, 4),
        }

    def human_table(self) -> str:
        d = self.to_dict()
        rows = [("mode", d["mode"]), ("ticks", d["ticks"]), ("sim time [s]", d["sim_time_s"]),
                ("wall time [s]", d["wall_time_s"]), ("RTF (clamped)", d["rtf"]),
                ("RTF (raw)", d["raw_rtf"]), ("FPS", d["fps"]),
                ("tick mean [ms]", d["tick_ms_mean"]), ("tick p95 [ms]", d["tick_ms_p95"]),
                ("tick max [ms]", d["tick_ms_max"])]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


class _ArmExecutor:
    """Moves joints toward a waypoint sequence at per-joint speed caps."""

    def __init__(self, waypoints: np.ndarray, speeds: np.ndarray):
        self.waypoints = waypoints
        self.speeds = speeds
        self.index = 0

    def advance(self, q: np.ndarray, dt: float) -> tuple[np.ndarray, bool]:
        target = self.waypoints[self.index]
        step = np.clip(target - q, -self.speeds * dt, self.speeds * dt)
        q1 = q + step
        if np.abs(target - q1).max() < 1e-12:
            q1 = target.copy()
            self.index += 1
        return q1, self.index >= len(self.waypoints)


class SimEngine:
    def __init__(self, world: WorldState, cfg: EngineConfig | None = None, seed: int = 0,
                 publish=None):
        """`publish(topic, payload, ts_ms)` fans telemetry out (usually into
        the broker); None collects nothing."""
        self.world = world
        self.cfg = cfg or EngineConfig()
        self.seed = seed
        self.publish = publish or (lambda topic, payload, ts_ms: None)
        self._queue: SimpleQueue = SimpleQueue()
        self._odo_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0D0]))
        self._estopped = False
        self._arm_exec: _ArmExecutor | None = None
        self._last_keys: dict[str, bytes] = {}
        self._tick_times: list[float] = []
        self._perf_samples: deque = deque()  # (wall_s, sim_s) within the window
        self.mission = MissionController(WallFollowConfig())
        self.on_apply = None  # test hook: called with each applied ActuationCommand
        self._stop_requested = False

    # --- command ingress (thread-safe) ---------------------------------------

    def submit(self, cmd: ActuationCommand, ack=None) -> None:
        self._queue.put((cmd, ack))

    def set_estop(self, latched: bool) -> None:
        self._estopped = latched

    def request_stop(self) -> None:
        self._stop_requested = True

    # --- telemetry helpers ----------------------------------------------------

    def _ts_ms(self) -> int:
        return int(round(self.world.sim_time_s * 1000.0))

    def _emit(self, topic: str, payload: dict, key_payload=None) -> None:
        key = protocol.canonical_payload_bytes(key_payload if key_payload is not None else payload)
        if self._last_keys.get(topic) == key:
            return
        self._last_keys[topic] = key
        self.publish(topic, payload, self._ts_ms())

    # --- per-tick work ----------------------------------------------------------

    def _resolve_latest_wins(self, drained: list) -> tuple[dict, list]:
        """Keep the newest command per category; ack the rest SUPERSEDED.
        Stop occupies both the base and arm slots."""
        slots: dict[str, tuple] = {}
        acks = []

        def place(name, item):
            if name in slots:
                old_cmd, old_ack = slots[name]
                if old_ack:
                    acks.append((old_cmd, old_ack, protocol.SUPERSEDED, None))
            slots[name] = item

        for cmd, ack in drained:
            k = cmd.kind
            if k == CommandKind.BASE_VELOCITY:
                place("base", (cmd, ack))
            elif k in (CommandKind.JOINT_DELTA, CommandKind.JOINT_TRAJECTORY):
                place("arm", (cmd, ack))
            elif k == CommandKind.GRIPPER_SET:
                place("gripper", (cmd, ack))
            elif k == CommandKind.PLUCK:
                place("pluck", (cmd, ack))
            elif k == CommandKind.MISSION:
                place("mission", (cmd, ack))
            elif k == CommandKind.STOP:
                place("base", (cmd, ack))
                # a Stop also cancels arm motion; it owns the arm slot silently
                if "arm" in slots:
                    old_cmd, old_ack = slots.pop("arm")
                    if old_ack:
                        acks.append((old_cmd, old_ack, protocol.SUPERSEDED, None))
        return slots, acks

    def _ack(self, cmd: ActuationCommand, ack, status: str, reason_code: str | None,
             **extra) -> None:
        if ack is None:
            return
        payload = protocol.make_ack_payload(status, reason_code, **extra)
        ack(cmd.correlation_id, payload)

    def tick(self) -> None:
        t0 = time.perf_counter()
        world = self.world
        cfg = self.cfg
        dt = cfg.dt_s
        rover = world.rover
        base_cfg = world.rover_config.base
        arm_cfg = world.rover_config.arm
        grip_cfg = world.rover_config.gripper

        drained = []
        while True:
            try:
                drained.append(self._queue.get_nowait())
            except Empty:
                break
        slots, pending_acks = self._resolve_latest_wins(drained)
        for cmd, ack, status, reason in pending_acks:
            self._ack(cmd, ack, status, reason)

        # mission control commands
        if "mission" in slots:
            cmd, ack = slots["mission"]
            if self._estopped:
                self._ack(cmd, ack, protocol.REJECTED, "ESTOPPED")
            elif cmd.mission_action == "start":
                known = {pod.marker_id for pod in world.greenhouse.pods()}
                sides = {row.wall_side for row in world.greenhouse.rows for pod in row.pods
                         if pod.marker_id in cmd.markers}
                side = sides.pop() if len(sides) == 1 else None
                ok = self.mission.start(cmd.markers, known, wall_side=side)
                if ok:
                    self._ack(cmd, ack, protocol.SUCCESS, None)
                else:
                    self._ack(cmd, ack, protocol.FAILURE, MARKER_NOT_FOUND)
                if self.on_apply and ok:
                    self.on_apply(cmd, world)
            elif cmd.mission_action == "resume":
                ok = self.mission.resume()
                self._ack(cmd, ack, protocol.SUCCESS if ok else protocol.FAILURE,
                          None if ok else BAD_MISSION_ACTION)
            elif cmd.mission_action == "abort":
                self.mission.abort()
                self._ack(cmd, ack, protocol.SUCCESS, None)
            else:
                self._ack(cmd, ack, protocol.FAILURE, BAD_MISSION_ACTION)

        manual_base = None
        if "base" in slots:
            cmd, ack = slots["base"]
            if self._estopped and cmd.kind != CommandKind.STOP:
                self._ack(cmd, ack, protocol.REJECTED, "ESTOPPED")
            else:
                manual_base = cmd
                if cmd.kind == CommandKind.STOP:
                    rover.base.v_left = 0.0
                    rover.base.v_right = 0.0
                    self._arm_exec = None
                    rover.arm.qd[:] = 0.0
                else:
                    lim = base_cfg.wheel_speed_limit
                    rover.base.v_left = max(-lim, min(lim, cmd.v_left))
                    rover.base.v_right = max(-lim, min(lim, cmd.v_right))
                    if self.mission.active:
                        self.mission.abort(reason="manual_override")
                self._ack(cmd, ack, protocol.SUCCESS, None)
                if self.on_apply:
                    self.on_apply(cmd, world)

        if "arm" in slots:
            cmd, ack = slots["arm"]
            if self._estopped:
                self._ack(cmd, ack, protocol.REJECTED, "ESTOPPED")
            else:
                limits = np.asarray(arm_cfg.velocity_limits)
                speed = cmd.speed_rad_s if cmd.speed_rad_s else arm_cfg.default_speed_rad_s
                speeds = np.minimum(np.full(6, speed), limits)
                if cmd.kind == CommandKind.JOINT_DELTA:
                    target = rover.arm.q.copy()
                    target[cmd.joint_index] += cmd.delta_rad
                    self._arm_exec = _ArmExecutor(target[None, :], speeds)
                else:
                    self._arm_exec = _ArmExecutor(np.asarray(cmd.waypoints, dtype=float), speeds)
                self._ack(cmd, ack, protocol.SUCCESS, None)
                if self.on_apply:
                    self.on_apply(cmd, world)

        if "gripper" in slots:
            cmd, ack = slots["gripper"]
            if self._estopped:
                self._ack(cmd, ack, protocol.REJECTED, "ESTOPPED")
            else:
                rover.gripper.aperture_m = max(0.0, min(grip_cfg.max_aperture_m, cmd.aperture_m))
                self._ack(cmd, ack, protocol.SUCCESS, None)
                if self.on_apply:
                    self.on_apply(cmd, world)

        # standing stop while the e-stop latch is held
        if self._estopped:
            rover.base.v_left = 0.0
            rover.base.v_right = 0.0
            self._arm_exec = None
            rover.arm.qd[:] = 0.0
            if self.mission.active:
                self.mission.abort(reason="estop")

        # autonomy: the mission controller supplies wheel speeds when active
        scan = None
        if self.mission.active and manual_base is None and not self._estopped:
            scan = scan_lidar(world, rover.base.pose, cfg.lidar)
            speeds = self.mission.step(scan, base_cfg, self._last_travel_m())
            if speeds is not None:
                rover.base.v_left, rover.base.v_right = speeds

        # advance the arm
        if self._arm_exec is not None:
            q0 = rover.arm.q.copy()
            q1, done = self._arm_exec.advance(q0, dt)
            rover.arm.qd = (q1 - q0) / dt
            rover.arm.q = q1
            if done:
                self._arm_exec = None
        else:
            rover.arm.qd[:] = 0.0

        # advance the base and both odometry tracks
        sigma = base_cfg.odometry_noise_sigma
        noise = self._odo_rng.normal(0.0, 1.0, size=2)
        wheel_noise = (noise[0] * sigma * abs(rover.base.v_left),
                       noise[1] * sigma * abs(rover.base.v_right))
        prev_pose = rover.base.pose
        new_base, raw_inc, cmd_inc = step_base(rover.base, base_cfg, dt, wheel_noise)
        self._travel_m = math.hypot(new_base.pose.x - prev_pose.x, new_base.pose.y - prev_pose.y)
        wall_est = None
        if scan is not None:
            wall_est = self.mission.wall_heading_estimate(scan, rover.base.filtered_odometry.theta)
        new_base.filtered_odometry = filter_odometry(
            rover.base.filtered_odometry, raw_inc, cmd_inc, base_cfg, wall_est)
        rover.base = new_base

        # pluck, then grasp binding bookkeeping
        if "pluck" in slots:
            cmd, ack = slots["pluck"]
            if self._estopped:
                self._ack(cmd, ack, protocol.REJECTED, "ESTOPPED")
            else:
                held = rover.gripper.grasped_tomato
                if held is None:
                    self._ack(cmd, ack, protocol.FAILURE, NOT_GRASPED)
                else:
                    outcome = apply_pluck(world, held, cmd.force_n)
                    if outcome == PluckOutcome.DETACHED:
                        self._ack(cmd, ack, protocol.SUCCESS, None,
                                  outcome=outcome.value, tomato_id=held)
                    else:
                        self._ack(cmd, ack, protocol.FAILURE, _PLUCK_FAILONE[outcome],
                                  outcome=outcome.value, tomato_id=held)
                if self.on_apply:
                    self.on_apply(cmd, world)
        self._update_grasp()

        # telemetry
        self._publish_telemetry()
        for ev in self.mission.drain_events():
            self.publish(TOPIC_MISSION_EVENTS, {"t_ms": self._ts_ms(), **ev}, self._ts_ms())

        world.tick += 1
        world.sim_time_s = world.tick * dt
        self._tick_times.append(time.perf_counter() - t0)
        now = time.monotonic()
        self._perf_samples.append((now, world.sim_time_s))
        while self._perf_samples and now - self._perf_samples[0][0] > self.cfg.perf_window_s:
            self._perf_samples.popleft()

    def _last_travel_m(self) -> float:
        return getattr(self, "_travel_m", 0.0)

    def metrics(self) -> PerfMetrics:
        """Pace over the sliding window (meaningful in realtime mode)."""
        w = self.cfg.perf_window_s
        if len(self._perf_samples) < 2:
            return PerfMetrics(rtf=0.0, raw_rtf=0.0, fps=0.0, window_s=w)
        wall0, sim0 = self._perf_samples[0]
        wall1, sim1 = self._perf_samples[-1]
        span = max(wall1 - wall0, 1e-9)
        raw = (sim1 - sim0) / span
        return PerfMetrics(rtf=max(0.0, min(1.0, raw)), raw_rtf=raw,
                           fps=(len(self._perf_samples) - 1) / span, window_s=w)

    def _update_grasp(self) -> None:
        world = self.world
        rover = world.rover
        grip_cfg = world.rover_config.gripper
        from .rover import fingertip_world, grasp_candidate
        tip = fingertip_world(rover.base.pose, rover.arm.q, world.rover_config.arm)
        held = rover.gripper.grasped_tomato
        if held is not None:
            t = world.tomato(held)
            if t.state == TomatoState.DETACHED:
                t.center = tip.copy()
            release = rover.gripper.aperture_m >= 2.0 * t.radius_m
            if t.state == TomatoState.ATTACHED:
                release = release or (float(np.linalg.norm(t.center - tip))
                                      > grip_cfg.grasp_radius_m)
            if release:
                rover.gripper.grasped_tomato = None
                if t.state == TomatoState.DETACHED:
                    if basket_contains_world_point(world, t.center[:2]):
                        t.state = TomatoState.COLLECTED
                    else:
                        t.center = np.array([t.center[0], t.center[1], t.radius_m])
        if rover.gripper.grasped_tomato is None:
            candidates = [t for t in world.greenhouse.tomatoes()
                          if t.state != TomatoState.COLLECTED]
            cand = grasp_candidate(candidates, tip, rover.gripper.aperture_m,
                                   grip_cfg.grasp_radius_m)
            if cand is not None:
                rover.gripper.grasped_tomato = cand

    def _publish_telemetry(self) -> None:
        world = self.world
        cfg = self.cfg
        tick = world.tick
        rover = world.rover
        ts = self._ts_ms()

        if tick % cfg.odom_period == 0:
            raw = rover.base.raw_odometry
            self._emit(TOPIC_ODOM, {
                "t_ms": ts,
                "pose": [raw.x, raw.y, raw.theta],
                "wheels": [rover.base.v_left, rover.base.v_right],
            }, key_payload={"p": [raw.x, raw.y, raw.theta],
                            "w": [rover.base.v_left, rover.base.v_right]})
            f = rover.base.filtered_odometry
            self._emit(TOPIC_ODOM_FILTERED, {"t_ms": ts, "pose": [f.x, f.y, f.theta]},
                       key_payload={"p": [f.x, f.y, f.theta]})
        if tick % cfg.joints_period == 0:
            q = rover.arm.q.tolist()
            qd = rover.arm.qd.tolist()
            self._emit(TOPIC_JOINTS, {"t_ms": ts, "q": q, "qd": qd},
                       key_payload={"q": q, "qd": qd})
            self._emit(TOPIC_GRIPPER, {
                "t_ms": ts,
                "aperture_m": rover.gripper.aperture_m,
                "grasped_tomato": rover.gripper.grasped_tomato,
            }, key_payload={"a": rover.gripper.aperture_m,
                            "g": rover.gripper.grasped_tomato})
        if tick % cfg.lidar_period == 0:
            scan = scan_lidar(world, rover.base.pose, cfg.lidar)
            ranges = np.round(scan.ranges, 4).tolist()
            markers = [[m, round(b, 4), round(r, 4)] for m, b, r in scan.marker_hits]
            self._emit(TOPIC_LIDAR, {
                "t_ms": ts,
                "angle_min": round(float(scan.bearings[0]), 6),
                "angle_step": round(float(scan.bearings[1] - scan.bearings[0]), 6)
                if len(scan.bearings) > 1 else 0.0,
                "max_range_m": scan.max_range_m,
                "ranges": ranges,
                "markers": markers,
            }, key_payload={"r": ranges, "m": markers})
        if tick % cfg.sonar_period == 0:
            sonar = np.round(scan_sonar(world, rover.base.pose, cfg.sonar), 4).tolist()
            self._emit(TOPIC_SONAR, {"t_ms": ts, "ranges": sonar}, key_payload={"r": sonar})
        if tick % cfg.camera_period == 0:
            for cam in world.greenhouse.cameras:
                frame = render_snapshot(world, cam.camera_id)
                self._emit(camera_frame_topic(cam.camera_id), frame,
                           key_payload={"p": frame["primitives"]})
                seed = int(np.random.SeedSequence(
                    [self.seed, 0xCA, cam.camera_id, tick]).generate_state(1)[0])
                dets = camera_detections(world, cam.camera_id, seed, cfg.pixel_noise_sigma)
                det_payload = [{"tomato_id": d.tomato_id,
                                "cam": np.round(d.cam_point, 4).tolist(),
                                "px": np.round(d.pixel, 2).tolist()} for d in dets]
                self._emit(camera_detections_topic(cam.camera_id),
                           {"t_ms": ts, "detections": det_payload},
                           key_payload={"d": det_payload})
        tomatoes = [{"id": t.tomato_id, "state": t.state.value, "pluckable": t.pluckable,
                     "center": np.round(t.center, 4).tolist()}
                    for t in sorted(world.greenhouse.tomatoes(), key=lambda t: t.tomato_id)]
        self._emit(TOPIC_TOMATOES, {"t_ms": ts, "tomatoes": tomatoes},
                   key_payload={"t": tomatoes})

    # --- run loops ---------------------------------------------------------------

    def run(self, duration_s: float | None, mode: str = "realtime") -> PerfReport:
        """Run for a duration (None: until `request_stop`). Realtime paces
        ticks to the wall clock; afap (as fast as possible) free-runs."""
        if mode not in ("realtime", "afap"):
            raise ValueError(f"unknown mode {mode!r}")
        self._stop_requested = False
        dt = self.cfg.dt_s
        ticks = None if duration_s is None else max(1, round(duration_s / dt))
        start = time.monotonic()
        sim_start = self.world.sim_time_s
        i = 0
        while ticks is None or i < ticks:
            if self._stop_requested:
                break
            self.tick()
            if mode == "realtime":
                target = start + (i + 1) * dt
                now = time.monotonic()
                if target > now:
                    time.sleep(target - now)
            i += 1
        wall = max(time.monotonic() - start, 1e-9)
        return self._report(mode, self.world.sim_time_s - sim_start, wall)

    def _report(self, mode: str, sim_elapsed: float, wall_elapsed: float) -> PerfReport:
        times = np.array(self._tick_times[-max(1, len(self._tick_times)):]) * 1000.0
        raw_rtf = sim_elapsed / wall_elapsed
        ticks = int(round(sim_elapsed / self.cfg.dt_s))
        return PerfReport(
            mode=mode, dt_s=self.cfg.dt_s, ticks=ticks, sim_time_s=sim_elapsed,
            wall_time_s=wall_elapsed, rtf=max(0.0, min(1.0, raw_rtf)), raw_rtf=raw_rtf,
            fps=ticks / wall_elapsed,
            tick_ms_mean=float(times.mean()) if len(times) else 0.0,
            tick_ms_p95=float(np.percentile(times, 95)) if len(times) else 0.0,
            tick_ms_max=float(times.max()) if len(times) else 0.0,
        )


def reset(scenario_text: str, seed: int, cfg: EngineConfig | None = None,
          publish=None) -> SimEngine:
    """Fresh engine over a freshly validated world. Identical (scenario, seed,
    command trace) always reproduces the identical telemetry byte stream."""
    from .world import load_scenario
    return SimEngine(load_scenario(scenario_text), cfg or EngineConfig(), seed=seed,
                     publish=publish)


class TelemetryCollector:
    """Deterministic envelope sink for replay/determinism harnesses: assigns
    sequence numbers and correlation ids from counters, so the resulting byte
    stream is a pure function of the telemetry content."""

    def __init__(self):
        self.seq = 0
        self.frames: list[bytes] = []
        self.envelopes: list[protocol.Envelope] = []

    def publish(self, topic: str, payload: dict, ts_ms: int) -> None:
        env = protocol.Envelope(
            kind="PUB", topic=topic, correlation_id=f"{self.seq:032x}",
            seq=self.seq, ts_ms=ts_ms, payload=payload)
        self.seq += 1
        self.envelopes.append(env)
        self.frames.append(protocol.encode(env))


def run_trace(world: WorldState, seed: int, trace: list, duration_s: float,
              cfg: EngineConfig | None = None) -> tuple[list[bytes], list]:
    """Deterministic replay harness: inject (t_ms, ActuationCommand) pairs at
    their tick boundaries and capture the telemetry byte stream plus acks."""
    collector = TelemetryCollector()
    engine = SimEngine(world, cfg or EngineConfig(), seed=seed, publish=collector.publish)
    acks: list[tuple[str, dict]] = []

    def ack_sink(cid, payload):
        acks.append((cid, payload))

    pending = sorted(trace, key=lambda item: item[0])
    idx = 0
    ticks = max(1, round(duration_s / engine.cfg.dt_s))
    for i in range(ticks):
        now_ms = i * engine.cfg.dt_s * 1000.0
        while idx < len(pending) and pending[idx][0] <= now_ms + 1e-9:
            engine.submit(pending[idx][1], ack_sink)
            idx += 1
        engine.tick()
    return collector.frames, acks
