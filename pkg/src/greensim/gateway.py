"""Access gateway: token auth, slot scheduling, safety command filtering,
latched e-stop, and WAN latency shaping.

Every command reaching the engine passes through `filter_command`, which
checks, in order: the e-stop latch, the session's access slot, payload
finiteness, and the per-kind safety limits. The first failing check wins and
its machine-readable reason is returned in a REJECTED ack; nothing is dropped
silently.
"""

from __future__ import annotations

import math
import random
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from . import protocol
from .engine import ActuationCommand, CommandKind
from .protocol import Envelope
from .rover import ArmConfig, Infeasible, batch_forward_kinematics, plan_joint_motion

ROLE_INTERNET = "internet"
ROLE_INTRANET = "intranet"

# rejection reason codes (first failure wins, in filter order)
ESTOPPED = "ESTOPPED"
SLOT = "SLOT"
NON_FINITE = "NON_FINITE"
BAD_PAYLOAD = "BAD_PAYLOAD"
UNKNOWN_COMMAND = "UNKNOWN_COMMAND"
WHEEL_SPEED = "WHEEL_SPEED"
JOINT_SPEED = "JOINT_SPEED"
JOINT_LIMIT = "JOINT_LIMIT"
WORKSPACE = "WORKSPACE"
FLOOR = "FLOOR"
APERTURE = "APERTURE"
PLUCK_FORCE = "PLUCK_FORCE"
PROXIMITY = "PROXIMITY"
BAD_TOKEN = "BAD_TOKEN"
SESSION_LIMIT = "SESSION_LIMIT"
FORBIDDEN = "FORBIDDEN"
FORBIDDEN_TOPIC = "FORBIDDEN_TOPIC"
NOT_AUTHENTICATED = "NOT_AUTHENTICATED"
ALREADY_AUTHENTICATED = "ALREADY_AUTHENTICATED"

CMD_VEL_TOPIC = "/rover/cmd_vel"
ARM_CMD_TOPIC = "/rover/arm/cmd"
GRIPPER_CMD_TOPIC = "/rover/gripper/cmd"
PLUCK_CMD_TOPIC = "/rover/pluck/cmd"
MISSION_CMD_TOPIC = "/rover/mission/cmd"
ESTOP_TOPIC = "/gateway/estop"
STATUS_TOPIC = "/gateway/status"

# clients may not publish into simulator-owned namespaces
RESERVED_PREFIXES = ("/rover/", "/camera/", "/world/", "/gateway/")


@dataclass
class SafetyPolicy:
    joint_position_limits: tuple = tuple((-2.0 * math.pi, 2.0 * math.pi) for _ in range(6))
    joint_velocity_limits: tuple = tuple(math.pi for _ in range(6))
    wheel_speed_limit: float = 1.0
    workspace_aabb: tuple = (-1.1, -1.1, 0.0, 1.1, 1.1, 1.9)  # x0 y0 z0 x1 y1 z1, rover frame
    floor_clearance_m: float = 0.05
    proximity_min_range_m: float = 0.25
    max_pluck_force_n: float = 20.0
    max_aperture_m: float = 0.12

    @classmethod
    def from_dict(cls, d: dict) -> "SafetyPolicy":
        kw = {}
        if "joint_position_limits" in d:
            kw["joint_position_limits"] = tuple(tuple(float(v) for v in r)
                                                for r in d["joint_position_limits"])
        if "joint_velocity_limits" in d:
            kw["joint_velocity_limits"] = tuple(float(v) for v in d["joint_velocity_limits"])
        for k in ("wheel_speed_limit", "floor_clearance_m", "proximity_min_range_m",
                  "max_pluck_force_n", "max_aperture_m"):
            if k in d:
                kw[k] = float(d[k])
        if "workspace_aabb" in d:
            kw["workspace_aabb"] = tuple(float(v) for v in d["workspace_aabb"])
        return cls(**kw)


@dataclass
class LatencyProfile:
    name: str
    one_way_delay_ms: float = 0.0
    jitter_ms: float = 0.0


INTRANET_PROFILE = LatencyProfile("intranet", 0.0, 0.0)
INTERNET_PROFILE = LatencyProfile("internet", 1000.0, 100.0)


@dataclass
class ClientSession:
    client_id: str
    role: str
    token: str
    slot: tuple[float, float] | None   # (start epoch ms, end epoch ms); None = unrestricted
    profile: LatencyProfile


@dataclass
class EStopState:
    latched: bool = False
    engaged_by: str | None = None
    engaged_at_ms: float | None = None


class DelayLine:
    """FIFO latency shaper for one session direction: each envelope is held
    one_way_delay + U(0, jitter) ms, with delivery times clamped monotone so
    messages never reorder."""

    def __init__(self, timeline, profile: LatencyProfile, rng: random.Random):
        self.timeline = timeline
        self.profile = profile
        self.rng = rng
        self._last_due = -math.inf
        self._lock = threading.Lock()

    def send(self, deliver) -> None:
        p = self.profile
        if p.one_way_delay_ms <= 0.0 and p.jitter_ms <= 0.0:
            deliver()
            return
        with self._lock:
            now = self.timeline.now_ms()
            delay = p.one_way_delay_ms + (self.rng.uniform(0.0, p.jitter_ms)
                                          if p.jitter_ms > 0 else 0.0)
            due = max(now + delay, self._last_due)
            self._last_due = due
        self.timeline.schedule(due - now, deliver)


class TelemetryView:
    """Latest safety-relevant telemetry, fed from the broker, consumed by the
    filter: current joint angles and sonar ring."""

    def __init__(self, q0=None, sonar_clear_m: float = 2.0, sonar_count: int = 8):
        self._lock = threading.Lock()
        self._q = np.zeros(6) if q0 is None else np.asarray(q0, dtype=float)
        self._sonar = np.full(sonar_count, sonar_clear_m)
        self._sonar_bearings = np.arange(sonar_count) * (2.0 * math.pi / sonar_count)

    def ingest(self, env: Envelope) -> None:
        if env.topic == "/rover/arm/joint_states":
            with self._lock:
                self._q = np.asarray(env.payload.get("q", self._q), dtype=float)
        elif env.topic == "/rover/sonar":
            with self._lock:
                self._sonar = np.asarray(env.payload.get("ranges", self._sonar), dtype=float)

    @property
    def q(self) -> np.ndarray:
        with self._lock:
            return self._q.copy()

    @property
    def sonar(self) -> np.ndarray:
        with self._lock:
            return self._sonar.copy()

    @property
    def sonar_bearings(self) -> np.ndarray:
        return self._sonar_bearings


def parse_command(topic: str, payload: dict, correlation_id: str,
                  issued_by: str) -> ActuationCommand | str:
    """Wire payload -> ActuationCommand, or a rejection reason code."""
    try:
        if topic == CMD_VEL_TOPIC:
            if payload.get("stop"):
                return ActuationCommand(CommandKind.STOP, correlation_id, issued_by)
            return ActuationCommand(CommandKind.BASE_VELOCITY, correlation_id, issued_by,
                                    v_left=float(payload["v_left"]),
                                    v_right=float(payload["v_right"]))
        if topic == ARM_CMD_TOPIC:
            speed = payload.get("speed_rad_s")
            speed = float(speed) if speed is not None else None
            if "waypoints" in payload:
                wp = np.asarray(payload["waypoints"], dtype=float)
                if wp.ndim != 2 or wp.shape[1] != 6 or wp.shape[0] < 1:
                    return BAD_PAYLOAD
                return ActuationCommand(CommandKind.JOINT_TRAJECTORY, correlation_id, issued_by,
                                        waypoints=wp, speed_rad_s=speed)
            joint = int(payload["joint"])
            if not 0 <= joint <= 5:
                return BAD_PAYLOAD
            if "delta_rad" in payload:
                delta = float(payload["delta_rad"])
            else:
                delta = math.radians(float(payload["delta_deg"]))
            return ActuationCommand(CommandKind.JOINT_DELTA, correlation_id, issued_by,
                                    joint_index=joint, delta_rad=delta, speed_rad_s=speed)
        if topic == GRIPPER_CMD_TOPIC:
            return ActuationCommand(CommandKind.GRIPPER_SET, correlation_id, issued_by,
                                    aperture_m=float(payload["aperture_m"]))
        if topic == PLUCK_CMD_TOPIC:
            return ActuationCommand(CommandKind.PLUCK, correlation_id, issued_by,
                                    force_n=float(payload["force_n"]))
        if topic == MISSION_CMD_TOPIC:
            action = payload.get("action")
            if action not in ("start", "resume", "abort"):
                return BAD_PAYLOAD
            markers = payload.get("markers", [])
            if not isinstance(markers, list) or not all(isinstance(m, int) for m in markers):
                return BAD_PAYLOAD
            return ActuationCommand(CommandKind.MISSION, correlation_id, issued_by,
                                    mission_action=action, markers=markers)
    except (KeyError, TypeError, ValueError):
        return BAD_PAYLOAD
    return UNKNOWN_COMMAND


def check_command(cmd: ActuationCommand, q_now: np.ndarray, sonar: np.ndarray,
                  sonar_bearings: np.ndarray, policy: SafetyPolicy,
                  arm_cfg: ArmConfig) -> tuple[str, str] | None:
    """Per-kind limit checks; returns (reason_code, detail) or None if safe."""
    if cmd.kind == CommandKind.BASE_VELOCITY:
        if abs(cmd.v_left) > policy.wheel_speed_limit or abs(cmd.v_right) > policy.wheel_speed_limit:
            return WHEEL_SPEED, f"|v| exceeds {policy.wheel_speed_limit} m/s"
        v = 0.5 * (cmd.v_left + cmd.v_right)
        if abs(v) > 1e-9:
            ahead = math.pi if v < 0 else 0.0
            rel = np.abs(np.arctan2(np.sin(sonar_bearings - ahead),
                                    np.cos(sonar_bearings - ahead)))
            sector = sonar[rel <= math.pi / 4.0 + 1e-9]
            if sector.size and float(sector.min()) < policy.proximity_min_range_m:
                return PROXIMITY, (f"sonar {float(sector.min()):.3f} m < "
                                   f"{policy.proximity_min_range_m} m guard")
        return None
    if cmd.kind == CommandKind.JOINT_DELTA:
        speed = cmd.speed_rad_s if cmd.speed_rad_s else arm_cfg.default_speed_rad_s
        if speed <= 0 or speed > policy.joint_velocity_limits[cmd.joint_index]:
            return JOINT_SPEED, f"speed {speed:.3f} rad/s outside limit"
        target = q_now.copy()
        target[cmd.joint_index] += cmd.delta_rad
        plan_cfg = replace(arm_cfg, joint_limits=policy.joint_position_limits)
        result = plan_joint_motion(q_now, target, plan_cfg, policy.workspace_aabb,
                                   policy.floor_clearance_m)
        if isinstance(result, Infeasible):
            return result.reason, result.detail
        return None
    if cmd.kind == CommandKind.JOINT_TRAJECTORY:
        speed = cmd.speed_rad_s if cmd.speed_rad_s else arm_cfg.default_speed_rad_s
        if speed <= 0 or speed > min(policy.joint_velocity_limits):
            return JOINT_SPEED, f"speed {speed:.3f} rad/s outside limit"
        # the executor sweeps current q -> wp0 -> wp1 -> ...; validate the whole
        # swept path densely, not just the listed waypoints
        plan_cfg = replace(arm_cfg, joint_limits=policy.joint_position_limits)
        prev = q_now
        for row in np.asarray(cmd.waypoints, dtype=float):
            result = plan_joint_motion(prev, row, plan_cfg, policy.workspace_aabb,
                                       policy.floor_clearance_m)
            if isinstance(result, Infeasible):
                return result.reason, result.detail
            prev = row
        return None
    if cmd.kind == CommandKind.GRIPPER_SET:
        if not 0.0 <= cmd.aperture_m <= policy.max_aperture_m:
            return APERTURE, f"aperture {cmd.aperture_m} outside [0, {policy.max_aperture_m}]"
        return None
    if cmd.kind == CommandKind.PLUCK:
        if not 0.0 <= cmd.force_n <= policy.max_pluck_force_n:
            return PLUCK_FORCE, f"force {cmd.force_n} outside [0, {policy.max_pluck_force_n}] N"
        return None
    # STOP and mission control carry no actuation payload to bound
    return None


MOTION_TOPICS = (CMD_VEL_TOPIC, ARM_CMD_TOPIC, GRIPPER_CMD_TOPIC, PLUCK_CMD_TOPIC,
                 MISSION_CMD_TOPIC)
COMMAND_TOPICS = MOTION_TOPICS + (ESTOP_TOPIC,)


@dataclass
class GatewayConfig:
    tokens: dict = field(default_factory=dict)  # token -> {client_id, role, latency_profile, slot}
    latency_profiles: dict = field(default_factory=lambda: {
        "intranet": INTRANET_PROFILE, "internet": INTERNET_PROFILE})
    policy: SafetyPolicy = field(default_factory=SafetyPolicy)
    internet_session_cap: int = 1
    tcp_listen: str = "127.0.0.1:7600"
    ws_listen: str = "127.0.0.1:7601"

    @classmethod
    def from_dict(cls, d: dict) -> "GatewayConfig":
        profiles = {"intranet": INTRANET_PROFILE, "internet": INTERNET_PROFILE}
        for name, p in d.get("latency_profiles", {}).items():
            profiles[name] = LatencyProfile(name, float(p.get("one_way_delay_ms", 0.0)),
                                            float(p.get("jitter_ms", 0.0)))
        tokens = {}
        for token, entry in d.get("tokens", {}).items():
            role = entry.get("role", ROLE_INTERNET)
            if role not in (ROLE_INTERNET, ROLE_INTRANET):
                raise ValueError(f"token {entry.get('client_id')}: bad role {role!r}")
            slot = entry.get("slot")
            if slot is not None:
                slot = (float(slot["start_ms"]), float(slot["end_ms"]))
            tokens[token] = {
                "client_id": entry.get("client_id", token[:8]),
                "role": role,
                "latency_profile": entry.get(
                    "latency_profile", "intranet" if role == ROLE_INTRANET else "internet"),
                "slot": slot,
            }
        listeners = d.get("listeners", {})
        return cls(
            tokens=tokens,
            latency_profiles=profiles,
            policy=SafetyPolicy.from_dict(d.get("policy", {})),
            internet_session_cap=int(d.get("internet_session_cap", 1)),
            tcp_listen=listeners.get("tcp_listen", "127.0.0.1:7600"),
            ws_listen=listeners.get("ws_listen", "127.0.0.1:7601"),
        )

    @classmethod
    def demo(cls) -> "GatewayConfig":
        return cls(tokens={
            "intranet-secret": {"client_id": "ops", "role": ROLE_INTRANET,
                                "latency_profile": "intranet", "slot": None},
            "internet-token": {"client_id": "remote1", "role": ROLE_INTERNET,
                               "latency_profile": "internet", "slot": None},
        })


class Gateway:
    """One instance fronts the whole system; connections attach/detach as
    clients come and go. The filter stage is the single serialization point
    for commands from every session."""

    def __init__(self, config: GatewayConfig, broker, engine, timeline, arm_cfg: ArmConfig,
                 rng_seed: int = 0):
        self.config = config
        self.broker = broker
        self.engine = engine
        self.timeline = timeline
        self.arm_cfg = arm_cfg
        self.estop = EStopState()
        self.view = TelemetryView()
        self._sessions: dict[str, ClientSession] = {}   # conn_id -> session
        self._filter_lock = threading.Lock()
        self._rng = random.Random(rng_seed)
        self._pub_seq = 0
        broker.register("_gateway_view", self.view.ingest)
        broker.subscribe("_gateway_view", "/rover/arm/joint_states")
        broker.subscribe("_gateway_view", "/rover/sonar")
        broker.set_command_sink(self._broker_command)
        self._conns: dict[str, object] = {}

    # --- connection lifecycle -------------------------------------------------

    def attach(self, conn) -> None:
        self._conns[conn.conn_id] = conn

    def detach(self, conn) -> None:
        self._conns.pop(conn.conn_id, None)
        if conn.conn_id in self._sessions:
            del self._sessions[conn.conn_id]
            self.publish_status()
        self.broker.unregister(conn.conn_id)

    def session_for(self, conn) -> ClientSession | None:
        return self._sessions.get(conn.conn_id)

    def _internet_count(self) -> int:
        return sum(1 for s in self._sessions.values() if s.role == ROLE_INTERNET)

    def authenticate(self, conn, env: Envelope) -> None:
        """AUTH handshake. The reply is not latency-shaped: the profile only
        applies once the session exists (the tunnel handshake is out of scope)."""
        token = env.payload.get("token")
        entry = self.config.tokens.get(token)
        if conn.conn_id in self._sessions:
            conn.send(self._ack_env(env, protocol.REJECTED, ALREADY_AUTHENTICATED))
            return
        if entry is None:
            conn.send(self._ack_env(env, protocol.REJECTED, BAD_TOKEN))
            return
        if entry["role"] == ROLE_INTERNET and self._internet_count() >= self.config.internet_session_cap:
            conn.send(self._ack_env(env, protocol.REJECTED, SESSION_LIMIT))
            return
        profile = self.config.latency_profiles[entry["latency_profile"]]
        session = ClientSession(client_id=entry["client_id"], role=entry["role"], token=token,
                                slot=entry["slot"], profile=profile)
        self._sessions[conn.conn_id] = session
        conn.bind_session(session, self._make_delay_lines(session))
        ack = self._ack_env(env, protocol.SUCCESS, None,
                            role=session.role,
                            client_id=session.client_id,
                            slot=None if session.slot is None else
                            {"start_ms": session.slot[0], "end_ms": session.slot[1]},
                            latency_profile=session.profile.name)
        conn.send(ack)
        self.publish_status()

    def _make_delay_lines(self, session: ClientSession) -> tuple[DelayLine, DelayLine]:
        rng_in = random.Random(self._rng.getrandbits(64))
        rng_out = random.Random(self._rng.getrandbits(64))
        return (DelayLine(self.timeline, session.profile, rng_in),
                DelayLine(self.timeline, session.profile, rng_out))

    # --- envelope handling (called by the server after inbound shaping) --------

    def handle(self, conn, env: Envelope) -> None:
        session = self._sessions.get(conn.conn_id)
        if env.kind == "AUTH":
            self.authenticate(conn, env)
            return
        if session is None:
            conn.send(self._err_env(env, NOT_AUTHENTICATED, "AUTH required first"))
            return
        if env.kind == "PING":
            conn.send_shaped(Envelope(kind="PONG", topic=env.topic,
                                      correlation_id=env.correlation_id, seq=0,
                                      ts_ms=self._now_i(), payload={}))
            return
        if env.kind == "SUB":
            try:
                self.broker.subscribe(conn.conn_id, env.topic)
                conn.send_shaped(self._ack_env(env, protocol.SUCCESS, None))
            except Exception as e:
                code = getattr(e, "code", "BAD_PATTERN")
                conn.send_shaped(self._ack_env(env, protocol.REJECTED, code))
            return
        if env.kind == "UNSUB":
            self.broker.unsubscribe(conn.conn_id, env.topic)
            conn.send_shaped(self._ack_env(env, protocol.SUCCESS, None))
            return
        if env.kind == "CMD":
            self._handle_command(conn, session, env)
            return
        if env.kind == "PUB":
            if any(env.topic.startswith(p) for p in RESERVED_PREFIXES):
                conn.send_shaped(self._err_env(env, FORBIDDEN_TOPIC,
                                               "simulator-owned namespace"))
                return
            self.broker.publish(env)
            return
        conn.send_shaped(self._err_env(env, protocol.MALFORMED, f"unexpected kind {env.kind}"))

    def _broker_command(self, env: Envelope) -> None:
        """Commands published through the broker by in-process components are
        filtered exactly like remote ones, under the intranet role."""
        session = ClientSession(client_id="_internal", role=ROLE_INTRANET, token="",
                                slot=None, profile=INTRANET_PROFILE)
        self._filter_and_submit(session, env, ack_sink=None)

    def _handle_command(self, conn, session: ClientSession, env: Envelope) -> None:
        def ack_sink(cid: str, payload: dict) -> None:
            conn.send_shaped(Envelope(kind="ACK", topic=env.topic, correlation_id=cid,
                                      seq=0, ts_ms=self._now_i(), payload=payload))

        self._filter_and_submit(session, env, ack_sink)

    def _filter_and_submit(self, session: ClientSession, env: Envelope, ack_sink) -> None:
        def rejected(code: str, detail: str = "") -> None:
            if ack_sink:
                ack_sink(env.correlation_id,
                         protocol.make_ack_payload(protocol.REJECTED, code, detail or None))

        with self._filter_lock:
            if env.topic == ESTOP_TOPIC:
                self._handle_estop(session, env, ack_sink)
                return
            if env.topic not in MOTION_TOPICS:
                rejected(UNKNOWN_COMMAND, env.topic)
                return
            if self.estop.latched:
                rejected(ESTOPPED)
                return
            if session.role == ROLE_INTERNET and session.slot is not None:
                now = self.timeline.now_ms()
                if not (session.slot[0] <= now <= session.slot[1]):
                    rejected(SLOT, "outside access slot")
                    return
            if not protocol._check_finite(env.payload):
                rejected(NON_FINITE)
                return
            cmd = parse_command(env.topic, env.payload, env.correlation_id, session.client_id)
            if isinstance(cmd, str):
                rejected(cmd)
                return
            verdict = check_command(cmd, self.view.q, self.view.sonar,
                                    self.view.sonar_bearings, self.config.policy, self.arm_cfg)
            if verdict is not None:
                rejected(verdict[0], verdict[1])
                return
            self.engine.submit(cmd, ack_sink)

    def _handle_estop(self, session: ClientSession, env: Envelope, ack_sink) -> None:
        action = env.payload.get("action")
        if action == "engage":
            # any authenticated session may engage, slot or not
            if not self.estop.latched:
                self.estop = EStopState(latched=True, engaged_by=session.client_id,
                                        engaged_at_ms=self.timeline.now_ms())
                self.engine.set_estop(True)
                self.engine.submit(ActuationCommand(CommandKind.STOP,
                                                    correlation_id=env.correlation_id,
                                                    issued_by=session.client_id))
                self.publish_status()
            if ack_sink:
                ack_sink(env.correlation_id,
                         protocol.make_ack_payload(protocol.SUCCESS, None, latched=True))
            return
        if action == "clear":
            if session.role != ROLE_INTRANET:
                if ack_sink:
                    ack_sink(env.correlation_id,
                             protocol.make_ack_payload(protocol.REJECTED, FORBIDDEN,
                                                       "only intranet may clear"))
                return
            self.estop = EStopState()
            self.engine.set_estop(False)
            self.publish_status()
            if ack_sink:
                ack_sink(env.correlation_id,
                         protocol.make_ack_payload(protocol.SUCCESS, None, latched=False))
            return
        if ack_sink:
            ack_sink(env.correlation_id,
                     protocol.make_ack_payload(protocol.REJECTED, BAD_PAYLOAD,
                                               "action must be engage or clear"))

    # --- status ------------------------------------------------------------------

    def _now_i(self) -> int:
        return int(self.timeline.now_ms())

    def _ack_env(self, req: Envelope, status: str, code: str | None, **extra) -> Envelope:
        return Envelope(kind="ACK", topic=req.topic, correlation_id=req.correlation_id,
                        seq=0, ts_ms=self._now_i(),
                        payload=protocol.make_ack_payload(status, code, **extra))

    def _err_env(self, req: Envelope, code: str, detail: str) -> Envelope:
        return Envelope(kind="ERR", topic=req.topic, correlation_id=req.correlation_id,
                        seq=0, ts_ms=self._now_i(),
                        payload={"code": code, "detail": detail})

    def publish_status(self) -> None:
        payload = {
            "t_ms": self._now_i(),
            "estop": {
                "latched": self.estop.latched,
                "engaged_by": self.estop.engaged_by,
                "engaged_at_ms": self.estop.engaged_at_ms,
            },
            "sessions": sorted(
                ({"client_id": s.client_id, "role": s.role,
                  "slot": None if s.slot is None else
                  {"start_ms": s.slot[0], "end_ms": s.slot[1]}}
                 for s in self._sessions.values()), key=lambda s: s["client_id"]),
            "slot_clock_ms": self._now_i(),
        }
        self._pub_seq += 1
        self.broker.publish(Envelope(kind="PUB", topic=STATUS_TOPIC,
                                     correlation_id=f"{self._pub_seq:032x}",
                                     seq=self._pub_seq, ts_ms=self._now_i(), payload=payload))
