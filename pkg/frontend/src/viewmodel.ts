// Console view model: consumes gateway envelopes, tracks pending commands,
// and enforces the UI-level rules (single outstanding arm command, drive rate
// cap, e-stop mirroring). Every rendered value originates from telemetry —
// nothing here simulates or extrapolates robot state.

import {
  Envelope, Kind, PROTOCOL_VERSION, TELEMETRY_SUBSCRIPTIONS, decodeEnvelope,
  encodeEnvelope, randomCid,
} from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export type ConnectionState = "disconnected" | "connecting" | "connected";

export interface Slot {
  start_ms: number;
  end_ms: number;
}

export interface LogEntry {
  at_ms: number;
  kind: "ack" | "event" | "info";
  topic: string;
  status: string;      // SUCCESS | REJECTED | FAILURE | SUPERSEDED | event name
  reason: string;
  rtt_ms: number | null;
}

export interface CameraFrame {
  camera_id: number;
  tick: number;
  bounds: number[];
  primitives: Record<string, unknown>[];
}

export interface TomatoRow {
  id: number;
  state: string;
  pluckable: boolean;
  center: number[];
}

interface Pending {
  topic: string;
  sentAt: number;
  isArm: boolean;
}

const STALE_AFTER_MS = 2000;
const DRIVE_MIN_INTERVAL_MS = 100; // 10 Hz cap on BaseVelocity commands

export class ConsoleViewModel {
  connection: ConnectionState = "disconnected";
  role: string | null = null;
  clientId: string | null = null;
  slot: Slot | null = null;
  authError: string | null = null;
  estopLatched = false;
  estopBy: string | null = null;

  odom: number[] | null = null;          // raw odometry pose
  filteredPose: number[] | null = null;  // what the map marker uses
  wheels: number[] | null = null;
  joints: number[] | null = null;
  jointVel: number[] | null = null;
  gripperAperture: number | null = null;
  graspedTomato: number | null = null;
  lidar: { angle_min: number; angle_step: number; ranges: number[] } | null = null;
  sonar: number[] | null = null;
  frames = new Map<number, CameraFrame>();
  detections = new Map<number, Record<string, unknown>[]>();
  tomatoes: TomatoRow[] = [];
  log: LogEntry[] = [];
  selectedTomato: number | null = null;

  armBusy = false;                      // single-outstanding arm command interlock
  lastTelemetryAt: number | null = null;

  onChange: (() => void) | null = null;

  private socket: SocketLike | null = null;
  private seq = 0;
  private pending = new Map<string, Pending>();
  private lastDriveAt = -Infinity;
  private armCid: string | null = null;

  constructor(private factory: SocketFactory, private now: () => number = () => Date.now()) {}

  /** The model's clock; the renderer uses it so tests can inject time. */
  timeNow(): number {
    return this.now();
  }

  // --- connection -------------------------------------------------------------

  connect(url: string, token: string): void {
    this.connection = "connecting";
    this.authError = null;
    const sock = this.factory(url);
    this.socket = sock;
    sock.onopen = () => {
      this.sendEnvelope("AUTH", "/gateway/auth", { token });
      this.changed();
    };
    sock.onmessage = (ev) => {
      try {
        this.handleEnvelope(decodeEnvelope(String(ev.data)));
      } catch {
        this.pushLog("info", "/sys/protocol", "MALFORMED", "undecodable envelope", null);
      }
      this.changed();
    };
    sock.onclose = () => {
      // freeze all panels as they are; the stale indicator takes over
      this.connection = "disconnected";
      this.armBusy = false;
      this.changed();
    };
    sock.onerror = () => undefined;
    this.changed();
  }

  close(): void {
    this.socket?.close();
  }

  isStale(nowMs?: number): boolean {
    const t = nowMs ?? this.now();
    if (this.connection !== "connected") return true;
    return this.lastTelemetryAt !== null && t - this.lastTelemetryAt > STALE_AFTER_MS;
  }

  slotRemainingMs(nowMs?: number): number | null {
    if (!this.slot) return null;
    return this.slot.end_ms - (nowMs ?? this.now());
  }

  slotExpired(nowMs?: number): boolean {
    const rem = this.slotRemainingMs(nowMs);
    return rem !== null && rem <= 0;
  }

  /** Motion controls usable? The e-stop button itself never consults this. */
  controlsEnabled(nowMs?: number): boolean {
    return this.connection === "connected" && !this.estopLatched && !this.slotExpired(nowMs);
  }

  // --- outgoing commands ---------------------------------------------------------

  private sendEnvelope(kind: Kind, topic: string, payload: Record<string, unknown>,
                       cid?: string): string {
    const id = cid ?? randomCid();
    this.seq += 1;
    const env: Envelope = {
      version: PROTOCOL_VERSION, kind, topic, correlation_id: id,
      seq: this.seq, ts_ms: Math.round(this.now()), payload,
    };
    this.socket?.send(encodeEnvelope(env));
    return id;
  }

  private command(topic: string, payload: Record<string, unknown>, isArm = false): string {
    const cid = randomCid();
    this.pending.set(cid, { topic, sentAt: this.now(), isArm });
    this.sendEnvelope("CMD", topic, payload, cid);
    return cid;
  }

  jogJoint(index: number, deltaDeg: number): string | null {
    if (!this.controlsEnabled() || this.armBusy) return null;
    this.armBusy = true;
    const cid = this.command("/rover/arm/cmd", { joint: index, delta_deg: deltaDeg }, true);
    this.armCid = cid;
    this.changed();
    return cid;
  }

  drive(vLeft: number, vRight: number): boolean {
    if (!this.controlsEnabled()) return false;
    const t = this.now();
    if (t - this.lastDriveAt < DRIVE_MIN_INTERVAL_MS) return false;
    this.lastDriveAt = t;
    this.command("/rover/cmd_vel", { v_left: vLeft, v_right: vRight });
    return true;
  }

  /** Auto-zero on key release: always goes out, independent of the rate cap. */
  stopDrive(): void {
    if (this.connection !== "connected") return;
    this.command("/rover/cmd_vel", { stop: true });
  }

  setGripper(apertureM: number): string | null {
    if (!this.controlsEnabled()) return null;
    return this.command("/rover/gripper/cmd", { aperture_m: apertureM });
  }

  pluck(forceN: number): string | null {
    if (!this.controlsEnabled()) return null;
    return this.command("/rover/pluck/cmd", { force_n: forceN });
  }

  startMission(markers: number[]): string | null {
    if (!this.controlsEnabled()) return null;
    return this.command("/rover/mission/cmd", { action: "start", markers });
  }

  resumeMission(): string | null {
    if (!this.controlsEnabled()) return null;
    return this.command("/rover/mission/cmd", { action: "resume" });
  }

  /** Always operable while connected, regardless of any other UI state. */
  engageEstop(): string | null {
    if (this.connection !== "connected") return null;
    return this.command("/gateway/estop", { action: "engage" });
  }

  clearEstop(): string | null {
    if (this.connection !== "connected") return null;
    return this.command("/gateway/estop", { action: "clear" });
  }

  selectTomato(id: number | null): void {
    this.selectedTomato = id;
    this.changed();
  }

  // --- incoming ---------------------------------------------------------------------

  private handleEnvelope(env: Envelope): void {
    if (env.kind === "ACK" || env.kind === "ERR") {
      this.handleAck(env);
      return;
    }
    if (env.kind !== "PUB") return;
    this.lastTelemetryAt = this.now();
    const p = env.payload as Record<string, never>;
    switch (true) {
      case env.topic === "/rover/odom":
        this.odom = p["pose"];
        this.wheels = p["wheels"];
        break;
      case env.topic === "/rover/odom/filtered":
        this.filteredPose = p["pose"];
        break;
      case env.topic === "/rover/arm/joint_states":
        this.joints = p["q"];
        this.jointVel = p["qd"];
        break;
      case env.topic === "/rover/gripper":
        this.gripperAperture = p["aperture_m"];
        this.graspedTomato = p["grasped_tomato"];
        break;
      case env.topic === "/rover/lidar":
        this.lidar = {
          angle_min: p["angle_min"], angle_step: p["angle_step"], ranges: p["ranges"],
        };
        break;
      case env.topic === "/rover/sonar":
        this.sonar = p["ranges"];
        break;
      case env.topic === "/world/tomatoes":
        this.tomatoes = p["tomatoes"];
        break;
      case env.topic === "/rover/mission/events": {
        const name = String((p as Record<string, unknown>)["event"]);
        this.pushLog("event", env.topic, name,
                     JSON.stringify({ ...p, event: undefined, t_ms: undefined }), null);
        break;
      }
      case env.topic === "/gateway/status": {
        const estop = p["estop"] as { latched: boolean; engaged_by: string | null };
        this.estopLatched = Boolean(estop?.latched);
        this.estopBy = estop?.engaged_by ?? null;
        break;
      }
      case /^\/camera\/\d+\/frame$/.test(env.topic): {
        const frame = env.payload as unknown as CameraFrame;
        this.frames.set(frame.camera_id, frame);
        break;
      }
      case /^\/camera\/\d+\/detections$/.test(env.topic): {
        const id = Number(env.topic.split("/")[2]);
        this.detections.set(id, p["detections"]);
        break;
      }
    }
  }

  private handleAck(env: Envelope): void {
    const payload = env.payload as Record<string, unknown>;
    // AUTH reply
    if (env.topic === "/gateway/auth") {
      if (payload["status"] === "SUCCESS") {
        this.connection = "connected";
        this.role = String(payload["role"]);
        this.clientId = String(payload["client_id"]);
        this.slot = (payload["slot"] as Slot | null) ?? null;
        for (const pattern of TELEMETRY_SUBSCRIPTIONS) {
          this.sendEnvelope("SUB", pattern, {});
        }
        this.pushLog("info", env.topic, "CONNECTED", `role=${this.role}`, null);
      } else {
        this.connection = "disconnected";
        this.authError = String(payload["reason_code"] ?? "REJECTED");
        this.pushLog("info", env.topic, "AUTH_FAILED", this.authError, null);
      }
      return;
    }
    const pending = this.pending.get(env.correlation_id);
    const rtt = pending ? this.now() - pending.sentAt : null;
    if (pending) this.pending.delete(env.correlation_id);
    if (this.armCid === env.correlation_id) {
      this.armBusy = false;
      this.armCid = null;
    }
    const status = env.kind === "ERR"
      ? `ERR:${String(payload["code"] ?? "?")}`
      : String(payload["status"] ?? "?");
    const reason = String(payload["reason_code"] ?? payload["detail"] ?? "");
    this.pushLog("ack", env.topic, status, reason, rtt);
  }

  private pushLog(kind: LogEntry["kind"], topic: string, status: string, reason: string,
                  rtt: number | null): void {
    this.log.push({ at_ms: this.now(), kind, topic, status, reason, rtt_ms: rtt });
    if (this.log.length > 200) this.log.splice(0, this.log.length - 200);
  }

  private changed(): void {
    this.onChange?.();
  }
}
