// Wire envelopes for the gateway WebSocket bridge: one JSON envelope per
// text message, identical schema to the TCP framing (minus the length prefix).

export const PROTOCOL_VERSION = 1;

export type Kind =
  | "PUB" | "SUB" | "UNSUB" | "CMD" | "ACK" | "ERR" | "AUTH" | "PING" | "PONG";

export interface Envelope {
  version: number;
  kind: Kind;
  topic: string;
  correlation_id: string;
  seq: number;
  ts_ms: number;
  payload: Record<string, unknown>;
}

const HEX = "0123456789abcdef";

export function randomCid(): string {
  let out = "";
  for (let i = 0; i < 32; i++) {
    out += HEX[Math.floor(Math.random() * 16)];
  }
  return out;
}

export function encodeEnvelope(env: Envelope): string {
  // canonical key order, matching the server codec
  return JSON.stringify({
    version: env.version,
    kind: env.kind,
    topic: env.topic,
    correlation_id: env.correlation_id,
    seq: env.seq,
    ts_ms: env.ts_ms,
    payload: env.payload,
  });
}

export function decodeEnvelope(text: string): Envelope {
  const obj = JSON.parse(text);
  for (const key of ["version", "kind", "topic", "correlation_id", "seq", "ts_ms",
                     "payload"]) {
    if (!(key in obj)) {
      throw new Error(`envelope missing field ${key}`);
    }
  }
  return obj as Envelope;
}

export const TELEMETRY_SUBSCRIPTIONS = [
  "/rover/odom",
  "/rover/odom/filtered",
  "/rover/arm/joint_states",
  "/rover/lidar",
  "/rover/sonar",
  "/rover/gripper",
  "/camera/#",
  "/world/tomatoes",
  "/rover/mission/events",
  "/gateway/status",
];
