import { Envelope, decodeEnvelope, encodeEnvelope } from "../src/protocol.js";
import { SocketLike } from "../src/viewmodel.js";

export class FakeSocket implements SocketLike {
  sent: Envelope[] = [];
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;
  closed = false;

  send(data: string): void {
    this.sent.push(decodeEnvelope(data));
  }

  close(): void {
    this.closed = true;
    this.onclose?.();
  }

  open(): void {
    this.onopen?.();
  }

  push(env: Envelope): void {
    this.onmessage?.({ data: encodeEnvelope(env) });
  }

  lastOf(kind: string): Envelope | undefined {
    return [...this.sent].reverse().find((e) => e.kind === kind);
  }
}

let seq = 0;

export function pub(topic: string, payload: Record<string, unknown>): Envelope {
  seq += 1;
  return { version: 1, kind: "PUB", topic, correlation_id: "0".repeat(32),
           seq, ts_ms: seq, payload };
}

export function ack(topic: string, cid: string, payload: Record<string, unknown>): Envelope {
  seq += 1;
  return { version: 1, kind: "ACK", topic, correlation_id: cid, seq, ts_ms: seq, payload };
}

export function authSuccess(role = "intranet", slot: Record<string, number> | null = null) {
  return { status: "SUCCESS", role, client_id: "tester", slot,
           latency_profile: role === "intranet" ? "intranet" : "internet" };
}

export async function waitFor(pred: () => boolean, timeoutMs = 10000,
                              label = "condition"): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (pred()) return;
    await new Promise((r) => setTimeout(r, 25));
  }
  throw new Error(`timed out waiting for ${label}`);
}
