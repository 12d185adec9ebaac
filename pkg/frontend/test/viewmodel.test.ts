import { describe, expect, it } from "vitest";

import { ConsoleViewModel } from "../src/viewmodel.js";
import { FakeSocket, ack, authSuccess, pub } from "./helpers.js";

function connected(role = "intranet", slot: Record<string, number> | null = null,
                   clock?: { t: number }) {
  const sock = new FakeSocket();
  const time = clock ?? { t: 1_000_000 };
  const vm = new ConsoleViewModel(() => sock, () => time.t);
  vm.connect("ws://test/ws", "tok");
  sock.open();
  const auth = sock.lastOf("AUTH")!;
  sock.push(ack("/gateway/auth", auth.correlation_id, authSuccess(role, slot)));
  return { vm, sock, time };
}

describe("connection and auth", () => {
  it("sends AUTH on open and subscribes the telemetry set on success", () => {
    const { vm, sock } = connected();
    expect(vm.connection).toBe("connected");
    expect(vm.role).toBe("intranet");
    const subs = sock.sent.filter((e) => e.kind === "SUB").map((e) => e.topic);
    expect(subs).toContain("/rover/arm/joint_states");
    expect(subs).toContain("/camera/#");
    expect(subs).toContain("/gateway/status");
  });

  it("reports auth rejection", () => {
    const sock = new FakeSocket();
    const vm = new ConsoleViewModel(() => sock);
    vm.connect("ws://test/ws", "bad");
    sock.open();
    const auth = sock.lastOf("AUTH")!;
    sock.push(ack("/gateway/auth", auth.correlation_id,
                  { status: "REJECTED", reason_code: "BAD_TOKEN" }));
    expect(vm.connection).toBe("disconnected");
    expect(vm.authError).toBe("BAD_TOKEN");
  });
});

describe("telemetry ingestion (no client-side simulation)", () => {
  it("mirrors joint, gripper, tomato and status envelopes", () => {
    const { vm, sock } = connected();
    sock.push(pub("/rover/arm/joint_states", { t_ms: 1, q: [0, 0, 0.5, 0, 0, 0],
                                               qd: [0, 0, 0, 0, 0, 0] }));
    expect(vm.joints![2]).toBe(0.5);
    sock.push(pub("/rover/gripper", { t_ms: 1, aperture_m: 0.04, grasped_tomato: 3 }));
    expect(vm.gripperAperture).toBe(0.04);
    expect(vm.graspedTomato).toBe(3);
    sock.push(pub("/world/tomatoes", { t_ms: 1, tomatoes: [
      { id: 1, state: "attached", pluckable: true, center: [1, 2, 0.5] }] }));
    expect(vm.tomatoes[0].state).toBe("attached");
    sock.push(pub("/gateway/status", { t_ms: 1, estop: { latched: true,
      engaged_by: "ops", engaged_at_ms: 5 }, sessions: [], slot_clock_ms: 5 }));
    expect(vm.estopLatched).toBe(true);
    expect(vm.estopBy).toBe("ops");
  });

  it("stores camera frames and detections per camera", () => {
    const { vm, sock } = connected();
    sock.push(pub("/camera/2/frame", { camera_id: 2, tick: 7, bounds: [0, 0, 10, 8],
                                       primitives: [] }));
    expect(vm.frames.get(2)!.tick).toBe(7);
    sock.push(pub("/camera/2/detections", { t_ms: 1, detections: [
      { tomato_id: 4, cam: [0, 0, 2], px: [320, 240] }] }));
    expect(vm.detections.get(2)!.length).toBe(1);
  });

  it("freezes state on disconnect instead of extrapolating", () => {
    const { vm, sock, time } = connected();
    sock.push(pub("/rover/odom/filtered", { t_ms: 1, pose: [1, 2, 0.3] }));
    const before = vm.filteredPose;
    sock.close();
    expect(vm.connection).toBe("disconnected");
    expect(vm.filteredPose).toEqual(before); // frozen, not cleared or advanced
    expect(vm.isStale(time.t)).toBe(true);
  });

  it("flags stale telemetry after the threshold", () => {
    const { vm, sock, time } = connected();
    sock.push(pub("/rover/odom", { t_ms: 1, pose: [0, 0, 0], wheels: [0, 0] }));
    expect(vm.isStale(time.t)).toBe(false);
    expect(vm.isStale(time.t + 2500)).toBe(true);
  });
});

describe("arm command interlock", () => {
  it("allows exactly one outstanding arm command and displays SUPERSEDED", () => {
    const { vm, sock } = connected();
    const cid = vm.jogJoint(2, 30)!;
    expect(cid).toBeTruthy();
    expect(vm.armBusy).toBe(true);
    expect(vm.jogJoint(2, 10)).toBeNull(); // interlocked
    sock.push(ack("/rover/arm/cmd", cid, { status: "SUPERSEDED" }));
    expect(vm.armBusy).toBe(false);
    const entry = vm.log[vm.log.length - 1];
    expect(entry.status).toBe("SUPERSEDED");
    expect(vm.jogJoint(2, 10)).not.toBeNull(); // usable again
  });

  it("records round-trip time on acks", () => {
    const { vm, sock, time } = connected();
    const cid = vm.jogJoint(1, 5)!;
    time.t += 2150;
    sock.push(ack("/rover/arm/cmd", cid, { status: "SUCCESS" }));
    const entry = vm.log[vm.log.length - 1];
    expect(entry.rtt_ms).toBe(2150);
  });
});

describe("drive rate cap", () => {
  it("limits BaseVelocity commands to 10 Hz but always sends the stop", () => {
    const { vm, sock, time } = connected();
    expect(vm.drive(0.3, 0.3)).toBe(true);
    expect(vm.drive(0.3, 0.3)).toBe(false); // same instant: capped
    time.t += 50;
    expect(vm.drive(0.3, 0.3)).toBe(false); // still inside 100 ms
    time.t += 60;
    expect(vm.drive(0.3, 0.3)).toBe(true);
    vm.stopDrive();
    const cmds = sock.sent.filter((e) => e.kind === "CMD" && e.topic === "/rover/cmd_vel");
    expect(cmds.length).toBe(3);
    expect(cmds[cmds.length - 1].payload).toEqual({ stop: true });
  });
});

describe("e-stop and slot behavior", () => {
  it("disables motion controls under e-stop but keeps the e-stop operable", () => {
    const { vm, sock } = connected();
    sock.push(pub("/gateway/status", { t_ms: 1, estop: { latched: true,
      engaged_by: "x", engaged_at_ms: 1 }, sessions: [], slot_clock_ms: 1 }));
    expect(vm.controlsEnabled()).toBe(false);
    expect(vm.jogJoint(0, 5)).toBeNull();
    expect(vm.drive(0.1, 0.1)).toBe(false);
    expect(vm.engageEstop()).not.toBeNull(); // always operable
    expect(vm.clearEstop()).not.toBeNull();
  });

  it("grays out commands after slot expiry while telemetry continues", () => {
    const clock = { t: 1_000_000 };
    const { vm, sock, time } = connected("internet",
      { start_ms: clock.t - 1000, end_ms: clock.t + 1000 }, clock);
    expect(vm.controlsEnabled()).toBe(true);
    time.t += 5000; // slot over
    expect(vm.slotExpired()).toBe(true);
    expect(vm.controlsEnabled()).toBe(false);
    expect(vm.jogJoint(0, 5)).toBeNull();
    sock.push(pub("/rover/odom", { t_ms: 9, pose: [4, 4, 0], wheels: [0, 0] }));
    expect(vm.odom).toEqual([4, 4, 0]); // telemetry still flows
  });
});
