// @vitest-environment happy-dom
// Headless DOM test: binds the real index.html markup to the view model and
// checks that telemetry drives the readouts and control gating.

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { beforeEach, describe, expect, it } from "vitest";

import { bindConsole } from "../src/render.js";
import { ConsoleViewModel } from "../src/viewmodel.js";
import { FakeSocket, ack, authSuccess, pub } from "./helpers.js";

const here = dirname(fileURLToPath(import.meta.url));

function loadMarkup(): void {
  const html = readFileSync(join(here, "..", "index.html"), "utf-8");
  const body = html.substring(html.indexOf("<body>") + 6, html.indexOf("</body>"))
    .replace(/<script[\s\S]*?<\/script>/g, "");
  document.body.innerHTML = body;
}

function setup() {
  loadMarkup();
  const sock = new FakeSocket();
  const time = { t: 1_000_000 };
  const vm = new ConsoleViewModel(() => sock, () => time.t);
  const ui = bindConsole(document, vm);
  vm.connect("ws://test/ws", "tok");
  sock.open();
  const auth = sock.lastOf("AUTH")!;
  sock.push(ack("/gateway/auth", auth.correlation_id, authSuccess()));
  return { vm, sock, ui, time };
}

describe("console DOM", () => {
  beforeEach(() => {
    document.body.innerHTML = "";
  });

  it("renders connection, role, and joint readouts from telemetry", () => {
    const { sock, ui } = setup();
    sock.push(pub("/rover/arm/joint_states", {
      t_ms: 1, q: [0, 0, Math.PI / 6, 0, 0, 0], qd: [0, 0, 0, 0, 0, 0] }));
    ui.render();
    expect(document.getElementById("conn-state")!.textContent).toBe("connected");
    expect(document.getElementById("role-badge")!.textContent).toBe("intranet");
    expect(document.getElementById("joint-val-2")!.textContent).toBe("30.0 deg");
  });

  it("jog buttons send arm commands and disable while one is outstanding", () => {
    const { vm, sock, ui } = setup();
    ui.render();
    const plus = document.getElementById("jog-plus-2") as HTMLButtonElement;
    expect(plus.disabled).toBe(false);
    (document.getElementById("jog-degrees") as HTMLInputElement).value = "30";
    plus.click();
    const cmd = sock.lastOf("CMD")!;
    expect(cmd.topic).toBe("/rover/arm/cmd");
    expect(cmd.payload).toEqual({ joint: 2, delta_deg: 30 });
    ui.render();
    expect(plus.disabled).toBe(true); // interlock until the ack lands
    sock.push(ack("/rover/arm/cmd", cmd.correlation_id, { status: "SUCCESS" }));
    ui.render();
    expect(plus.disabled).toBe(false);
    const log = document.getElementById("ack-log")!;
    expect(log.textContent).toContain("SUCCESS");
  });

  it("e-stop latch disables motion controls but never the e-stop button", () => {
    const { sock, ui } = setup();
    sock.push(pub("/gateway/status", { t_ms: 1, estop: { latched: true,
      engaged_by: "remote1", engaged_at_ms: 2 }, sessions: [], slot_clock_ms: 2 }));
    ui.render();
    expect(document.getElementById("estop-state")!.textContent).toContain("ESTOPPED");
    expect((document.getElementById("jog-plus-0") as HTMLButtonElement).disabled).toBe(true);
    expect((document.getElementById("pluck-button") as HTMLButtonElement).disabled).toBe(true);
    expect((document.getElementById("estop-button") as HTMLButtonElement).disabled)
      .toBe(false);
  });

  it("tomato table reflects /world/tomatoes and supports selection", () => {
    const { vm, sock, ui } = setup();
    sock.push(pub("/world/tomatoes", { t_ms: 1, tomatoes: [
      { id: 1, state: "attached", pluckable: true, center: [2, 2, 0.5] },
      { id: 2, state: "collected", pluckable: true, center: [0.4, 0, 0.3] }] }));
    ui.render();
    const rows = document.getElementById("tomato-rows")!;
    expect(rows.children.length).toBe(2);
    expect(rows.children[1].textContent).toContain("collected");
    (rows.children[0] as HTMLElement).click();
    expect(vm.selectedTomato).toBe(1);
  });

  it("shows the stale badge when telemetry stops", () => {
    const { sock, ui, time } = setup();
    sock.push(pub("/rover/odom", { t_ms: 1, pose: [0, 0, 0], wheels: [0, 0] }));
    ui.render();
    const badge = document.getElementById("stale-badge") as HTMLElement;
    expect(badge.hidden).toBe(true);
    time.t += 60_000;
    ui.render();
    expect(badge.hidden).toBe(false);
  });

  it("selects a tomato by clicking it in a camera panel", () => {
    const { vm, sock, ui } = setup();
    sock.push(pub("/camera/1/frame", { camera_id: 1, tick: 3, bounds: [0, 0, 10, 8],
      primitives: [{ kind: "circle", center: [2.1, 2.1], radius: 0.035,
                     color: "#e53935", tag: "tomato", id: 5, state: "attached" }] }));
    ui.render();
    const canvas = document.getElementById("camera-1") as HTMLCanvasElement;
    // world (2.1, 2.1) with bounds [0,0,10,8], pad 8, scale 28 px/m
    const click = new MouseEvent("click", { clientX: 8 + 2.1 * 28,
                                            clientY: 240 - 8 - 2.1 * 28 });
    canvas.dispatchEvent(click);
    expect(vm.selectedTomato).toBe(5);
  });

  it("marks SUPERSEDED acks distinctly in the log", () => {
    const { vm, sock, ui } = setup();
    const cid = vm.jogJoint(3, 5)!;
    sock.push(ack("/rover/arm/cmd", cid, { status: "SUPERSEDED" }));
    ui.render();
    const items = document.querySelectorAll("#ack-log li.superseded");
    expect(items.length).toBe(1);
  });
});
