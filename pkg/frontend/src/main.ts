// Entry point: login form, keyboard driving, render loop. Connects back to
// the same origin's /ws endpoint; the token comes from the form, never the URL.

import { bindConsole } from "./render.js";
import { ConsoleViewModel, SocketLike } from "./viewmodel.js";

const DRIVE_SPEED = 0.4;   // m/s per wheel at full deflection
const TURN_SPEED = 0.25;

function wsUrl(): string {
  const loc = window.location;
  const scheme = loc.protocol === "https:" ? "wss:" : "ws:";
  return `${scheme}//${loc.host}/ws`;
}

function main(): void {
  const vm = new ConsoleViewModel((url) => new WebSocket(url) as unknown as SocketLike);
  const ui = bindConsole(document, vm);

  let dirty = true;
  vm.onChange = () => { dirty = true; };
  const loop = () => {
    if (dirty) {
      dirty = false;
      ui.render();
    }
    requestAnimationFrame(loop);
  };
  requestAnimationFrame(loop);
  setInterval(() => { dirty = true; }, 500); // slot countdown / stale badge refresh

  const form = document.getElementById("login-form") as HTMLFormElement;
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const token = (document.getElementById("token-input") as HTMLInputElement).value;
    vm.connect(wsUrl(), token);
  });

  // WASD driving with auto-zero on release, rate-capped in the view model
  const held = new Set<string>();
  const driveTick = () => {
    if (held.size === 0) return;
    let forward = 0;
    let turn = 0;
    if (held.has("w")) forward += 1;
    if (held.has("s")) forward -= 1;
    if (held.has("a")) turn += 1;
    if (held.has("d")) turn -= 1;
    const vl = forward * DRIVE_SPEED - turn * TURN_SPEED;
    const vr = forward * DRIVE_SPEED + turn * TURN_SPEED;
    vm.drive(vl, vr);
  };
  setInterval(driveTick, 100);
  window.addEventListener("keydown", (ev) => {
    const key = ev.key.toLowerCase();
    if ("wasd".includes(key) && !ev.repeat) {
      held.add(key);
      driveTick();
    }
    if (key === " ") vm.engageEstop();
  });
  window.addEventListener("keyup", (ev) => {
    const key = ev.key.toLowerCase();
    if ("wasd".includes(key)) {
      held.delete(key);
      if (held.size === 0) vm.stopDrive();
    }
  });

  // on-screen drive pad
  const pad: Array<[string, number, number]> = [
    ["pad-fwd", DRIVE_SPEED, DRIVE_SPEED],
    ["pad-rev", -DRIVE_SPEED, -DRIVE_SPEED],
    ["pad-left", -TURN_SPEED, TURN_SPEED],
    ["pad-right", TURN_SPEED, -TURN_SPEED],
  ];
  for (const [id, vl, vr] of pad) {
    const btn = document.getElementById(id);
    if (!btn) continue;
    let timer: number | undefined;
    const press = () => {
      vm.drive(vl, vr);
      timer = window.setInterval(() => vm.drive(vl, vr), 100);
    };
    const release = () => {
      if (timer !== undefined) window.clearInterval(timer);
      vm.stopDrive();
    };
    btn.addEventListener("mousedown", press);
    btn.addEventListener("mouseup", release);
    btn.addEventListener("mouseleave", release);
  }
}

main();
