// DOM bindings and canvas drawing. Pure view: reads the view model, writes
// the document. Canvas work degrades gracefully when no 2D context exists
// (headless test DOMs).

import { ConsoleViewModel, TomatoRow } from "./viewmodel.js";

const JOINT_NAMES = ["base", "shoulder", "elbow", "wrist1", "wrist2", "wrist3"];

export interface ConsoleDom {
  render(): void;
}

function el<T extends HTMLElement>(doc: Document, id: string): T {
  const node = doc.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function fmt(x: number, digits = 2): string {
  return x.toFixed(digits);
}

export function bindConsole(doc: Document, vm: ConsoleViewModel): ConsoleDom {
  const connState = el<HTMLElement>(doc, "conn-state");
  const roleBadge = el<HTMLElement>(doc, "role-badge");
  const slotBadge = el<HTMLElement>(doc, "slot-badge");
  const staleBadge = el<HTMLElement>(doc, "stale-badge");
  const estopButton = el<HTMLButtonElement>(doc, "estop-button");
  const estopClear = el<HTMLButtonElement>(doc, "estop-clear");
  const estopState = el<HTMLElement>(doc, "estop-state");
  const jointTable = el<HTMLElement>(doc, "joint-rows");
  const jogDeg = el<HTMLInputElement>(doc, "jog-degrees");
  const gripperInput = el<HTMLInputElement>(doc, "gripper-aperture");
  const gripperSet = el<HTMLButtonElement>(doc, "gripper-set");
  const gripperState = el<HTMLElement>(doc, "gripper-state");
  const pluckForce = el<HTMLInputElement>(doc, "pluck-force");
  const pluckButton = el<HTMLButtonElement>(doc, "pluck-button");
  const tomatoRows = el<HTMLElement>(doc, "tomato-rows");
  const logList = el<HTMLElement>(doc, "ack-log");
  const mapCanvas = el<HTMLCanvasElement>(doc, "map-canvas");
  const missionInput = el<HTMLInputElement>(doc, "mission-markers");
  const missionStart = el<HTMLButtonElement>(doc, "mission-start");
  const missionResume = el<HTMLButtonElement>(doc, "mission-resume");
  const cameraCanvases: HTMLCanvasElement[] = [1, 2, 3, 4].map(
    (i) => el<HTMLCanvasElement>(doc, `camera-${i}`));

  // per-joint jog buttons built once
  const jogButtons: HTMLButtonElement[] = [];
  JOINT_NAMES.forEach((name, j) => {
    const row = doc.createElement("tr");
    const label = doc.createElement("td");
    label.textContent = name;
    const value = doc.createElement("td");
    value.id = `joint-val-${j}`;
    value.textContent = "-";
    const minus = doc.createElement("button");
    minus.textContent = "-";
    minus.id = `jog-minus-${j}`;
    const plus = doc.createElement("button");
    plus.textContent = "+";
    plus.id = `jog-plus-${j}`;
    minus.addEventListener("click", () => vm.jogJoint(j, -Math.abs(Number(jogDeg.value) || 0)));
    plus.addEventListener("click", () => vm.jogJoint(j, Math.abs(Number(jogDeg.value) || 0)));
    const cell = doc.createElement("td");
    cell.appendChild(minus);
    cell.appendChild(plus);
    row.appendChild(label);
    row.appendChild(value);
    row.appendChild(cell);
    jointTable.appendChild(row);
    jogButtons.push(minus, plus);
  });

  // click a tomato in a camera panel (or the map) to select it for plucking
  function sceneClick(canvas: HTMLCanvasElement, frameId: number | null,
                      ev: MouseEvent): void {
    const frames = frameId === null
      ? [...vm.frames.values()]
      : [vm.frames.get(frameId)].filter((f) => f !== undefined);
    if (!frames.length) return;
    const b = frames[0]!.bounds;
    const pad = 8;
    const s = Math.min((canvas.width - 2 * pad) / (b[2] - b[0]),
                       (canvas.height - 2 * pad) / (b[3] - b[1]));
    const rect = canvas.getBoundingClientRect ? canvas.getBoundingClientRect()
      : { left: 0, top: 0 };
    const wx = b[0] + (ev.clientX - rect.left - pad) / s;
    const wy = b[1] + (canvas.height - (ev.clientY - rect.top) - pad) / s;
    let best: { id: number; d: number } | null = null;
    for (const frame of frames) {
      for (const prim of frame!.primitives) {
        const p = prim as Record<string, never>;
        if (String(p["tag"]) !== "tomato") continue;
        const c: number[] = p["center"];
        const d = Math.hypot(c[0] - wx, c[1] - wy);
        if (d < 0.25 && (best === null || d < best.d)) {
          best = { id: Number(p["id"]), d };
        }
      }
    }
    if (best) vm.selectTomato(best.id);
  }

  mapCanvas.addEventListener("click", (ev) => sceneClick(mapCanvas, null, ev as MouseEvent));
  cameraCanvases.forEach((canvas, i) =>
    canvas.addEventListener("click", (ev) => sceneClick(canvas, i + 1, ev as MouseEvent)));

  estopButton.addEventListener("click", () => vm.engageEstop());
  estopClear.addEventListener("click", () => vm.clearEstop());
  gripperSet.addEventListener("click", () => vm.setGripper(Number(gripperInput.value)));
  pluckButton.addEventListener("click", () => vm.pluck(Number(pluckForce.value)));
  missionStart.addEventListener("click", () => {
    const markers = missionInput.value.split(",").map((s) => parseInt(s.trim(), 10))
      .filter((n) => Number.isFinite(n));
    vm.startMission(markers);
  });
  missionResume.addEventListener("click", () => vm.resumeMission());

  function drawScene(canvas: HTMLCanvasElement, vmRef: ConsoleViewModel,
                     frameId: number | null): void {
    const ctx = canvas.getContext ? canvas.getContext("2d") : null;
    if (!ctx) return;
    const frames = frameId === null
      ? [...vmRef.frames.values()]
      : [vmRef.frames.get(frameId)].filter((f) => f !== undefined);
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    if (!frames.length) return;
    const b = frames[0]!.bounds;
    const pad = 8;
    const sx = (canvas.width - 2 * pad) / (b[2] - b[0]);
    const sy = (canvas.height - 2 * pad) / (b[3] - b[1]);
    const s = Math.min(sx, sy);
    const X = (x: number) => pad + (x - b[0]) * s;
    const Y = (y: number) => canvas.height - pad - (y - b[1]) * s;
    const seen = new Set<string>();
    for (const frame of frames) {
      for (const prim of frame!.primitives) {
        const key = JSON.stringify(prim);
        if (frameId === null) {
          if (seen.has(key)) continue;
          seen.add(key);
        }
        const p = prim as Record<string, never>;
        ctx.strokeStyle = ctx.fillStyle = String(p["color"] ?? "#888");
        const kind = String(p["kind"]);
        if (kind === "polyline") {
          const pts: number[][] = p["points"];
          ctx.beginPath();
          ctx.moveTo(X(pts[0][0]), Y(pts[0][1]));
          for (const q of pts.slice(1)) ctx.lineTo(X(q[0]), Y(q[1]));
          ctx.stroke();
        } else if (kind === "polygon") {
          const pts: number[][] = p["points"];
          ctx.beginPath();
          ctx.moveTo(X(pts[0][0]), Y(pts[0][1]));
          for (const q of pts.slice(1)) ctx.lineTo(X(q[0]), Y(q[1]));
          ctx.closePath();
          ctx.fill();
        } else if (kind === "rect") {
          const c: number[] = p["center"];
          const size: number[] = p["size"];
          ctx.fillRect(X(c[0] - size[0] / 2), Y(c[1] + size[1] / 2),
                       size[0] * s, size[1] * s);
        } else if (kind === "circle") {
          const c: number[] = p["center"];
          ctx.beginPath();
          ctx.arc(X(c[0]), Y(c[1]), Math.max(2, Number(p["radius"]) * s), 0, 2 * Math.PI);
          ctx.fill();
        } else if (kind === "marker") {
          const c: number[] = p["center"];
          ctx.fillRect(X(c[0]) - 3, Y(c[1]) - 3, 6, 6);
        }
      }
    }
    // lidar overlay + filtered-pose marker on the map panel only
    if (frameId === null && vmRef.lidar && vmRef.filteredPose) {
      const [px, py, pth] = vmRef.filteredPose;
      ctx.fillStyle = "#26c6da";
      const { angle_min, angle_step, ranges } = vmRef.lidar;
      for (let i = 0; i < ranges.length; i += 4) {
        const a = pth + angle_min + i * angle_step;
        const r = ranges[i];
        if (r >= 9.99) continue;
        ctx.fillRect(X(px + r * Math.cos(a)) - 1, Y(py + r * Math.sin(a)) - 1, 2, 2);
      }
      ctx.strokeStyle = "#ff7043";
      ctx.beginPath();
      ctx.moveTo(X(px), Y(py));
      ctx.lineTo(X(px + 0.5 * Math.cos(pth)), Y(py + 0.5 * Math.sin(pth)));
      ctx.stroke();
    }
  }

  function renderTomatoes(rows: TomatoRow[]): void {
    tomatoRows.textContent = "";
    for (const t of rows) {
      const tr = doc.createElement("tr");
      tr.id = `tomato-${t.id}`;
      if (vm.selectedTomato === t.id) tr.className = "selected";
      const cells = [String(t.id), t.state, t.pluckable ? "yes" : "no"];
      for (const text of cells) {
        const td = doc.createElement("td");
        td.textContent = text;
        tr.appendChild(td);
      }
      tr.addEventListener("click", () => vm.selectTomato(t.id));
      tomatoRows.appendChild(tr);
    }
  }

  function render(): void {
    const now = vm.timeNow();
    connState.textContent = vm.connection + (vm.authError ? ` (${vm.authError})` : "");
    connState.className = vm.connection;
    roleBadge.textContent = vm.role ?? "-";
    const rem = vm.slotRemainingMs(now);
    slotBadge.textContent = vm.slot === null ? "slot: unrestricted"
      : rem! <= 0 ? "slot: EXPIRED" : `slot: ${Math.ceil(rem! / 1000)}s left`;
    staleBadge.hidden = !vm.isStale(now);
    estopState.textContent = vm.estopLatched
      ? `ESTOPPED by ${vm.estopBy ?? "?"}` : "clear";
    estopState.className = vm.estopLatched ? "latched" : "clear";
    // the e-stop engage button is never disabled while a session exists
    estopButton.disabled = vm.connection !== "connected";
    estopClear.disabled = vm.connection !== "connected" || vm.role !== "intranet";

    const motion = vm.controlsEnabled(now);
    for (const b of jogButtons) b.disabled = !motion || vm.armBusy;
    gripperSet.disabled = !motion;
    pluckButton.disabled = !motion;
    missionStart.disabled = !motion;
    missionResume.disabled = !motion;

    if (vm.joints) {
      vm.joints.forEach((q, j) => {
        const cell = doc.getElementById(`joint-val-${j}`);
        if (cell) cell.textContent = `${fmt((q * 180) / Math.PI, 1)} deg`;
      });
    }
    gripperState.textContent = vm.gripperAperture === null ? "-"
      : `${fmt(vm.gripperAperture * 1000, 0)} mm` +
        (vm.graspedTomato !== null ? ` holding #${vm.graspedTomato}` : "");

    renderTomatoes(vm.tomatoes);

    logList.textContent = "";
    for (const entry of vm.log.slice(-12).reverse()) {
      const li = doc.createElement("li");
      const rtt = entry.rtt_ms === null ? "" : ` ${fmt(entry.rtt_ms, 0)} ms`;
      li.textContent = `${entry.topic} ${entry.status}` +
        (entry.reason ? ` (${entry.reason})` : "") + rtt;
      li.className = entry.status === "SUPERSEDED" ? "superseded"
        : entry.status.startsWith("REJECTED") || entry.status.startsWith("ERR")
          ? "rejected" : "ok";
      logList.appendChild(li);
    }

    drawScene(mapCanvas, vm, null);
    cameraCanvases.forEach((canvas, i) => drawScene(canvas, vm, i + 1));
  }

  return { render };
}
