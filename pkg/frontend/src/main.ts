// Page wiring: canvas renderer, mouse-as-gaze sender, and demo controls.

import {
  Camera,
  EYE_HEIGHT,
  cursorToDir,
  fromTuple,
  lagCamera,
  projectPoint,
  toTuple,
  v3,
} from "./math.js";
import { RateLimiter, Session } from "./net.js";
import { decodeServer } from "./protocol.js";
import {
  ViewState,
  applyMessage,
  beginEpisode,
  episodeActive,
  initialState,
} from "./state.js";

const APEX = v3(0, EYE_HEIGHT, 0);
const MOUSE_YAW_RANGE_DEG = 60; // cursor at the edge steers the camera this far

const canvas = document.getElementById("scene") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const banner = document.getElementById("banner")!;
const hudPhase = document.getElementById("hud-phase")!;
const hudStep = document.getElementById("hud-step")!;
const hudTi = document.getElementById("hud-ti")!;
const hudSession = document.getElementById("hud-session")!;
const hudError = document.getElementById("hud-error")!;
const poiSelect = document.getElementById("poi-select") as HTMLSelectElement;
const modeSelect = document.getElementById("mode-select") as HTMLSelectElement;
const attractBtn = document.getElementById("btn-attract") as HTMLButtonElement;
const shiftBtn = document.getElementById("btn-shift") as HTMLButtonElement;

const state: ViewState = initialState();
let camera: Camera = { yawDeg: 0, pitchDeg: 0 };
let cursor = { x: canvas.width / 2, y: canvas.height / 2 };
let lastFrameMs: number | null = null;
const gazeGate = new RateLimiter();

const wsUrl = `ws://${location.host}/ws`;
const session = new Session(wsUrl, {
  onLine(line) {
    const msg = decodeServer(line);
    if (msg) {
      applyMessage(state, msg);
      syncControls();
    }
  },
  onStatus(connected) {
    banner.classList.toggle("hidden", connected);
  },
});
session.connect();

canvas.addEventListener("mousemove", (ev) => {
  const rect = canvas.getBoundingClientRect();
  cursor = {
    x: ((ev.clientX - rect.left) / rect.width) * canvas.width,
    y: ((ev.clientY - rect.top) / rect.height) * canvas.height,
  };
});

attractBtn.addEventListener("click", () => {
  if (!poiSelect.value) return;
  beginEpisode(state);
  session.send({
    type: "CMD_ATTRACT",
    poi_id: poiSelect.value,
    mode: modeSelect.value as "confirmation_gated" | "scheduled",
  });
});

shiftBtn.addEventListener("click", () => {
  if (!poiSelect.value) return;
  beginEpisode(state);
  session.send({ type: "CMD_SHIFT", poi_id: poiSelect.value });
});

function syncControls(): void {
  const busy = episodeActive(state);
  attractBtn.disabled = busy || !session.connected;
  shiftBtn.disabled = busy || !session.connected;
  const have = new Set(Array.from(poiSelect.options).map((o) => o.value));
  for (const poi of state.pois.values()) {
    if (!have.has(poi.poiId)) {
      const opt = document.createElement("option");
      opt.value = poi.poiId;
      opt.textContent = `${poi.label} (${poi.poiId})`;
      poiSelect.appendChild(opt);
    }
  }
}

function gazeDir() {
  return cursorToDir(camera, cursor.x, cursor.y, canvas.width, canvas.height);
}

function markerUnderCursor(): number | null {
  const dir = gazeDir();
  for (const sprite of state.markers.values()) {
    const d = fromTuple(sprite.pos);
    const rel = v3(d.x - APEX.x, d.y - APEX.y, d.z - APEX.z);
    const range = Math.hypot(rel.x, rel.y, rel.z);
    const along = dir.x * rel.x + dir.y * rel.y + dir.z * rel.z;
    if (along <= 0) continue;
    const miss = Math.sqrt(Math.max(0, range * range - along * along));
    // Generous pick radius: the marker's largest half extent.
    if (miss <= Math.max(...sprite.half)) return sprite.markerId;
  }
  return null;
}

let hoverMarker: number | null = null;
let hoverSinceMs = 0;

function drawGround(): void {
  ctx.strokeStyle = "#1d3040";
  ctx.lineWidth = 1;
  for (let gx = -8; gx <= 8; gx += 1) {
    for (const [a, b] of [
      [v3(gx, 0, 0.5), v3(gx, 0, 12)],
      [v3(-8, 0, 0.5 + (gx + 8) * 0.72), v3(8, 0, 0.5 + (gx + 8) * 0.72)],
    ]) {
      const pa = projectPoint(camera, APEX, a, canvas.width, canvas.height);
      const pb = projectPoint(camera, APEX, b, canvas.width, canvas.height);
      if (pa && pb) {
        ctx.beginPath();
        ctx.moveTo(pa.x, pa.y);
        ctx.lineTo(pb.x, pb.y);
        ctx.stroke();
      }
    }
  }
}

function drawMarkers(nowMs: number): void {
  const colors = { guide: "#38bdf8", pulse: "#f472b6", final: "#4ade80" };
  for (const sprite of state.markers.values()) {
    const p = projectPoint(
      camera,
      APEX,
      fromTuple(sprite.pos),
      canvas.width,
      canvas.height,
    );
    if (!p) continue;
    const size = Math.max(10, (sprite.half[0] / p.range) * 900);
    const pulse =
      sprite.kind === "pulse" ? 1 + 0.2 * Math.sin(nowMs / 90) : 1;
    ctx.strokeStyle = colors[sprite.kind];
    ctx.lineWidth = sprite.markerId === hoverMarker ? 4 : 2;
    ctx.strokeRect(
      p.x - size * pulse,
      p.y - size * pulse,
      2 * size * pulse,
      2 * size * pulse,
    );
    if (sprite.confirmed || sprite.markerId === hoverMarker) {
      // Dwell progress ring; completion truth still comes from the engine.
      const frac = sprite.confirmed
        ? 1
        : Math.min(1, (nowMs - hoverSinceMs) / 250);
      ctx.beginPath();
      ctx.arc(p.x, p.y, size * 1.5, -Math.PI / 2, -Math.PI / 2 + frac * 2 * Math.PI);
      ctx.strokeStyle = sprite.confirmed ? "#4ade80" : "#facc15";
      ctx.lineWidth = 3;
      ctx.stroke();
    }
  }
}

function drawReveal(): void {
  if (!state.revealPoiId) return;
  const poi = state.pois.get(state.revealPoiId);
  if (!poi) return;
  const p = projectPoint(
    camera,
    APEX,
    fromTuple(poi.pos),
    canvas.width,
    canvas.height,
  );
  if (!p) return;
  ctx.fillStyle = "#4ade80";
  ctx.beginPath();
  ctx.arc(p.x, p.y, 14, 0, 2 * Math.PI);
  ctx.fill();
  ctx.fillStyle = "#e2e8f0";
  ctx.font = "14px sans-serif";
  ctx.fillText(poi.label, p.x + 18, p.y + 5);
}

function drawHud(): void {
  hudPhase.textContent = state.hud.phase;
  hudStep.textContent = String(state.hud.stepCount);
  hudTi.textContent = state.hud.tiHistoryUs
    .map((t) => `${(t / 1000).toFixed(0)}ms`)
    .join(" ");
  hudSession.textContent = state.hud.sessionId ?? "-";
  hudError.textContent = state.hud.lastError ?? "";
}

function frame(nowMs: number): void {
  const dtMs = lastFrameMs === null ? 16 : nowMs - lastFrameMs;
  lastFrameMs = nowMs;

  // The camera trails the cursor like a lagging head.
  const target: Camera = {
    yawDeg: ((cursor.x / canvas.width) * 2 - 1) * MOUSE_YAW_RANGE_DEG,
    pitchDeg: (1 - (cursor.y / canvas.height) * 2) * 18,
  };
  camera = lagCamera(camera, target, dtMs);

  const hit = markerUnderCursor();
  if (hit !== hoverMarker) {
    hoverMarker = hit;
    hoverSinceMs = nowMs;
  }

  if (session.connected && gazeGate.shouldSend(nowMs)) {
    session.send({
      type: "GAZE",
      origin: toTuple(APEX),
      dir: toTuple(gazeDir()),
    });
  }

  ctx.fillStyle = "#0b1220";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  drawGround();
  drawMarkers(nowMs);
  drawReveal();

  // Crosshair at the cursor gaze point.
  ctx.strokeStyle = "#94a3b8";
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.moveTo(cursor.x - 8, cursor.y);
  ctx.lineTo(cursor.x + 8, cursor.y);
  ctx.moveTo(cursor.x, cursor.y - 8);
  ctx.lineTo(cursor.x, cursor.y + 8);
  ctx.stroke();

  drawHud();
  syncControls();
  requestAnimationFrame(frame);
}

requestAnimationFrame(frame);
