// View state is a pure fold over the received message stream; the render
// loop reads it, the socket layer writes it through applyMessage only.

import type { ServerMsg, Vec3Tuple } from "./protocol.js";

export interface MarkerSprite {
  markerId: number;
  pos: Vec3Tuple;
  half: Vec3Tuple;
  kind: "guide" | "pulse" | "final";
  /** ts (engine microseconds) of the most recent place/move. */
  placedTs: number;
  confirmed: boolean;
}

export interface PoiEntry {
  poiId: string;
  pos: Vec3Tuple;
  label: string;
}

export interface Hud {
  sessionId: string | null;
  phase: "idle" | "running" | "done";
  stepCount: number;
  tiHistoryUs: number[];
  lastEpisode: {
    poiId: string;
    totalUs: number;
    success: boolean;
    timeouts: number;
  } | null;
  lastError: string | null;
}

export interface ViewState {
  markers: Map<number, MarkerSprite>;
  pois: Map<string, PoiEntry>;
  hud: Hud;
  epochTs: number | null;
  /** POI to reveal on the canvas after EPISODE_DONE. */
  revealPoiId: string | null;
}

export function initialState(): ViewState {
  return {
    markers: new Map(),
    pois: new Map(),
    hud: {
      sessionId: null,
      phase: "idle",
      stepCount: 0,
      tiHistoryUs: [],
      lastEpisode: null,
      lastError: null,
    },
    epochTs: null,
    revealPoiId: null,
  };
}

/** Folds one server message into the state (mutates and returns it). */
export function applyMessage(state: ViewState, msg: ServerMsg): ViewState {
  switch (msg.type) {
    case "WELCOME":
      state.hud.sessionId = msg.session_id;
      state.epochTs = msg.epoch_ts;
      break;
    case "POI_WORLD":
      state.pois.set(msg.poi_id, {
        poiId: msg.poi_id,
        pos: msg.pos,
        label: msg.label,
      });
      break;
    case "MARKER_PLACE":
      state.markers.set(msg.marker_id, {
        markerId: msg.marker_id,
        pos: msg.pos,
        half: msg.half,
        kind: msg.kind,
        placedTs: msg.ts,
        confirmed: false,
      });
      state.hud.phase = "running";
      state.hud.stepCount += 1;
      state.revealPoiId = null;
      break;
    case "MARKER_MOVE": {
      const sprite = state.markers.get(msg.marker_id);
      if (sprite) {
        sprite.pos = msg.pos;
        sprite.placedTs = msg.ts;
        sprite.confirmed = false;
        state.hud.stepCount += 1;
      }
      break;
    }
    case "MARKER_REMOVE":
      state.markers.delete(msg.marker_id);
      break;
    case "GAZE_CONFIRMED": {
      const sprite = state.markers.get(msg.marker_id);
      if (sprite) sprite.confirmed = true;
      state.hud.tiHistoryUs.push(msg.t_i_us);
      break;
    }
    case "EPISODE_DONE":
      state.hud.phase = "done";
      state.hud.lastEpisode = {
        poiId: msg.poi_id,
        totalUs: msg.total_us,
        success: msg.success,
        timeouts: msg.timeouts,
      };
      if (msg.success) state.revealPoiId = msg.poi_id;
      break;
    case "ERROR":
      state.hud.lastError = `${msg.code}: ${msg.msg}`;
      break;
  }
  return state;
}

/** An episode is in flight while any marker is on screen. */
export function episodeActive(state: ViewState): boolean {
  return state.markers.size > 0;
}

/** Resets per-episode HUD fields when the user starts a new episode. */
export function beginEpisode(state: ViewState): void {
  state.hud.phase = "running";
  state.hud.stepCount = 0;
  state.hud.tiHistoryUs = [];
  state.hud.lastError = null;
  state.revealPoiId = null;
}
