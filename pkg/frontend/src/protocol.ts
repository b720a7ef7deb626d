// Wire message subset the browser speaks: single-line JSON with a fixed
// key order (v, type, seq, ts, then the type's payload fields), matching
// the engine's canonical encoding.

export const PROTOCOL_VERSION = 1;

export type Vec3Tuple = [number, number, number];

export interface HelloMsg {
  type: "HELLO";
  role: "headset" | "robot" | "observer";
}

export interface GazeMsg {
  type: "GAZE";
  origin: Vec3Tuple;
  dir: Vec3Tuple;
}

export interface CmdAttractMsg {
  type: "CMD_ATTRACT";
  poi_id: string;
  mode?: "confirmation_gated" | "scheduled";
}

export interface CmdShiftMsg {
  type: "CMD_SHIFT";
  poi_id: string;
}

export type ClientMsg = HelloMsg | GazeMsg | CmdAttractMsg | CmdShiftMsg;

export interface WelcomeMsg {
  type: "WELCOME";
  seq: number;
  ts: number;
  session_id: string;
  epoch_ts: number;
}

export interface MarkerPlaceMsg {
  type: "MARKER_PLACE";
  seq: number;
  ts: number;
  marker_id: number;
  pos: Vec3Tuple;
  half: Vec3Tuple;
  kind: "guide" | "pulse" | "final";
}

export interface MarkerMoveMsg {
  type: "MARKER_MOVE";
  seq: number;
  ts: number;
  marker_id: number;
  pos: Vec3Tuple;
}

export interface MarkerRemoveMsg {
  type: "MARKER_REMOVE";
  seq: number;
  ts: number;
  marker_id: number;
}

export interface GazeConfirmedMsg {
  type: "GAZE_CONFIRMED";
  seq: number;
  ts: number;
  marker_id: number;
  t_i_us: number;
}

export interface EpisodeDoneMsg {
  type: "EPISODE_DONE";
  seq: number;
  ts: number;
  poi_id: string;
  total_us: number;
  steps: [number, number, number | null, number | null][];
  timeouts: number;
  success: boolean;
}

export interface PoiWorldMsg {
  type: "POI_WORLD";
  seq: number;
  ts: number;
  poi_id: string;
  pos: Vec3Tuple;
  label: string;
}

export interface ErrorMsg {
  type: "ERROR";
  seq: number;
  ts: number;
  code: string;
  msg: string;
}

export type ServerMsg =
  | WelcomeMsg
  | MarkerPlaceMsg
  | MarkerMoveMsg
  | MarkerRemoveMsg
  | GazeConfirmedMsg
  | EpisodeDoneMsg
  | PoiWorldMsg
  | ErrorMsg;

// Payload key order per type; keys outside this list are never sent.
const CLIENT_FIELDS: Record<ClientMsg["type"], string[]> = {
  HELLO: ["role"],
  GAZE: ["origin", "dir"],
  CMD_ATTRACT: ["poi_id", "mode"],
  CMD_SHIFT: ["poi_id"],
};

const SERVER_TYPES = new Set<string>([
  "WELCOME",
  "MARKER_PLACE",
  "MARKER_MOVE",
  "MARKER_REMOVE",
  "GAZE_CONFIRMED",
  "EPISODE_DONE",
  "POI_WORLD",
  "ERROR",
]);

function isVec3(x: unknown): x is Vec3Tuple {
  return (
    Array.isArray(x) &&
    x.length === 3 &&
    x.every((c) => typeof c === "number" && Number.isFinite(c))
  );
}

/** Serializes one client message; seq/ts stamped by the caller. */
export function encodeClient(msg: ClientMsg, seq: number, ts: number): string {
  const out: Record<string, unknown> = {
    v: PROTOCOL_VERSION,
    type: msg.type,
    seq,
    ts,
  };
  const payload = msg as unknown as Record<string, unknown>;
  for (const key of CLIENT_FIELDS[msg.type]) {
    if (payload[key] !== undefined) {
      out[key] = payload[key];
    }
  }
  return JSON.stringify(out);
}

/**
 * Parses one server line. Returns null (with a console note) for lines
 * the demo does not understand rather than breaking the stream.
 */
export function decodeServer(line: string): ServerMsg | null {
  let obj: Record<string, unknown>;
  try {
    obj = JSON.parse(line);
  } catch {
    console.warn("webui: unparseable line", line);
    return null;
  }
  if (typeof obj !== "object" || obj === null || obj.v !== PROTOCOL_VERSION) {
    console.warn("webui: unsupported message version", line);
    return null;
  }
  const type = obj.type;
  if (typeof type !== "string" || !SERVER_TYPES.has(type)) {
    console.info("webui: ignoring message type", type);
    return null;
  }
  if (typeof obj.seq !== "number" || typeof obj.ts !== "number") {
    console.warn("webui: missing seq/ts", line);
    return null;
  }
  // Spot-check the fields the renderer dereferences; the engine already
  // validated its own emissions, so this guards against cross-version skew.
  switch (type) {
    case "MARKER_PLACE":
      if (!isVec3(obj.pos) || !isVec3(obj.half)) return null;
      break;
    case "MARKER_MOVE":
    case "POI_WORLD":
      if (!isVec3(obj.pos)) return null;
      break;
  }
  return obj as unknown as ServerMsg;
}
