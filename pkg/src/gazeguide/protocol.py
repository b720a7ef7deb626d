"""Wire format and the transport-independent session core.

Messages are single-line UTF-8 JSON objects terminated by LF.  Every
message carries ``v`` (protocol version, currently 1), ``type``, ``seq``
(per-sender monotonic), ``ts`` (microseconds since the session epoch) and
type-specific payload fields.  Encoding is canonical (fixed key order) so
a replayed session reproduces emission bytes exactly.

The SessionCore is the single ordered consumer the engine demands: the
socket server, the simulation harness, and the replay checker all push
decoded messages through it one at a time.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, List, Optional

from .engine import AttentionEngine, Busy, DegeneratePlan, EngineError, NoFixation, Poi
from .gaze import GazeSample
from .geometry import (
    DegenerateCorrespondences,
    Ray,
    RigidTransform,
    Vec3,
    align_frames,
)

PROTOCOL_VERSION = 1

# Minimum spacing between accepted gaze samples (rate limit at 120 Hz).
MIN_GAZE_SPACING_US = 8333


class ProtocolError(Exception):
    code = "protocol-error"


class BadVersion(ProtocolError):
    code = "bad-version"


class UnknownType(ProtocolError):
    code = "unknown-type"


class SchemaViolation(ProtocolError):
    code = "schema-violation"


class NonMonotonicSeq(ProtocolError):
    code = "non-monotonic-seq"


class RoleViolation(ProtocolError):
    code = "role-violation"


@dataclass(frozen=True)
class WireMessage:
    type: str
    seq: int
    ts: int
    payload: dict = field(default_factory=dict)
    v: int = PROTOCOL_VERSION


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_vec3(x) -> bool:
    return isinstance(x, list) and len(x) == 3 and all(_is_num(c) for c in x)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_str(x) -> bool:
    return isinstance(x, str)


def _is_bool(x) -> bool:
    return isinstance(x, bool)


def _is_pairs(x) -> bool:
    return (
        isinstance(x, list)
        and all(
            isinstance(p, list) and len(p) == 2 and _is_vec3(p[0]) and _is_vec3(p[1])
            for p in x
        )
    )


def _is_steps(x) -> bool:
    def ok(st):
        if not (isinstance(st, list) and len(st) == 4):
            return False
        if not _is_int(st[0]) or not _is_int(st[1]):
            return False
        return all(v is None or _is_int(v) for v in st[2:])

    return isinstance(x, list) and all(ok(st) for st in x)


# type -> ordered list of (field, required, checker)
SCHEMA = {
    "HELLO": [("role", True, lambda x: x in ("headset", "robot", "observer"))],
    "WELCOME": [("session_id", True, _is_str), ("epoch_ts", True, _is_int)],
    "GAZE": [("origin", True, _is_vec3), ("dir", True, _is_vec3)],
    "POI_DETECTED": [
        ("poi_id", True, _is_str),
        ("pos_robot", True, _is_vec3),
        ("label", True, _is_str),
    ],
    "POI_WORLD": [
        ("poi_id", True, _is_str),
        ("pos", True, _is_vec3),
        ("label", True, _is_str),
    ],
    "ALIGN": [("pairs", True, _is_pairs)],
    "MARKER_PLACE": [
        ("marker_id", True, _is_int),
        ("pos", True, _is_vec3),
        ("half", True, _is_vec3),
        ("kind", True, lambda x: x in ("guide", "pulse", "final")),
    ],
    "MARKER_MOVE": [("marker_id", True, _is_int), ("pos", True, _is_vec3)],
    "MARKER_REMOVE": [("marker_id", True, _is_int)],
    "GAZE_CONFIRMED": [("marker_id", True, _is_int), ("t_i_us", True, _is_int)],
    "EPISODE_DONE": [
        ("poi_id", True, _is_str),
        ("total_us", True, _is_int),
        ("steps", True, _is_steps),
        ("timeouts", True, _is_int),
        ("success", True, _is_bool),
    ],
    "ERROR": [("code", True, _is_str), ("msg", True, _is_str)],
    "CMD_ATTRACT": [
        ("poi_id", True, _is_str),
        ("mode", False, lambda x: x in ("confirmation_gated", "scheduled")),
    ],
    "CMD_SHIFT": [("poi_id", True, _is_str)],
    "TICK": [],
}

# Which roles may send which message types (engine-bound traffic).
ROLE_TYPES = {
    "headset": {"GAZE", "CMD_ATTRACT", "CMD_SHIFT"},
    "robot": {"POI_DETECTED", "ALIGN"},
    "observer": {"CMD_ATTRACT", "CMD_SHIFT"},
}


def encode(m: WireMessage) -> bytes:
    """Canonical single-line JSON: fixed key order, LF-terminated."""
    if m.type not in SCHEMA:
        raise UnknownType(m.type)
    out = {"v": m.v, "type": m.type, "seq": m.seq, "ts": m.ts}
    for name, required, _check in SCHEMA[m.type]:
        if name in m.payload:
            out[name] = m.payload[name]
        elif required:
            raise SchemaViolation(f"{m.type} missing field {name!r}")
    line = json.dumps(out, separators=(",", ":"), allow_nan=False)
    if "\n" in line:
        raise SchemaViolation("embedded newline in message")
    return line.encode("utf-8") + b"\n"


def decode(line) -> WireMessage:
    """Parse and validate one LF-terminated line against the closed schema.

    Unknown payload fields are ignored; unknown types and missing or
    mistyped fields are rejected.
    """
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SchemaViolation(f"bad utf-8: {exc}") from exc
    line = line.strip()
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"bad json: {exc}") from exc
    if not isinstance(obj, dict):
        raise SchemaViolation("message must be a JSON object")
    if obj.get("v") != PROTOCOL_VERSION:
        raise BadVersion(f"unsupported version {obj.get('v')!r}")
    mtype = obj.get("type")
    if not isinstance(mtype, str) or mtype not in SCHEMA:
        raise UnknownType(f"unknown message type {mtype!r}")
    if not _is_int(obj.get("seq")) or obj["seq"] < 0:
        raise SchemaViolation("seq must be a non-negative integer")
    if not _is_int(obj.get("ts")) or obj["ts"] < 0:
        raise SchemaViolation("ts must be a non-negative integer")
    payload = {}
    for name, required, check in SCHEMA[mtype]:
        if name not in obj:
            if required:
                raise SchemaViolation(f"{mtype} missing field {name!r}")
            continue
        if not check(obj[name]):
            raise SchemaViolation(f"{mtype} field {name!r} failed validation")
        payload[name] = obj[name]
    return WireMessage(type=mtype, seq=obj["seq"], ts=obj["ts"], payload=payload)


class SessionCore:
    """Ordered event consumer wrapping one engine.

    Feed it decoded inbound messages (GAZE / TICK / POI_DETECTED / ALIGN /
    CMD_*); get back the engine's emission WireMessages.  When a log sink
    is attached, every inbound and outbound wire line is appended as
    NDJSON ``{"dir": "in"|"out", "raw": <exact line>}`` so sessions replay
    byte-for-byte.
    """

    def __init__(self, engine: Optional[AttentionEngine] = None,
                 log: Optional[IO[str]] = None):
        self.engine = engine or AttentionEngine()
        self.log = log
        if self.log is not None:
            from dataclasses import asdict

            self.log.write(json.dumps(
                {"dir": "meta", "engine": asdict(self.engine.config)},
                separators=(",", ":")) + "\n")
            self.log.flush()
        self.transform = RigidTransform.identity()
        self.pois: dict = {}
        self.out_seq = 0
        self.dropped_gaze = 0
        self._last_gaze_ts: Optional[int] = None

    # -- logging -------------------------------------------------------

    def _log(self, direction: str, raw: str):
        if self.log is not None:
            self.log.write(json.dumps({"dir": direction, "raw": raw},
                                      separators=(",", ":")) + "\n")
            self.log.flush()

    def _emit(self, payload_msgs: List[dict]) -> List[WireMessage]:
        out = []
        for p in payload_msgs:
            p = dict(p)
            mtype = p.pop("type")
            m = WireMessage(type=mtype, seq=self.out_seq,
                            ts=self.engine.now_us, payload=p)
            self.out_seq += 1
            self._log("out", encode(m).decode("utf-8").rstrip("\n"))
            out.append(m)
        return out

    # -- entry points --------------------------------------------------

    def submit_line(self, raw) -> List[WireMessage]:
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        raw = raw.rstrip("\n")
        self._log("in", raw)
        msg = decode(raw)
        return self._dispatch(msg)

    def submit(self, msg: WireMessage) -> List[WireMessage]:
        self._log("in", encode(msg).decode("utf-8").rstrip("\n"))
        return self._dispatch(msg)

    def _error(self, code: str, text: str) -> List[WireMessage]:
        return self._emit([{"type": "ERROR", "code": code, "msg": text}])

    def _dispatch(self, msg: WireMessage) -> List[WireMessage]:
        handler = getattr(self, f"_on_{msg.type.lower()}", None)
        if handler is None:
            return self._error("unroutable", f"{msg.type} is not engine-bound")
        return handler(msg)

    def _on_gaze(self, msg: WireMessage) -> List[WireMessage]:
        if (
            self._last_gaze_ts is not None
            and msg.ts - self._last_gaze_ts < MIN_GAZE_SPACING_US
        ):
            self.dropped_gaze += 1
            return []
        self._last_gaze_ts = msg.ts
        try:
            ray = Ray(Vec3.from_seq(msg.payload["origin"]),
                      Vec3.from_seq(msg.payload["dir"]).normalized())
        except ValueError:
            return self._error("bad-gaze", "gaze direction is degenerate")
        sample = GazeSample(ts_us=msg.ts, ray=ray)
        return self._emit(self.engine.on_gaze(sample))

    def _on_tick(self, msg: WireMessage) -> List[WireMessage]:
        return self._emit(self.engine.on_tick(msg.ts))

    def _on_align(self, msg: WireMessage) -> List[WireMessage]:
        pairs = [
            (Vec3.from_seq(p[0]), Vec3.from_seq(p[1]))
            for p in msg.payload["pairs"]
        ]
        try:
            self.transform = align_frames(pairs)
        except DegenerateCorrespondences as exc:
            return self._error("degenerate-align", str(exc))
        return []

    def _on_poi_detected(self, msg: WireMessage) -> List[WireMessage]:
        pos_world = self.transform.apply(Vec3.from_seq(msg.payload["pos_robot"]))
        poi = Poi(id=msg.payload["poi_id"], position=pos_world,
                  label=msg.payload["label"])
        self.pois[poi.id] = poi
        return self._emit([{
            "type": "POI_WORLD",
            "poi_id": poi.id,
            "pos": list(pos_world.as_tuple()),
            "label": poi.label,
        }])

    def _on_cmd_attract(self, msg: WireMessage) -> List[WireMessage]:
        poi = self.pois.get(msg.payload["poi_id"])
        if poi is None:
            return self._error("unknown-poi", msg.payload["poi_id"])
        try:
            out = self.engine.start_attraction(poi, mode=msg.payload.get("mode"))
        except Busy as exc:
            return self._error("busy", str(exc))
        except (DegeneratePlan, EngineError) as exc:
            return self._error("cannot-plan", str(exc))
        return self._emit(out)

    def _on_cmd_shift(self, msg: WireMessage) -> List[WireMessage]:
        poi = self.pois.get(msg.payload["poi_id"])
        if poi is None:
            return self._error("unknown-poi", msg.payload["poi_id"])
        try:
            out = self.engine.start_shift(poi)
        except Busy as exc:
            return self._error("busy", str(exc))
        except NoFixation as exc:
            return self._error("no-fixation", str(exc))
        except (DegeneratePlan, EngineError) as exc:
            return self._error("cannot-plan", str(exc))
        return self._emit(out)
