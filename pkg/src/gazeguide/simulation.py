"""Deterministic synthetic headset and robot for unattended experiments.

The gaze agent is deliberately simple: after a reaction latency it saccades
toward the newest visible marker at constant angular speed, with optional
Gaussian jitter, while its head frustum follows the gaze with a first-order
lag.  Everything is driven by a simulated clock in fixed sample ticks, so a
(config, seed) pair maps to bit-identical logs, metrics, and emissions.
"""
from __future__ import annotations

import csv
import json
import math
import os
import random
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from .config import AgentParams, ConfigError, EngineConfig, ExperimentConfig
from .engine import AttentionEngine, EpisodeRecord, Poi
from .geometry import (
    Frustum,
    Ray,
    RigidTransform,
    Vec3,
    angular_distance,
    frustum_contains,
    perpendicular,
    rotate_towards,
)
from .protocol import ProtocolError, SessionCore, WireMessage, encode

CSV_HEADER = [
    "episode_id", "poi_id", "delta_d_m", "delta_t_ms", "mode", "step_index",
    "marker_id", "t_i_us", "cumulative_us", "timeouts", "scanpath_len_deg",
    "seed",
]


class DivergenceError(Exception):
    def __init__(self, line_no: int, detail: str = ""):
        self.line_no = line_no
        super().__init__(f"replay diverged at log line {line_no}: {detail}")


class GazeAgent:
    """Scriptable stand-in for a human wearing the headset."""

    def __init__(self, params: AgentParams, origin: Vec3 = Vec3(0.0, 1.6, 0.0),
                 initial_dir: Vec3 = Vec3(0.0, 0.0, 1.0),
                 head_dir: Optional[Vec3] = None):
        self.params = params
        self.origin = origin
        self.gaze_dir = initial_dir.normalized()
        self.head_dir = (head_dir if head_dir is not None else initial_dir).normalized()
        self.rng = random.Random(params.seed)

    def head_frustum(self) -> Frustum:
        return Frustum.from_gaze(
            Ray(self.origin, self.head_dir),
            self.params.fov_h_deg, self.params.fov_v_deg,
        )

    def step(self, markers: Dict[int, Tuple[Vec3, int]], now_us: int,
             dt_us: int):
        """Advance one sample period; returns the emitted gaze sample.

        markers maps marker_id -> (center, placed_us).  Only markers inside
        the head frustum and older than the reaction latency are pursued.
        """
        p = self.params
        target = None
        fr = self.head_frustum()
        for mid in sorted(markers):
            pos, placed_us = markers[mid]
            if now_us - placed_us >= p.latency_ms * 1000 and frustum_contains(fr, pos):
                target = pos
        if target is not None:
            tdir = (target - self.origin).normalized()
            max_step_deg = p.saccade_speed_dps * dt_us / 1e6
            self.gaze_dir = rotate_towards(self.gaze_dir, tdir, max_step_deg)
        emitted = self.gaze_dir
        if p.jitter_sigma_deg > 0:
            e1 = perpendicular(self.gaze_dir)
            e2 = self.gaze_dir.cross(e1)
            t1 = math.tan(math.radians(self.rng.gauss(0.0, p.jitter_sigma_deg)))
            t2 = math.tan(math.radians(self.rng.gauss(0.0, p.jitter_sigma_deg)))
            emitted = (self.gaze_dir + e1 * t1 + e2 * t2).normalized()
        # First-order head lag toward the (unjittered) gaze direction.
        k = 1.0 - math.exp(-dt_us / (p.head_lag_tau_ms * 1000.0))
        lag_angle = angular_distance(self.head_dir, self.gaze_dir)
        self.head_dir = rotate_towards(self.head_dir, self.gaze_dir, lag_angle * k)
        return Ray(self.origin, emitted)


@dataclass
class EpisodeResult:
    record: EpisodeRecord
    done_payload: dict
    scanpath_len_deg: float
    gaze_dirs: List[Vec3] = field(default_factory=list)
    emissions: List[WireMessage] = field(default_factory=list)


def _random_rigid_transform(rng: random.Random) -> RigidTransform:
    axis = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1))
    while axis.norm() < 1e-6:
        axis = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1))
    axis = axis.normalized()
    angle = rng.uniform(-math.pi, math.pi)
    w = math.cos(angle / 2.0)
    s = math.sin(angle / 2.0)
    quat = (w, axis.x * s, axis.y * s, axis.z * s)
    n = math.sqrt(sum(c * c for c in quat))
    quat = tuple(c / n for c in quat)
    t = Vec3(rng.uniform(-3, 3), rng.uniform(-1, 1), rng.uniform(-3, 3))
    return RigidTransform(quat, t)


def run_episode(
    engine_cfg: EngineConfig,
    agent_params: AgentParams,
    poi: Poi,
    mode: str,
    seed: int,
    log=None,
    max_sim_s: float = 120.0,
    agent_initial_dir: Vec3 = Vec3(0.0, 0.0, 1.0),
    agent_head_dir: Optional[Vec3] = None,
) -> EpisodeResult:
    """One agent<->engine episode on a simulated clock.

    The robot side is a script: it aligns frames (pairs fabricated from a
    seeded ground-truth transform) and announces the POI, then an observer
    command starts the episode.
    """
    agent = GazeAgent(replace(agent_params, seed=seed),
                      initial_dir=agent_initial_dir, head_dir=agent_head_dir)
    core = SessionCore(AttentionEngine(engine_cfg), log=log)
    rng = random.Random(seed ^ 0x5EED)
    truth = _random_rigid_transform(rng)
    inv = truth.inverse()

    seqs = {"headset": 0, "robot": 0, "observer": 0, "tick": 0}

    def send(sender: str, mtype: str, ts: int, payload: dict):
        msg = WireMessage(type=mtype, seq=seqs[sender], ts=ts, payload=payload)
        seqs[sender] += 1
        return core.submit(msg)

    markers: Dict[int, Tuple[Vec3, int]] = {}
    gaze_dirs: List[Vec3] = []
    emissions: List[WireMessage] = []
    done_payload: Optional[dict] = None

    def absorb(msgs: List[WireMessage]):
        nonlocal done_payload
        emissions.extend(msgs)
        for m in msgs:
            if m.type == "MARKER_PLACE":
                markers[m.payload["marker_id"]] = (
                    Vec3.from_seq(m.payload["pos"]), m.ts)
            elif m.type == "MARKER_MOVE":
                markers[m.payload["marker_id"]] = (
                    Vec3.from_seq(m.payload["pos"]), m.ts)
            elif m.type == "MARKER_REMOVE":
                markers.pop(m.payload["marker_id"], None)
            elif m.type == "EPISODE_DONE":
                done_payload = m.payload

    dt_us = round(1e6 / agent_params.sample_hz)
    t = 0

    # Robot script: align frames, then announce the POI in robot coordinates.
    world_pts = [Vec3(1.0, 0.0, 2.0), Vec3(-2.0, 1.0, 3.0), Vec3(0.5, 2.0, -1.0),
                 Vec3(3.0, 0.5, 1.0)]
    pairs = [[list(inv.apply(w).as_tuple()), list(w.as_tuple())] for w in world_pts]
    absorb(send("robot", "ALIGN", t, {"pairs": pairs}))
    absorb(send("robot", "POI_DETECTED", t, {
        "poi_id": poi.id,
        "pos_robot": list(inv.apply(poi.position).as_tuple()),
        "label": poi.label,
    }))

    # Prime the engine with one gaze sample, then start the episode.
    ray = agent.step(markers, t, dt_us)
    gaze_dirs.append(ray.direction)
    absorb(send("headset", "GAZE", t, {
        "origin": list(ray.origin.as_tuple()),
        "dir": list(ray.direction.as_tuple()),
    }))
    absorb(send("observer", "CMD_ATTRACT", t, {"poi_id": poi.id, "mode": mode}))

    max_steps = int(max_sim_s * agent_params.sample_hz)
    for _ in range(max_steps):
        if done_payload is not None:
            break
        t += dt_us
        ray = agent.step(markers, t, dt_us)
        gaze_dirs.append(ray.direction)
        absorb(send("headset", "GAZE", t, {
            "origin": list(ray.origin.as_tuple()),
            "dir": list(ray.direction.as_tuple()),
        }))
        if done_payload is None:
            absorb(send("tick", "TICK", t, {}))

    if done_payload is None:
        raise RuntimeError(
            f"episode did not finish within {max_sim_s}s of simulated time")

    scanpath = 0.0
    for a, b in zip(gaze_dirs, gaze_dirs[1:]):
        scanpath += angular_distance(a, b)

    record = core.engine.last_record
    return EpisodeResult(record=record, done_payload=done_payload,
                         scanpath_len_deg=scanpath, gaze_dirs=gaze_dirs,
                         emissions=emissions)


def rows_for_episode(result: EpisodeResult, episode_id: str, poi_id: str,
                     delta_d_m: float, delta_t_ms: int, mode: str,
                     seed: int) -> List[dict]:
    rec = result.record
    rows = []
    steps = rec.steps
    end_of_episode = rec.start_us + rec.total_us
    for i, st in enumerate(steps):
        step_end = steps[i + 1].placed_us if i + 1 < len(steps) else end_of_episode
        if st.confirmed_us is not None:
            step_end = max(st.confirmed_us, steps[i].placed_us)
            if i + 1 < len(steps):
                step_end = steps[i + 1].placed_us
        rows.append({
            "episode_id": episode_id,
            "poi_id": poi_id,
            "delta_d_m": delta_d_m,
            "delta_t_ms": delta_t_ms,
            "mode": mode,
            "step_index": i,
            "marker_id": st.marker_id,
            "t_i_us": "" if st.t_i_us is None else st.t_i_us,
            "cumulative_us": step_end - rec.start_us,
            "timeouts": rec.timeouts,
            "scanpath_len_deg": result.scanpath_len_deg,
            "seed": seed,
        })
    return rows


def episode_seed(base: int, di: int, ti: int, ei: int) -> int:
    s = (base * 2654435761 + di + 1) & 0xFFFFFFFF
    s = (s * 40503 + ti + 1) & 0xFFFFFFFF
    s = (s * 69069 + ei + 1) & 0xFFFFFFFF
    return s


@dataclass
class SweepResult:
    rows: List[dict]
    episodes: List[Tuple[str, EpisodeResult]]
    csv_path: Optional[str] = None


def run_sweep(exp: ExperimentConfig, engine_cfg: Optional[EngineConfig] = None,
              out_csv: Optional[str] = None) -> SweepResult:
    """Full (delta_d x delta_t x episodes) grid; optionally writes the CSV.

    Row order is deterministic (cell-major, then episode, then step) and a
    failed run never leaves a partial CSV behind.
    """
    exp.validate()
    base_engine = engine_cfg or EngineConfig()
    rows: List[dict] = []
    episodes: List[Tuple[str, EpisodeResult]] = []
    for di, dd in enumerate(exp.delta_d_grid):
        for ti, dt_ms in enumerate(exp.delta_t_grid):
            for ei in range(exp.episodes_per_cell):
                seed = episode_seed(exp.seed, di, ti, ei)
                poi_cfg = exp.world[ei % len(exp.world)]
                poi = Poi(id=poi_cfg["id"],
                          position=Vec3.from_seq(poi_cfg["position"]),
                          label=poi_cfg.get("label", ""))
                cfg = replace(
                    base_engine,
                    delta_d_m=float(dd),
                    delta_t_ms=int(dt_ms),
                    mode=exp.mode,
                    # Keep the cell's interval fixed so delta_t stays an
                    # independent variable within the sweep.
                    adaptive_interval=False,
                )
                episode_id = f"d{di}t{ti}e{ei}"
                result = run_episode(cfg, exp.agent, poi, exp.mode, seed,
                                     max_sim_s=exp.max_sim_s)
                episodes.append((episode_id, result))
                rows.extend(rows_for_episode(
                    result, episode_id, poi.id, float(dd), int(dt_ms),
                    exp.mode, seed))
    if out_csv is not None:
        tmp = out_csv + ".tmp"
        try:
            with open(tmp, "w", encoding="utf-8", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=CSV_HEADER)
                writer.writeheader()
                writer.writerows(rows)
            os.replace(tmp, out_csv)
        except BaseException:
            for path in (tmp, out_csv):
                try:
                    os.remove(path)
                except OSError:
                    pass
            raise
    return SweepResult(rows=rows, episodes=episodes, csv_path=out_csv)


def _engine_cfg_from_meta(entry: dict) -> EngineConfig:
    cfg = EngineConfig()
    for key, value in entry.get("engine", {}).items():
        if hasattr(cfg, key):
            setattr(cfg, key, value)
    return cfg


def replay(log_lines, engine_cfg: Optional[EngineConfig] = None) -> int:
    """Re-run a session log through a fresh engine; verify emissions match.

    Returns the number of emission lines verified.  Raises DivergenceError
    (with the first mismatching log line number) on any difference.
    """
    if isinstance(log_lines, (str, os.PathLike)):
        with open(log_lines, "r", encoding="utf-8") as fh:
            log_lines = fh.read().splitlines()
    core: Optional[SessionCore] = None
    produced: List[str] = []
    verified = 0
    for line_no, raw in enumerate(log_lines, 1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            entry = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DivergenceError(line_no, f"unreadable log line: {exc}")
        direction = entry.get("dir")
        if direction == "meta":
            if core is None:
                core = SessionCore(AttentionEngine(_engine_cfg_from_meta(entry)))
            continue
        if core is None:
            core = SessionCore(AttentionEngine(engine_cfg or EngineConfig()))
        if direction == "in":
            try:
                outs = core.submit_line(entry["raw"])
            except ProtocolError as exc:
                raise DivergenceError(line_no, f"inbound line rejected: {exc}")
            produced.extend(encode(m).decode("utf-8").rstrip("\n") for m in outs)
        elif direction == "out":
            if not produced:
                raise DivergenceError(
                    line_no, "log expects an emission the engine did not produce")
            got = produced.pop(0)
            if got != entry["raw"]:
                raise DivergenceError(
                    line_no, f"expected {entry['raw']!r}, engine emitted {got!r}")
            verified += 1
        else:
            raise DivergenceError(line_no, f"unknown log direction {direction!r}")
    if produced:
        raise DivergenceError(
            len(log_lines) + 1,
            f"engine produced {len(produced)} emission(s) beyond the log")
    return verified
