"""Attention-direction state machine.

One engine drives one user: it plans a chain of marker waypoints from the
current gaze anchor to a point of interest, places one visible marker at a
time, and advances it either when gaze dwell confirms the marker
(confirmation-gated) or on a timed schedule.  Per-marker acquisition times
t_i feed an adaptive interval policy.

The engine never reads a clock: all time arrives as microsecond timestamps
on gaze samples and ticks, so a replayed event stream reproduces the exact
same emissions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

from .config import EngineConfig
from .gaze import (
    DwellState,
    FixationEvent,
    GazeSample,
    GazeTrack,
    detect_fixation,
    update_dwell,
)
from .geometry import (
    Aabb,
    Frustum,
    Ray,
    Vec3,
    angular_distance,
    clamp_to_frustum,
    frustum_contains,
    perpendicular,
    point_at,
    rotate_towards,
)

MODE_GATED = "confirmation_gated"
MODE_SCHEDULED = "scheduled"

PHASE_IDLE = "idle"
PHASE_AWAITING = "awaiting_gaze"
PHASE_ADVANCING = "advancing"
PHASE_REACHED = "reached"
PHASE_TIMED_OUT = "timed_out"


class EngineError(Exception):
    pass


class Busy(EngineError):
    """An episode is already running."""


class NoFixation(EngineError):
    """start_shift needs a current fixation and none was found."""


class DegeneratePlan(EngineError):
    pass


@dataclass(frozen=True)
class Poi:
    id: str
    position: Vec3
    label: str = ""


@dataclass(frozen=True)
class Marker:
    id: int
    box: Aabb
    kind: str  # guide | pulse | final
    placed_us: int
    state: str = "visible"  # visible | confirmed | removed


@dataclass
class AttractionPlan:
    poi_id: str
    waypoints: List[Vec3]
    delta_d_m: float
    cursor: int = 0


@dataclass
class IntervalPolicy:
    delta_t_min_ms: int
    delta_t_max_ms: int
    ewma_alpha: float
    beta: float
    ewma_us: Optional[int] = None


def adapt_interval(policy: IntervalPolicy, t_i_us: int) -> Tuple[IntervalPolicy, int]:
    """Fold one observed acquisition time into the EWMA, emit the next interval.

    The first observation seeds the EWMA directly; emitted intervals are
    always clamped to [delta_t_min_ms, delta_t_max_ms].
    """
    if t_i_us < 0:
        raise ValueError("t_i_us must be >= 0")
    if policy.ewma_us is None:
        ewma = t_i_us
    else:
        ewma = int(round(policy.ewma_alpha * t_i_us + (1.0 - policy.ewma_alpha) * policy.ewma_us))
    raw_ms = policy.beta * ewma / 1000.0
    next_ms = int(round(min(policy.delta_t_max_ms, max(policy.delta_t_min_ms, raw_ms))))
    return replace(policy, ewma_us=ewma), next_ms


@dataclass
class StepRecord:
    marker_id: int
    placed_us: int
    confirmed_us: Optional[int] = None
    t_i_us: Optional[int] = None


@dataclass
class EpisodeRecord:
    poi_id: str
    mode: str
    steps: List[StepRecord] = field(default_factory=list)
    timeouts: int = 0
    total_us: int = 0
    success: bool = False
    start_us: int = 0


def plan_chain(gaze: Ray, frustum: Frustum, poi: Poi, delta_d_m: float,
               inset_deg: float = 2.0) -> AttractionPlan:
    """Waypoint chain from the gaze anchor to the POI, spaced by delta_d.

    The anchor is the gaze point at POI range, clamped into the frustum so
    the first marker is always placeable in view; the final waypoint snaps
    exactly onto the POI.
    """
    if delta_d_m <= 0:
        raise ValueError("delta_d_m must be > 0")
    r = (poi.position - gaze.origin).norm()
    if r == 0.0:
        raise DegeneratePlan("POI coincides with the gaze origin")
    anchor = clamp_to_frustum(frustum, point_at(gaze, r), inset_deg)
    offset = poi.position - anchor
    dist = offset.norm()
    if dist < 1e-6:
        # POI already under the gaze anchor: single final waypoint.
        return AttractionPlan(poi.id, [poi.position], delta_d_m)
    u = offset * (1.0 / dist)
    count = math.ceil(dist / delta_d_m)
    waypoints = [anchor + u * (k * delta_d_m) for k in range(1, count)]
    waypoints.append(poi.position)
    return AttractionPlan(poi.id, waypoints, delta_d_m)


class AttentionEngine:
    """Single-owner event-loop state; feed it gaze samples and ticks.

    Every mutating call returns the list of emitted protocol payloads as
    plain dicts with a ``type`` key; the session layer stamps seq/ts.
    """

    def __init__(self, config: Optional[EngineConfig] = None):
        self.config = config or EngineConfig()
        self.track = GazeTrack(
            capacity=self.config.track_capacity,
            reference_depth_m=self.config.reference_depth_m,
        )
        self.phase = PHASE_IDLE
        self.mode = self.config.mode
        self.plan: Optional[AttractionPlan] = None
        self.marker: Optional[Marker] = None
        self.dwell: Optional[DwellState] = None
        self.record: Optional[EpisodeRecord] = None
        self.last_record: Optional[EpisodeRecord] = None
        self.policy = IntervalPolicy(
            self.config.delta_t_min_ms,
            self.config.delta_t_max_ms,
            self.config.ewma_alpha,
            self.config.beta,
        )
        self.current_delta_t_ms = self.config.delta_t_ms
        self._next_marker_id = 1
        self._consecutive_timeouts = 0
        self._pending_shift_poi: Optional[Poi] = None
        self._now_us = 0

    # -- helpers -------------------------------------------------------

    @property
    def now_us(self) -> int:
        return self._now_us

    def _bump_now(self, ts_us: int):
        if ts_us > self._now_us:
            self._now_us = ts_us

    def _marker_box(self, pos: Vec3) -> Aabb:
        h = self.config.marker_half_extent_m
        return Aabb(pos, Vec3(h, h, h))

    def _gaze_frustum(self) -> Frustum:
        latest = self.track.latest
        if latest is None:
            raise EngineError("no gaze sample seen yet; cannot plan")
        return Frustum.from_gaze(latest.ray, self.config.hfov_deg, self.config.vfov_deg)

    def _place_marker(self, pos: Vec3, kind: str, now_us: int,
                      marker_id: Optional[int] = None) -> Tuple[Marker, dict]:
        mid = marker_id if marker_id is not None else self._next_marker_id
        if marker_id is None:
            self._next_marker_id += 1
        marker = Marker(id=mid, box=self._marker_box(pos), kind=kind, placed_us=now_us)
        msg = {
            "type": "MARKER_PLACE",
            "marker_id": mid,
            "pos": list(pos.as_tuple()),
            "half": list(marker.box.half_extents.as_tuple()),
            "kind": kind,
        }
        return marker, msg

    def _reset_dwell(self, marker_id: int, now_us: int):
        self.dwell = DwellState(marker_id=marker_id, last_ts_us=now_us)

    def reference_depth(self) -> float:
        """Distance to the active marker, else the configured default."""
        latest = self.track.latest
        if self.marker is not None and latest is not None:
            return max(1e-6, (self.marker.box.center - latest.ray.origin).norm())
        return self.config.reference_depth_m

    # -- commands ------------------------------------------------------

    def start_attraction(self, poi: Poi, mode: Optional[str] = None,
                         delta_t_ms: Optional[int] = None) -> List[dict]:
        if self.phase != PHASE_IDLE:
            raise Busy(f"engine phase is {self.phase}")
        self.mode = mode or self.config.mode
        if delta_t_ms is not None:
            self.current_delta_t_ms = delta_t_ms
        gaze = self.track.latest
        if gaze is None:
            raise EngineError("no gaze sample seen yet; cannot plan")
        now = self._now_us
        plan = plan_chain(
            gaze.ray, self._gaze_frustum(), poi, self.config.delta_d_m,
            self.config.frustum_inset_deg,
        )
        self.plan = plan
        self.record = EpisodeRecord(poi_id=poi.id, mode=self.mode, start_us=now)
        self._consecutive_timeouts = 0
        marker, msg = self._place_marker(plan.waypoints[0], "guide", now)
        self.marker = marker
        self._reset_dwell(marker.id, now)
        self.record.steps.append(StepRecord(marker_id=marker.id, placed_us=now))
        self.phase = PHASE_AWAITING
        return [msg]

    def start_shift(self, poi: Poi) -> List[dict]:
        if self.phase != PHASE_IDLE:
            raise Busy(f"engine phase is {self.phase}")
        fixation = detect_fixation(
            self.track,
            self.config.fixation_window_ms,
            self.config.fixation_dispersion_deg,
        )
        if fixation is None:
            raise NoFixation("no current fixation in the gaze track")
        gaze = self.track.latest
        now = self._now_us
        origin = gaze.ray.origin
        toward = poi.position - origin
        if toward.norm() < 1e-9:
            raise DegeneratePlan("POI coincides with the gaze origin")
        poi_dir = toward.normalized()
        centroid = fixation.centroid_dir
        if angular_distance(centroid, poi_dir) < 1e-9:
            # POI straight down the fixation: pulse sideways instead.
            poi_dir = perpendicular(centroid)
        pulse_dir = rotate_towards(centroid, poi_dir, self.config.eccentricity_deg)
        pos = origin + pulse_dir * self.reference_depth()
        self.mode = self.config.mode
        self.record = EpisodeRecord(poi_id=poi.id, mode=self.mode, start_us=now)
        self._consecutive_timeouts = 0
        self._pending_shift_poi = poi
        marker, msg = self._place_marker(pos, "pulse", now)
        self.marker = marker
        self._reset_dwell(marker.id, now)
        self.record.steps.append(StepRecord(marker_id=marker.id, placed_us=now))
        self.phase = PHASE_AWAITING
        return [msg]

    # -- events --------------------------------------------------------

    def on_gaze(self, s: GazeSample) -> List[dict]:
        accepted = self.track.push_sample(s)
        if not accepted:
            return []
        self._bump_now(s.ts_us)
        if self.phase != PHASE_AWAITING or self.marker is None:
            return []
        self.dwell = update_dwell(
            self.dwell, s, self.marker.box,
            self.config.dwell_ms, self.config.gap_tolerance_ms,
        )
        if not self.dwell.confirmed:
            return []
        step = self.record.steps[-1]
        if step.confirmed_us is not None:
            return []  # already confirmed; waiting on the schedule
        out: List[dict] = []
        now = s.ts_us
        step.confirmed_us = now
        step.t_i_us = now - step.placed_us
        self._consecutive_timeouts = 0
        out.append({
            "type": "GAZE_CONFIRMED",
            "marker_id": self.marker.id,
            "t_i_us": step.t_i_us,
        })
        if self.config.adaptive_interval:
            self.policy, self.current_delta_t_ms = adapt_interval(self.policy, step.t_i_us)
        if self._pending_shift_poi is not None:
            out.extend(self._chain_into_attraction(now))
            return out
        if self.mode == MODE_GATED:
            out.extend(self._advance_or_finish(now))
        else:
            if self.plan is not None and self.plan.cursor == len(self.plan.waypoints) - 1:
                out.extend(self._finish_episode(now, success=True))
        return out

    def _chain_into_attraction(self, now_us: int) -> List[dict]:
        """Pulse marker confirmed: tear it down and begin the attraction leg."""
        poi = self._pending_shift_poi
        self._pending_shift_poi = None
        out = [{"type": "MARKER_REMOVE", "marker_id": self.marker.id}]
        self.phase = PHASE_ADVANCING
        gaze = self.track.latest
        plan = plan_chain(
            gaze.ray, self._gaze_frustum(), poi, self.config.delta_d_m,
            self.config.frustum_inset_deg,
        )
        self.plan = plan
        marker, msg = self._place_marker(plan.waypoints[0], "guide", now_us)
        self.marker = marker
        self._reset_dwell(marker.id, now_us)
        self.record.steps.append(StepRecord(marker_id=marker.id, placed_us=now_us))
        self.phase = PHASE_AWAITING
        out.append(msg)
        return out

    def _advance_or_finish(self, now_us: int) -> List[dict]:
        plan = self.plan
        if plan.cursor >= len(plan.waypoints) - 1:
            return self._finish_episode(now_us, success=True)
        self.phase = PHASE_ADVANCING
        plan.cursor += 1
        pos = plan.waypoints[plan.cursor]
        kind = "final" if plan.cursor == len(plan.waypoints) - 1 else "guide"
        self.marker = Marker(
            id=self.marker.id, box=self._marker_box(pos), kind=kind, placed_us=now_us,
        )
        self._reset_dwell(self.marker.id, now_us)
        self.record.steps.append(StepRecord(marker_id=self.marker.id, placed_us=now_us))
        self.phase = PHASE_AWAITING
        return [{
            "type": "MARKER_MOVE",
            "marker_id": self.marker.id,
            "pos": list(pos.as_tuple()),
        }]

    def _finish_episode(self, now_us: int, success: bool) -> List[dict]:
        self.phase = PHASE_REACHED if success else PHASE_TIMED_OUT
        rec = self.record
        rec.success = success
        rec.total_us = now_us - rec.start_us
        out = []
        if self.marker is not None:
            out.append({"type": "MARKER_REMOVE", "marker_id": self.marker.id})
        out.append({
            "type": "EPISODE_DONE",
            "poi_id": rec.poi_id,
            "total_us": rec.total_us,
            "steps": [
                [st.marker_id, st.placed_us, st.confirmed_us, st.t_i_us]
                for st in rec.steps
            ],
            "timeouts": rec.timeouts,
            "success": success,
        })
        self.last_record = rec
        self.marker = None
        self.plan = None
        self.dwell = None
        self.record = None
        self._pending_shift_poi = None
        self.phase = PHASE_IDLE
        return out

    def on_tick(self, now_us: int) -> List[dict]:
        self._bump_now(now_us)
        if self.phase != PHASE_AWAITING or self.marker is None:
            return []
        out: List[dict] = []
        step = self.record.steps[-1]
        elapsed = now_us - self.marker.placed_us
        scheduled_wait = (
            self.mode == MODE_SCHEDULED
            and self._pending_shift_poi is None
            and self.plan is not None
        )
        if scheduled_wait and elapsed >= self.current_delta_t_ms * 1000:
            if self.plan.cursor < len(self.plan.waypoints) - 1:
                # Schedule fires: move on whether or not the user caught up.
                out.extend(self._advance_scheduled(now_us))
                return out
            if step.confirmed_us is not None:
                return self._finish_episode(now_us, success=True)
        if step.confirmed_us is None and elapsed >= self.config.timeout_ms * 1000:
            out.extend(self._handle_timeout(now_us))
        return out

    def _advance_scheduled(self, now_us: int) -> List[dict]:
        plan = self.plan
        self.phase = PHASE_ADVANCING
        plan.cursor += 1
        pos = plan.waypoints[plan.cursor]
        kind = "final" if plan.cursor == len(plan.waypoints) - 1 else "guide"
        self.marker = Marker(
            id=self.marker.id, box=self._marker_box(pos), kind=kind, placed_us=now_us,
        )
        self._reset_dwell(self.marker.id, now_us)
        self.record.steps.append(StepRecord(marker_id=self.marker.id, placed_us=now_us))
        self.phase = PHASE_AWAITING
        return [{
            "type": "MARKER_MOVE",
            "marker_id": self.marker.id,
            "pos": list(pos.as_tuple()),
        }]

    def _handle_timeout(self, now_us: int) -> List[dict]:
        self.record.timeouts += 1
        self._consecutive_timeouts += 1
        if self._consecutive_timeouts >= self.config.max_timeouts:
            return self._finish_episode(now_us, success=False)
        # Recovery: re-place the marker halfway (in angle) toward the gaze.
        gaze = self.track.latest
        pos = self.marker.box.center
        if gaze is not None:
            origin = gaze.ray.origin
            to_marker = pos - origin
            rng = to_marker.norm()
            if rng > 1e-9:
                m_dir = to_marker * (1.0 / rng)
                half = angular_distance(m_dir, gaze.ray.direction) / 2.0
                new_dir = rotate_towards(m_dir, gaze.ray.direction, half)
                pos = origin + new_dir * rng
        marker, msg = self._place_marker(pos, "pulse", now_us, marker_id=self.marker.id)
        self.marker = marker
        self._reset_dwell(marker.id, now_us)
        # The step clock restarts at the recovery placement.
        self.record.steps[-1].placed_us = now_us
        return [msg]

    def current_fixation(self) -> Optional[FixationEvent]:
        return detect_fixation(
            self.track,
            self.config.fixation_window_ms,
            self.config.fixation_dispersion_deg,
        )
