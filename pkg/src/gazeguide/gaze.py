"""Gaze stream processing: sample buffering, kinematics, fixations, dwell.

Timestamps are integer microseconds since the session epoch.  A track only
ever accepts strictly increasing timestamps; late or duplicate samples are
dropped at the door.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Optional

from .geometry import Aabb, Ray, Vec3, angular_distance, point_at, ray_aabb_intersect


class InsufficientSamples(ValueError):
    """Kinematics asked for before the track holds three samples."""


@dataclass(frozen=True)
class GazeSample:
    ts_us: int
    ray: Ray


@dataclass(frozen=True)
class GazeKinematics:
    ts_us: int
    velocity: Vec3  # m/s of the gaze point at reference depth
    speed: float


@dataclass(frozen=True)
class FixationEvent:
    start_us: int
    end_us: int
    centroid_dir: Vec3
    dispersion_deg: float


@dataclass(frozen=True)
class DwellState:
    marker_id: int
    accumulated_us: int = 0
    gap_us: int = 0
    confirmed: bool = False
    last_ts_us: Optional[int] = None


class GazeTrack:
    """Bounded, time-ordered buffer of gaze samples (single writer)."""

    def __init__(self, capacity: int = 512, reference_depth_m: float = 2.0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not (reference_depth_m > 0):
            raise ValueError("reference depth must be > 0")
        self.capacity = capacity
        self.reference_depth_m = reference_depth_m
        self._samples: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._samples)

    @property
    def samples(self) -> list:
        return list(self._samples)

    @property
    def latest(self) -> Optional[GazeSample]:
        return self._samples[-1] if self._samples else None

    def push_sample(self, s: GazeSample) -> bool:
        if self._samples and s.ts_us <= self._samples[-1].ts_us:
            return False
        self._samples.append(s)
        return True


def push_sample(track: GazeTrack, s: GazeSample) -> bool:
    return track.push_sample(s)


def gaze_point(s: GazeSample, depth_m: float) -> Vec3:
    if not (math.isfinite(depth_m) and depth_m > 0):
        raise ValueError(f"depth must be finite and > 0, got {depth_m!r}")
    return point_at(s.ray, depth_m)


def estimate_kinematics(track: GazeTrack, depth_m: Optional[float] = None) -> GazeKinematics:
    """Velocity of the gaze point at reference depth.

    Central finite difference about the midpoint of the two most recent
    samples: exact for linear motion at any spacing, and second order with
    the smallest usable stencil for everything else.
    """
    if len(track) < 3:
        raise InsufficientSamples(f"need >= 3 samples, have {len(track)}")
    depth = depth_m if depth_m is not None else track.reference_depth_m
    s1, s2 = track.samples[-2:]
    p1 = gaze_point(s1, depth)
    p2 = gaze_point(s2, depth)
    dt_s = (s2.ts_us - s1.ts_us) / 1e6
    v = (p2 - p1) * (1.0 / dt_s)
    return GazeKinematics(ts_us=(s1.ts_us + s2.ts_us) // 2,
                          velocity=v, speed=v.norm())


def detect_fixation(
    track: GazeTrack, window_ms: int, dispersion_threshold_deg: float
) -> Optional[FixationEvent]:
    """Most recent maximal low-dispersion window (dispersion-threshold style).

    Dispersion is the maximum pairwise angular distance between gaze
    directions in the window; a window qualifies when it spans at least
    window_ms and its dispersion stays at or below the threshold.
    """
    samples = track.samples
    n = len(samples)
    window_us = window_ms * 1000
    for e in range(n - 1, -1, -1):
        dirs = [samples[e].ray.direction]
        disp = 0.0
        s = e
        while s > 0:
            cand = samples[s - 1].ray.direction
            new_disp = disp
            ok = True
            for d in dirs:
                a = angular_distance(cand, d)
                if a > dispersion_threshold_deg:
                    ok = False
                    break
                if a > new_disp:
                    new_disp = a
            if not ok:
                break
            dirs.append(cand)
            disp = new_disp
            s -= 1
        if samples[e].ts_us - samples[s].ts_us >= window_us:
            mean = Vec3(0.0, 0.0, 0.0)
            for d in dirs:
                mean = mean + d
            return FixationEvent(
                start_us=samples[s].ts_us,
                end_us=samples[e].ts_us,
                centroid_dir=mean.normalized(),
                dispersion_deg=disp,
            )
    return None


def update_dwell(
    state: DwellState,
    s: GazeSample,
    marker_box: Aabb,
    dwell_ms: int,
    gap_tolerance_ms: int,
) -> DwellState:
    """Accumulate gaze-on-marker time; short gaps tolerated, long gaps reset.

    Once confirmed, the state latches and never unconfirms.
    """
    hit = ray_aabb_intersect(s.ray, marker_box) is not None
    delta = 0 if state.last_ts_us is None else s.ts_us - state.last_ts_us
    acc = state.accumulated_us
    gap = state.gap_us
    if hit:
        acc += delta
        gap = 0
    else:
        gap += delta
        if gap > gap_tolerance_ms * 1000:
            acc = 0
    confirmed = state.confirmed or acc >= dwell_ms * 1000
    return replace(
        state,
        accumulated_us=acc,
        gap_us=gap,
        confirmed=confirmed,
        last_ts_us=s.ts_us,
    )
