import math
import random

import pytest

from gazeguide.config import EngineConfig
from gazeguide.engine import (
    AttentionEngine,
    Busy,
    IntervalPolicy,
    NoFixation,
    Poi,
    adapt_interval,
    plan_chain,
)
from gazeguide.gaze import GazeSample
from gazeguide.geometry import (
    Frustum,
    Ray,
    Vec3,
    angular_distance,
    frustum_contains,
)

ORIGIN = Vec3(0.0, 1.6, 0.0)
FWD = Vec3(0.0, 0.0, 1.0)


def gaze(ts_us, direction=FWD, origin=ORIGIN):
    return GazeSample(ts_us, Ray(origin, direction.normalized()))


def frustum(direction=FWD, origin=ORIGIN):
    return Frustum.from_gaze(Ray(origin, direction), 43.0, 29.0)


def dir_to(p, origin=ORIGIN):
    return (p - origin).normalized()


class TestPlanChain:
    def test_even_spacing_along_chain(self):
        # Gaze along +Z; POI off-axis so the anchor-to-POI distance is
        # exactly 4 m: waypoints sit 1 m apart, last one on the POI.
        g = Ray(Vec3(0, 0, 0), Vec3(0, 0, 1))
        f = Frustum.from_gaze(g, 43.0, 29.0)
        r = 5.0
        anchor = Vec3(0, 0, r)
        # POI at range r from the origin and 4 m from the anchor: rotate the
        # anchor direction by the chord angle 2*asin(2/r).
        theta = 2 * math.asin(2.0 / r)
        poi_pos = Vec3(r * math.sin(theta), 0, r * math.cos(theta))
        assert (poi_pos - g.origin).norm() == pytest.approx(r, abs=1e-9)
        dist = (poi_pos - anchor).norm()
        assert dist == pytest.approx(4.0, abs=1e-9)
        plan = plan_chain(g, f, Poi("p", poi_pos), 1.0)
        assert len(plan.waypoints) == 4
        u = (poi_pos - anchor).normalized()
        for k, w in enumerate(plan.waypoints[:-1], start=1):
            assert (w - (anchor + u * (k * 1.0))).norm() < 1e-9
        assert (plan.waypoints[-1] - poi_pos).norm() < 1e-9

    def test_poi_on_gaze_axis_single_waypoint(self):
        g = Ray(Vec3(0, 0, 0), Vec3(0, 0, 1))
        f = Frustum.from_gaze(g, 43.0, 29.0)
        plan = plan_chain(g, f, Poi("p", Vec3(0, 0, 6)), 1.0)
        assert len(plan.waypoints) == 1
        assert (plan.waypoints[0] - Vec3(0, 0, 6)).norm() < 1e-9

    def test_remainder_clamps_to_poi(self):
        g = Ray(Vec3(0, 0, 0), Vec3(0, 0, 1))
        f = Frustum.from_gaze(g, 43.0, 29.0)
        poi_pos = Vec3(2.0, 1.0, 4.0)
        plan = plan_chain(g, f, Poi("p", poi_pos), 1.0)
        anchor = Vec3(0, 0, poi_pos.norm())
        dist = (poi_pos - anchor).norm()
        assert len(plan.waypoints) == math.ceil(dist / 1.0)
        assert (plan.waypoints[-1] - poi_pos).norm() < 1e-9

    def test_count_law_random(self):
        rng = random.Random(42)
        for _ in range(200):
            d = Vec3(rng.gauss(0, 1), rng.gauss(0, 1), rng.gauss(0, 1)).normalized()
            g = Ray(ORIGIN, d)
            f = frustum(d)
            poi = Poi("p", Vec3(rng.uniform(-6, 6), rng.uniform(-2, 5),
                                rng.uniform(-6, 6)))
            if (poi.position - ORIGIN).norm() < 0.1:
                continue
            dd = rng.choice([0.25, 0.5, 1.0, 2.0])
            plan = plan_chain(g, f, poi, dd)
            r = (poi.position - ORIGIN).norm()
            anchor = ORIGIN + d * r  # gaze point in own frustum: no clamp
            dist = (poi.position - anchor).norm()
            if dist < 1e-6:
                assert len(plan.waypoints) == 1
            else:
                assert len(plan.waypoints) == math.ceil(dist / dd)
            assert (plan.waypoints[-1] - poi.position).norm() < 1e-9
            # Consecutive spacing never exceeds delta_d.
            pts = [anchor] + plan.waypoints
            for a, b in zip(pts, pts[1:]):
                assert (b - a).norm() <= dd + 1e-9

    def test_poi_behind_user_first_waypoint_visible(self):
        g = Ray(ORIGIN, FWD)
        f = frustum()
        poi = Poi("p", ORIGIN + Vec3(0.5, 0, -6.0))
        plan = plan_chain(g, f, poi, 1.0)
        assert frustum_contains(f, plan.waypoints[0])
        assert any(not frustum_contains(f, w) for w in plan.waypoints)

    def test_rejects_bad_spacing(self):
        with pytest.raises(ValueError):
            plan_chain(Ray(ORIGIN, FWD), frustum(), Poi("p", Vec3(0, 0, 5)), 0.0)


def start_engine(cfg=None, poi_pos=Vec3(2, 1.6, 4), mode=None):
    eng = AttentionEngine(cfg or EngineConfig())
    eng.on_gaze(gaze(0))
    out = eng.start_attraction(Poi("p1", poi_pos), mode=mode)
    return eng, out


def drive_to_confirm(eng, target, t_start, hz=100):
    """Feed gaze at the marker center until a confirmation fires."""
    t = t_start
    d = dir_to(target)
    for _ in range(200):
        t += round(1e6 / hz)
        out = eng.on_gaze(gaze(t, d))
        for m in out:
            if m["type"] == "GAZE_CONFIRMED":
                return t, out
    raise AssertionError("no confirmation within 2 s")


class TestStartAttraction:
    def test_places_first_marker(self):
        eng, out = start_engine()
        assert [m["type"] for m in out] == ["MARKER_PLACE"]
        assert eng.phase == "awaiting_gaze"
        assert len(eng.record.steps) == 1

    def test_busy_while_active(self):
        eng, _ = start_engine()
        with pytest.raises(Busy):
            eng.start_attraction(Poi("p2", Vec3(1, 1.6, 3)))

    def test_requires_gaze(self):
        eng = AttentionEngine(EngineConfig())
        with pytest.raises(Exception):
            eng.start_attraction(Poi("p1", Vec3(0, 1.6, 4)))


class TestGatedAdvancement:
    def test_full_episode_fig2_sequence(self):
        cfg = EngineConfig(delta_d_m=1.0)
        eng, out = start_engine(cfg)
        plan = eng.plan
        n = len(plan.waypoints)
        assert n >= 2
        emissions = list(out)
        t = 0
        while eng.phase != "idle":
            target = eng.marker.box.center
            t, last = drive_to_confirm(eng, target, t)
            emissions.extend(last)
        types = [m["type"] for m in emissions]
        assert types.count("GAZE_CONFIRMED") == n
        assert types.count("MARKER_PLACE") == 1
        assert types.count("MARKER_MOVE") == n - 1
        assert types.count("EPISODE_DONE") == 1
        rec = eng.last_record
        assert rec.success
        assert len(rec.steps) == n
        for st in rec.steps:
            assert st.t_i_us is not None
            assert st.t_i_us >= cfg.dwell_ms * 1000

    def test_marker_never_moves_without_confirmation(self):
        eng, _ = start_engine()
        pos0 = eng.marker.box.center
        t = 0
        # Gaze far from the marker for a while (but below timeout).
        for i in range(50):
            t += 10_000
            out = eng.on_gaze(gaze(t, Vec3(0, 0, -1)))
            assert not any(m["type"] == "MARKER_MOVE" for m in out)
        eng.on_tick(t)
        assert (eng.marker.box.center - pos0).norm() < 1e-12

    def test_total_time_accounting(self):
        eng, _ = start_engine()
        t = 0
        while eng.phase != "idle":
            t, _ = drive_to_confirm(eng, eng.marker.box.center, t)
        rec = eng.last_record
        assert rec.total_us == t - rec.start_us
        span = sum(
            (rec.steps[i + 1].placed_us if i + 1 < len(rec.steps)
             else rec.start_us + rec.total_us) - st.placed_us
            for i, st in enumerate(rec.steps)
        )
        assert span == rec.total_us


class TestScheduledAdvancement:
    def test_advances_on_schedule_without_gaze(self):
        cfg = EngineConfig(mode="scheduled", delta_t_ms=500, adaptive_interval=False)
        eng, _ = start_engine(cfg, mode="scheduled")
        n = len(eng.plan.waypoints)
        moves = 0
        t = 0
        for _ in range(200):
            t += 20_000
            out = eng.on_tick(t)
            moves += sum(1 for m in out if m["type"] == "MARKER_MOVE")
        assert moves == n - 1
        # Marker parked at the final waypoint awaiting confirmation.
        assert eng.phase == "awaiting_gaze"
        assert eng.plan.cursor == n - 1
        # Steps advanced on schedule carry no acquisition time.
        for st in eng.record.steps[:-1]:
            assert st.t_i_us is None

    def test_confirmation_records_t_i_but_schedule_drives(self):
        cfg = EngineConfig(mode="scheduled", delta_t_ms=2000, adaptive_interval=False)
        eng, _ = start_engine(cfg, mode="scheduled")
        target = eng.marker.box.center
        t, out = drive_to_confirm(eng, target, 0)
        # Confirmed, but no movement until the schedule fires.
        assert not any(m["type"] == "MARKER_MOVE" for m in out)
        out = eng.on_tick(t + 2_000_000)
        assert any(m["type"] in ("MARKER_MOVE", "EPISODE_DONE") for m in out)


class TestAdaptInterval:
    def test_ewma_example(self):
        policy = IntervalPolicy(200, 3000, 0.5, 1.2)
        policy, dt1 = adapt_interval(policy, 400_000)
        assert dt1 == 480
        policy, dt2 = adapt_interval(policy, 400_000)
        assert dt2 == 480

    def test_clamp_to_max(self):
        policy = IntervalPolicy(200, 3000, 0.5, 1.2)
        _, dt = adapt_interval(policy, 10_000_000)
        assert dt == 3000

    def test_clamp_to_min(self):
        policy = IntervalPolicy(200, 3000, 0.5, 1.2)
        _, dt = adapt_interval(policy, 0)
        assert dt == 200

    def test_bounds_property_sweep(self):
        rng = random.Random(7)
        for _ in range(1000):
            policy = IntervalPolicy(200, 3000, rng.uniform(0.05, 1.0),
                                    rng.uniform(0.2, 3.0))
            for _ in range(rng.randrange(1, 20)):
                policy, dt = adapt_interval(policy, rng.randrange(0, 20_000_000))
                assert 200 <= dt <= 3000


class TestTimeouts:
    def test_recovery_replaces_marker_nearer_gaze(self):
        cfg = EngineConfig(timeout_ms=5000)
        eng, _ = start_engine(cfg)
        away = Vec3(0, 0, -1)
        eng.on_gaze(gaze(10_000, away))
        pos0 = eng.marker.box.center
        out = eng.on_tick(5_010_000)
        places = [m for m in out if m["type"] == "MARKER_PLACE"]
        assert len(places) == 1
        assert places[0]["kind"] == "pulse"
        new_pos = Vec3.from_seq(places[0]["pos"])
        a0 = angular_distance(dir_to(pos0), away)
        a1 = angular_distance(dir_to(new_pos), away)
        assert a1 == pytest.approx(a0 / 2, abs=1e-6)
        assert eng.record.timeouts == 1

    def test_three_timeouts_fail_episode(self):
        cfg = EngineConfig(timeout_ms=5000, max_timeouts=3)
        eng, _ = start_engine(cfg)
        eng.on_gaze(gaze(10_000, Vec3(0, 0, -1)))
        done = []
        t = 0
        for _ in range(4):
            t += 5_010_000
            done.extend(m for m in eng.on_tick(t) if m["type"] == "EPISODE_DONE")
            if done:
                break
        assert len(done) == 1
        assert done[0]["success"] is False
        assert done[0]["timeouts"] == 3
        assert eng.phase == "idle"

    def test_confirmation_resets_consecutive_timeouts(self):
        cfg = EngineConfig(timeout_ms=5000, max_timeouts=3)
        eng, _ = start_engine(cfg)
        eng.on_gaze(gaze(10_000, Vec3(0, 0, -1)))
        eng.on_tick(5_010_000)  # first timeout
        t, _ = drive_to_confirm(eng, eng.marker.box.center, 5_010_000)
        assert eng._consecutive_timeouts == 0


class TestStartShift:
    def hold_fixation(self, eng, direction, t_start=0, ms=250):
        t = t_start
        for _ in range(ms // 10):
            t += 10_000
            eng.on_gaze(gaze(t, direction))
        return t

    def test_pulse_at_eccentricity_toward_poi(self):
        eng = AttentionEngine(EngineConfig())
        self.hold_fixation(eng, FWD)
        poi = Poi("p1", ORIGIN + Vec3(4, 0, 0))
        out = eng.start_shift(poi)
        assert out[0]["type"] == "MARKER_PLACE"
        assert out[0]["kind"] == "pulse"
        pulse_dir = dir_to(Vec3.from_seq(out[0]["pos"]))
        assert angular_distance(pulse_dir, FWD) == pytest.approx(8.0, abs=1e-6)
        # Rotated toward the POI: closer to +X than the fixation was.
        poi_dir = dir_to(poi.position)
        assert angular_distance(pulse_dir, poi_dir) < angular_distance(FWD, poi_dir)

    def test_confirmation_chains_into_attraction(self):
        eng = AttentionEngine(EngineConfig())
        t = self.hold_fixation(eng, FWD)
        poi = Poi("p1", ORIGIN + Vec3(3, 0, 3))
        eng.start_shift(poi)
        pulse_pos = eng.marker.box.center
        t, out = drive_to_confirm(eng, pulse_pos, t)
        types = [m["type"] for m in out]
        assert "MARKER_REMOVE" in types
        assert "MARKER_PLACE" in types
        assert eng.phase == "awaiting_gaze"
        assert eng.plan is not None
        assert eng.plan.poi_id == "p1"

    def test_no_fixation_error(self):
        eng = AttentionEngine(EngineConfig())
        # Sweeping gaze: no fixation present.
        t = 0
        for i in range(30):
            t += 10_000
            ang = math.radians(i * 1.0)
            eng.on_gaze(gaze(t, Vec3(math.sin(ang), 0, math.cos(ang))))
        with pytest.raises(NoFixation):
            eng.start_shift(Poi("p1", ORIGIN + Vec3(4, 0, 0)))


class TestStateMachineFuzz:
    def test_random_interleavings_never_crash(self):
        rng = random.Random(1234)
        for trial in range(30):
            eng = AttentionEngine(EngineConfig())
            t = 0
            visible = 0
            for _ in range(300):
                t += rng.randrange(1_000, 40_000)
                action = rng.random()
                out = []
                if action < 0.6:
                    d = Vec3(rng.gauss(0, 0.3), rng.gauss(0, 0.3), 1.0).normalized()
                    out = eng.on_gaze(gaze(t, d))
                elif action < 0.85:
                    out = eng.on_tick(t)
                else:
                    poi = Poi("p", Vec3(rng.uniform(-3, 3), 1.6, rng.uniform(1, 6)))
                    try:
                        if rng.random() < 0.5:
                            out = eng.start_attraction(poi)
                        else:
                            out = eng.start_shift(poi)
                    except Exception as exc:
                        from gazeguide.engine import EngineError
                        assert isinstance(exc, EngineError)
                assert eng.phase in (
                    "idle", "awaiting_gaze", "advancing", "reached", "timed_out")
                for m in out:
                    if m["type"] == "MARKER_PLACE":
                        visible = 1
                    elif m["type"] == "MARKER_REMOVE":
                        visible -= 1
                # At most one visible marker at any time.
                assert visible in (0, 1)
