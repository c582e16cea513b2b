"""Visuo-tactile events and the intermodal likelihood."""

import numpy as np
import pytest

from bodyschema.forward import SelectionModel
from bodyschema.touch import (Interval, SkinFrame, TouchChannelModel,
                              TouchEvent, TouchParams, VisualEvent,
                              detect_tactile_events, detect_visual_events,
                              events_from_json, events_to_json, load_other_csv,
                              load_skin_csv, pair_events, save_other_csv,
                              save_skin_csv, tactile_observation,
                              touch_likelihood, touch_likelihood_gradient)

PARAMS = TouchParams()


def skin_stream(active_windows, n_cells=10, dt=0.05, duration=4.0, level=0.9):
    """Skin frames with the given cells hot inside (cell, t0, t1) windows."""
    frames = []
    n = int(duration / dt) + 1
    for k in range(n):
        t = k * dt
        prox = np.full(n_cells, 0.1)
        for cell, t0, t1 in active_windows:
            if t0 <= t <= t1:
                prox[cell] = level
        frames.append(SkinFrame(t=t, proximities=prox))
    return frames


def union_oracle(windows, dt=0.05, duration=4.0, thresh=0.7, level=0.9):
    """Brute-force interval union over the discretized stream."""
    n = int(duration / dt) + 1
    hot = np.zeros(n, bool)
    for cell, t0, t1 in windows:
        for k in range(n):
            if t0 <= k * dt <= t1 and level > thresh:
                hot[k] = True
    events = []
    onset = None
    for k in range(n):
        if hot[k] and onset is None:
            onset = k * dt
        elif not hot[k] and onset is not None:
            events.append((onset, k * dt))
            onset = None
    if onset is not None:
        events.append((onset, (n - 1) * dt))
    return events


class TestTactileEvents:
    def test_all_below_threshold(self):
        frames = skin_stream([], level=0.0)
        assert detect_tactile_events(frames, PARAMS) == []

    def test_single_cell_interval(self):
        frames = skin_stream([(3, 1.0, 2.0)], level=0.71)
        events = detect_tactile_events(frames, PARAMS)
        assert len(events) == 1
        assert events[0].t_onset == pytest.approx(1.0)
        assert events[0].t_offset == pytest.approx(2.05, abs=1e-9)

    def test_overlapping_cells_merge(self):
        windows = [(1, 0.5, 1.5), (2, 1.0, 2.5), (4, 3.0, 3.4)]
        frames = skin_stream(windows)
        got = detect_tactile_events(frames, PARAMS)
        expected = union_oracle(windows)
        assert len(got) == len(expected)
        for ev, (t0, t1) in zip(got, expected):
            assert ev.t_onset == pytest.approx(t0)
            # detector closes one frame after the last hot sample
            assert abs(ev.t_offset - t1) <= 0.05 + 1e-9

    def test_event_at_stream_end_stays_open_until_last_frame(self):
        frames = skin_stream([(0, 3.0, 10.0)])
        events = detect_tactile_events(frames, PARAMS)
        assert events[-1].t_offset == pytest.approx(4.0)

    def test_idempotent_and_prefix_invariant(self):
        frames = skin_stream([(2, 1.0, 2.0)])
        e1 = detect_tactile_events(frames, PARAMS)
        e2 = detect_tactile_events(frames, PARAMS)
        assert e1 == e2
        quiet = skin_stream([], duration=1.0, level=0.0)
        shifted = quiet + [SkinFrame(t=f.t + 1.05, proximities=f.proximities)
                           for f in frames]
        e3 = detect_tactile_events(shifted, PARAMS)
        assert len(e3) == len(e1)
        assert e3[0].t_onset == pytest.approx(e1[0].t_onset + 1.05)


class TestVisualEvents:
    @staticmethod
    def traj(positions, dt=0.05):
        return np.asarray([[k * dt, p[0], p[1]] for k, p in enumerate(positions)])

    def test_stationary_trajectory_single_event(self):
        pos = [(100.0, 100.0)] * 60
        events = detect_visual_events(self.traj(pos), PARAMS)
        assert len(events) == 1
        assert events[0].t_onset == pytest.approx(0.0)
        assert events[0].t_offset == pytest.approx(59 * 0.05)

    def test_constant_fast_velocity_no_events(self):
        pos = [(100.0 + 20.0 * k, 100.0) for k in range(60)]   # 400 px/s
        assert detect_visual_events(self.traj(pos), PARAMS) == []

    def test_move_dwell_move(self):
        dt = 0.05
        pos = []
        for k in range(40):                      # approach at 200 px/s
            pos.append((10.0 * k, 50.0))
        dwell = pos[-1]
        for _ in range(20):                      # dwell 1 s
            pos.append(dwell)
        for k in range(40):                      # retreat
            pos.append((dwell[0] + 10.0 * (k + 1), 50.0))
        events = detect_visual_events(self.traj(pos, dt), PARAMS)
        assert len(events) == 1
        # onset/offset within a smoothing window of the true dwell
        assert events[0].t_onset == pytest.approx(40 * dt, abs=PARAMS.stop_window + dt)
        assert events[0].t_offset == pytest.approx(60 * dt, abs=PARAMS.stop_window + dt)
        assert np.allclose(events[0].position, dwell, atol=1.0)

    def test_too_few_samples(self):
        assert detect_visual_events(np.zeros((1, 3)), PARAMS) == []
        assert detect_visual_events(np.zeros((0, 3)), PARAMS) == []


class TestPairEvents:
    def test_coincident_onsets_active(self):
        t = [Interval(2.0, 3.0)]
        v = [VisualEvent(2.0, 3.0, np.array([100.0, 50.0]))]
        ev, = pair_events(t, v, PARAMS)
        assert ev.delta == 0.0
        assert ev.active
        assert np.array_equal(ev.o_v, [100.0, 50.0])

    def test_far_apart_inactive(self):
        t = [Interval(12.0, 13.0)]
        v = [VisualEvent(2.0, 3.0, np.zeros(2))]
        ev, = pair_events(t, v, PARAMS)
        assert ev.delta == pytest.approx(10.0)
        assert not ev.active

    def test_small_offset_active(self):
        t = [Interval(2.2, 3.0)]
        v = [VisualEvent(2.0, 3.0, np.zeros(2))]
        ev, = pair_events(t, v, PARAMS)
        assert ev.delta == pytest.approx(0.2)
        assert ev.active

    def test_pairs_to_nearest_visual_onset(self):
        t = [Interval(5.1, 6.0)]
        v = [VisualEvent(1.0, 2.0, np.array([1.0, 1.0])),
             VisualEvent(5.0, 6.0, np.array([2.0, 2.0]))]
        ev, = pair_events(t, v, PARAMS)
        assert np.array_equal(ev.o_v, [2.0, 2.0])

    def test_no_visual_events(self):
        ev, = pair_events([Interval(1.0, 2.0)], [], PARAMS)
        assert not ev.active


def active_event(o_v=(0.0, 0.0), delta=0.0):
    return TouchEvent(o_v=np.asarray(o_v, float), delta=delta, active=True,
                      t_onset=0.0, t_offset=1.0)


class TestLikelihood:
    # visual stand-in: g_v(x) = (x1, x2), exact Jacobian rows
    VIS = SelectionModel((0, 1), 3)

    def test_maximum_at_match(self):
        ev = active_event()
        x = np.array([0.0, 0.0, 0.7])
        assert touch_likelihood(x, ev, self.VIS, PARAMS) == pytest.approx(
            PARAMS.a1 * PARAMS.a2)

    def test_temporal_decay_to_zero(self):
        big = TouchEvent(o_v=np.zeros(2), delta=50.0, active=True,
                         t_onset=0.0, t_offset=1.0)
        assert touch_likelihood(np.zeros(3), big, self.VIS, PARAMS) < 1e-300

    def test_unit_offset_value(self):
        ev = active_event(o_v=(1.0, 0.0))
        got = touch_likelihood(np.zeros(3), ev, self.VIS, PARAMS)
        assert got == pytest.approx(PARAMS.a1 * PARAMS.a2 * np.exp(-1.0), rel=1e-12)

    def test_inactive_returns_zero(self):
        ev = TouchEvent(o_v=np.zeros(2), delta=3.0, active=False,
                        t_onset=0.0, t_offset=1.0)
        assert touch_likelihood(np.zeros(3), ev, self.VIS, PARAMS) == 0.0

    def test_bounds_and_monotonicity(self):
        rng = np.random.default_rng(20)
        bound = PARAMS.a1 * PARAMS.a2
        ev = active_event()
        last = None
        for r in np.linspace(0.0, 3.0, 15):
            val = touch_likelihood(np.array([r, 0.0, 0.0]), ev, self.VIS, PARAMS)
            assert 0.0 <= val <= bound
            if last is not None:
                assert val < last
            last = val
        for _ in range(50):
            x = rng.normal(0, 2, 3)
            d = rng.uniform(-0.5, 0.5)
            val = touch_likelihood(x, active_event(delta=d), self.VIS, PARAMS)
            assert 0.0 <= val <= bound

    def test_gradient_zero_at_maximum(self):
        ev = active_event()
        g = touch_likelihood_gradient(np.array([0.0, 0.0, 1.0]), ev, self.VIS, PARAMS)
        assert np.allclose(g, 0.0, atol=1e-18)

    def test_gradient_finite_difference(self):
        rng = np.random.default_rng(21)
        step = 1e-6
        ev = active_event(o_v=(0.4, -0.3), delta=0.1)
        for _ in range(25):
            x = rng.normal(0, 1, 3)
            ana = touch_likelihood_gradient(x, ev, self.VIS, PARAMS)
            fd = np.zeros(3)
            for j in range(3):
                e = np.zeros(3)
                e[j] = step
                fd[j] = (touch_likelihood(x + e, ev, self.VIS, PARAMS)
                         - touch_likelihood(x - e, ev, self.VIS, PARAMS)) / (2 * step)
            assert np.all(np.abs(ana - fd) <= np.maximum(1e-4 * np.abs(fd), 1e-12))

    def test_gradient_ascent_direction(self):
        rng = np.random.default_rng(22)
        ev = active_event(o_v=(0.5, 0.5))
        for _ in range(20):
            x = rng.normal(0, 1, 3)
            g = touch_likelihood_gradient(x, ev, self.VIS, PARAMS)
            if np.linalg.norm(g) < 1e-12:
                continue
            v0 = touch_likelihood(x, ev, self.VIS, PARAMS)
            v1 = touch_likelihood(x + 1e-4 * g / np.linalg.norm(g), ev, self.VIS, PARAMS)
            assert v1 > v0


class TestObservation:
    def test_active_zero_delta(self):
        assert tactile_observation(active_event(), PARAMS) == pytest.approx(
            PARAMS.a1 * PARAMS.a2)

    def test_inactive_masked(self):
        ev = TouchEvent(o_v=np.zeros(2), delta=9.0, active=False,
                        t_onset=0.0, t_offset=1.0)
        assert tactile_observation(ev, PARAMS) is None

    def test_delta_formula(self):
        ev = active_event(delta=0.2)
        expected = PARAMS.a1 * PARAMS.a2 * np.exp(-PARAMS.b2 * 0.04)
        assert tactile_observation(ev, PARAMS) == pytest.approx(expected, rel=1e-12)


class TestChannelModel:
    def test_scheduling(self):
        vis = SelectionModel((0, 1), 3)
        ev = TouchEvent(o_v=np.zeros(2), delta=0.0, active=True,
                        t_onset=2.0, t_offset=4.0)
        inactive = TouchEvent(o_v=np.zeros(2), delta=5.0, active=False,
                              t_onset=6.0, t_offset=7.0)
        tm = TouchChannelModel((ev, inactive), vis, PARAMS)
        assert tm.at_time(1.0) is None
        assert tm.at_time(3.0) is not None
        assert tm.at_time(6.5) is None            # inactive events never bind
        assert tm.observation_at(3.0) == pytest.approx(PARAMS.a1 * PARAMS.a2)
        bound = tm.at_time(2.0)
        out = bound.predict(np.array([0.0, 0.0, 0.5]))
        assert out.shape == (1,)
        assert bound.predict_gradient(np.zeros(3)).shape == (1, 3)


class TestIO:
    def test_skin_csv_roundtrip(self, tmp_path):
        frames = skin_stream([(2, 0.5, 1.0)], n_cells=5, duration=1.5)
        path = tmp_path / "skin.csv"
        save_skin_csv(frames, path)
        loaded = load_skin_csv(path)
        assert len(loaded) == len(frames)
        assert np.array_equal(loaded[7].proximities, frames[7].proximities)

    def test_other_csv_roundtrip(self, tmp_path):
        traj = np.array([[0.0, 10.0, 20.0], [0.05, 11.0, 21.0]])
        path = tmp_path / "other.csv"
        save_other_csv(traj, path)
        assert np.array_equal(load_other_csv(path), traj)

    def test_events_json_roundtrip(self, tmp_path):
        evs = [active_event(o_v=(320.5, 241.25), delta=0.1),
               TouchEvent(o_v=np.array([1.0, 2.0]), delta=3.0, active=False,
                          t_onset=5.0, t_offset=6.0)]
        path = tmp_path / "events.json"
        events_to_json(evs, path)
        loaded = events_from_json(path)
        assert len(loaded) == 2
        assert loaded[0].delta == evs[0].delta
        assert np.array_equal(loaded[0].o_v, evs[0].o_v)
        assert loaded[1].active is False


class TestDriftDirection:
    def test_estimate_moves_visual_prediction_toward_touch_location(self):
        # tactile channel active with all other channels consistent: the
        # stationary drift takes g_v(x_hat) toward o_v
        from bodyschema.estimator import (EstimatorConfig, SensorChannel,
                                          SensorFrame, init_state, run)
        from bodyschema.forward import IdentityModel

        vis = SelectionModel((0, 1), 3)
        params = TouchParams(a2=2000.0)           # amplitude-raised gain
        truth = np.array([0.2, -0.3, 0.5])
        o_v = truth[:2] + np.array([0.5, 0.0])
        ev = TouchEvent(o_v=o_v, delta=0.0, active=True, t_onset=0.0,
                        t_offset=30.0)
        tm = TouchChannelModel((ev,), vis, params)
        p = SensorChannel("p", 3, np.ones(3), IdentityModel(3))
        tch = SensorChannel("t", 1, np.ones(1), tm)
        cfg = EstimatorConfig(dt=0.05, lam=1.0, sigma_x=np.ones(3))
        s_t = tactile_observation(ev, params)
        frames = [SensorFrame(t=(k + 1) * cfg.dt,
                              readings={"p": truth, "t": np.array([s_t])})
                  for k in range(400)]
        log = run(frames, init_state(truth.copy(), [p, tch]), [p, tch], cfg)
        d0 = np.linalg.norm(vis.predict(log.x_hat[0]) - o_v)
        d1 = np.linalg.norm(vis.predict(log.x_hat[-1]) - o_v)
        assert d1 < d0
        grad = touch_likelihood_gradient(log.x_hat[0], ev, vis, params)
        drift = log.x_hat[-1] - log.x_hat[0]
        assert drift @ grad > 0.0
