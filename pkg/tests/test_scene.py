"""Scenario model: frames, windows, vectorization, synthesis, file format."""

import numpy as np
import pytest

from demopp import scene as sc
from demopp import synth


def make_scenario(t_h=20, t_m=12, n_agents=2, seed=0, aoi=("a0",)):
    rng = np.random.default_rng(seed)
    total = t_h + t_m
    agents = []
    for i in range(n_agents):
        start = rng.uniform(-20, 20, 2)
        vel = rng.uniform(-5, 5, 2)
        t = np.arange(total)[:, None]
        xy = start + vel * t * 0.1
        heading = np.full(total, np.arctan2(vel[1], vel[0]))
        track_vel = np.tile(vel, (total, 1))
        agents.append(sc.AgentTrack(f"a{i}", "vehicle", xy, heading, track_vel, np.ones(total, bool)))
    lanes = [
        sc.MapPolyline("lane-0", "lane", np.stack([np.linspace(-50, 50, 11), np.zeros(11)], 1)),
        sc.MapPolyline("cross-0", "crossing", np.array([[5.0, -5.0], [5.0, 5.0]])),
    ]
    return sc.Scenario("scn-test", 0.1, t_h, list(aoi), agents, lanes)


# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------


class TestFrameTransform:
    def test_identity_leaves_points(self):
        tf = sc.FrameTransform((0.0, 0.0), 0.0)
        pts = np.array([[1.0, 2.0], [-3.0, 0.5]])
        assert np.allclose(tf.apply(pts), pts)

    def test_quarter_turn(self):
        tf = sc.FrameTransform((0.0, 0.0), np.pi / 2)
        assert np.allclose(tf.apply(np.array([[1.0, 0.0]])), [[0.0, -1.0]], atol=1e-12)

    def test_round_trip_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            tf = sc.FrameTransform(tuple(rng.uniform(-100, 100, 2)), rng.uniform(-np.pi, np.pi))
            pts = rng.uniform(-200, 200, (13, 2))
            back = tf.apply_inverse(tf.apply(pts))
            assert np.abs(back - pts).max() < 1e-9

    def test_composition_matches_sequential_application(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            t1 = sc.FrameTransform(tuple(rng.uniform(-50, 50, 2)), rng.uniform(-np.pi, np.pi))
            t2 = sc.FrameTransform(tuple(rng.uniform(-50, 50, 2)), rng.uniform(-np.pi, np.pi))
            pts = rng.uniform(-100, 100, (7, 2))
            assert np.abs(t2.compose(t1).apply(pts) - t2.apply(t1.apply(pts))).max() < 1e-9

    def test_agent_frame_puts_pose_at_origin_facing_x(self):
        scn = make_scenario()
        subs = sc.reorganize(scn, 1, 10)
        raw = sc.vectorize(subs[0])
        row = raw.aoi_rows[0]
        assert np.abs(raw.agent_pos[row]).max() < 1e-5
        last = raw.agent_step_mask[row].nonzero()[0][-1]
        assert raw.agents[row, last, 2] == pytest.approx(1.0, abs=1e-6)  # cos(local heading)
        assert raw.agents[row, last, 3] == pytest.approx(0.0, abs=1e-6)


# ---------------------------------------------------------------------------
# reorganize
# ---------------------------------------------------------------------------


class TestReorganize:
    def test_single_window_is_original_split(self):
        scn = make_scenario(t_h=20, t_m=12)
        subs = sc.reorganize(scn, 1, 15)
        assert len(subs) == 1
        assert subs[0].t_current == 20
        assert subs[0].future_steps == 12

    def test_av2_style_even_spacing(self):
        scn = make_scenario(t_h=50, t_m=60)
        subs = sc.reorganize(scn, 3, 30)
        assert [s.t_current for s in subs] == [30, 40, 50]
        assert all(s.future_steps == 60 for s in subs)

    def test_two_window_config(self):
        # 2 s history / 8 s future at 10 Hz, two windows of 1.5 s history
        scn = make_scenario(t_h=20, t_m=80)
        subs = sc.reorganize(scn, 2, 15)
        assert [s.t_current for s in subs] == [15, 20]
        assert all(s.future_steps == 80 for s in subs)

    def test_uneven_stride_rejected(self):
        scn = make_scenario(t_h=20, t_m=12)
        with pytest.raises(ValueError, match="stride"):
            sc.reorganize(scn, 3, 15)

    def test_oversized_history_rejected(self):
        scn = make_scenario(t_h=20, t_m=12)
        with pytest.raises(ValueError, match="history"):
            sc.reorganize(scn, 1, 25)

    def test_current_times_increase_and_end_at_original(self):
        scn = make_scenario(t_h=50, t_m=60)
        for n_sub, t_w in ((2, 30), (3, 30), (5, 10), (1, 50)):
            subs = sc.reorganize(scn, n_sub, t_w)
            currents = [s.t_current for s in subs]
            assert currents[-1] == scn.t_current
            assert all(b > a for a, b in zip(currents, currents[1:]))


# ---------------------------------------------------------------------------
# vectorize
# ---------------------------------------------------------------------------


class TestVectorize:
    def test_single_agent_single_lane(self):
        scn = make_scenario(n_agents=1)
        raw = sc.vectorize(sc.reorganize(scn, 1, 10)[0])
        assert raw.agents.shape == (1, 10, sc.AGENT_CHANNELS)
        assert raw.map_segments.shape[0] == 2
        assert raw.agent_step_mask.all()
        assert raw.future.shape == (1, 12, 2)

    def test_distant_polyline_excluded(self):
        scn = make_scenario(n_agents=1)
        far = np.stack([np.linspace(300, 400, 5), np.full(5, 300.0)], 1)
        scn.map_polylines.append(sc.MapPolyline("far", "lane", far))
        raw = sc.vectorize(sc.reorganize(scn, 1, 10)[0], radius_m=150.0)
        assert "far" not in raw.map_ids

    def test_retained_set_matches_bruteforce_filter(self):
        scns = synth.synth_generate(3, 4)
        for scn in scns:
            sub = sc.reorganize(scn, 1, 30, radius_m=40.0)[0]
            raw = sc.vectorize(sub, radius_m=40.0)
            aoi_pos = []
            for aid in scn.aoi:
                track = scn.agent(aid)
                aoi_pos.append(track.xy[scn.t_current - 1].astype(np.float64))
            keep_agents = set()
            for track in scn.agents:
                window = track.valid[scn.t_current - 30 : scn.t_current]
                if not window.any():
                    continue
                last = scn.t_current - 30 + window.nonzero()[0][-1]
                pos = track.xy[last].astype(np.float64)
                if track.id in scn.aoi or min(np.linalg.norm(pos - p) for p in aoi_pos) <= 40.0:
                    keep_agents.add(track.id)
            assert set(raw.agent_ids) == keep_agents
            keep_map = {
                pl.id
                for pl in scn.map_polylines
                if min(np.linalg.norm(pl.pts.astype(np.float64) - p, axis=1).min() for p in aoi_pos) <= 40.0
            }
            assert set(raw.map_ids) == keep_map

    def test_invalid_steps_masked_and_zeroed(self):
        scn = make_scenario(n_agents=2)
        scn.agents[1].valid[:15] = False
        raw = sc.vectorize(sc.reorganize(scn, 1, 10)[0])
        row = raw.agent_ids.index("a1")
        assert not raw.agent_step_mask[row, :5].any()
        assert raw.agent_step_mask[row, 5:].all()
        assert np.abs(raw.agents[row, :5]).max() == 0.0

    def test_aoi_without_history_rejected(self):
        scn = make_scenario(n_agents=1)
        scn.agents[0].valid[:] = False
        with pytest.raises(ValueError, match="unobserved"):
            sc.reorganize(scn, 1, 10)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def test_resample_uniform_arclength():
    pts = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]])
    out = sc.resample_polyline(pts, segments=4)
    assert out.shape == (5, 2)
    d = np.linalg.norm(np.diff(out, axis=0), axis=1)
    assert np.allclose(d, 5.0, atol=1e-9)


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------


class TestSynth:
    def test_same_seed_byte_identical(self):
        a = synth.synth_generate(11, 6)
        b = synth.synth_generate(11, 6)
        assert [sc.scenario_to_line(x) for x in a] == [sc.scenario_to_line(x) for x in b]

    def test_straight_zero_noise_matches_constant_velocity(self):
        for scn in synth.synth_generate(4, 3, profile="straight", noise=0.0):
            cv = synth.constant_velocity_prediction(scn, "focal")
            gt = scn.agent("focal").xy[scn.t_current :]
            assert np.abs(cv - gt).max() < 1e-3

    def test_maneuver_mixture_within_3_sigma(self):
        scns = synth.synth_generate(7, 1000)
        counts = {m: 0 for m in synth.MANEUVERS}
        for s in scns:
            counts[synth.maneuver_of(s.id)] += 1
        sigma = np.sqrt(1000 * 0.2 * 0.8)
        for m, c in counts.items():
            assert abs(c - 200) <= 3 * sigma, (m, c)

    def test_unknown_profile_rejected(self):
        with pytest.raises(ValueError, match="profile"):
            synth.synth_generate(0, 1, profile="zigzag")

    def test_timing_layout(self):
        scn = synth.synth_generate(0, 1)[0]
        assert scn.dt == pytest.approx(0.1)
        assert scn.t_current == 50
        assert scn.horizon_steps == 60


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------


class TestScenarioIO:
    def test_empty_list_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        sc.write_scenarios(path, [])
        assert path.read_text() == ""
        assert sc.read_scenarios(path) == []

    def test_round_trip_lossless(self, tmp_path):
        scns = synth.synth_generate(21, 10)
        path = tmp_path / "scn.jsonl"
        sc.write_scenarios(path, scns)
        back = sc.read_scenarios(path)
        assert back == scns

    def test_truncated_line_names_line_number(self, tmp_path):
        line = sc.scenario_to_line(synth.synth_generate(1, 1)[0])
        path = tmp_path / "bad.jsonl"
        path.write_text(line + "\n" + line[:80] + "\n")
        with pytest.raises(sc.ScenarioFormatError, match="line 2: unexpected end"):
            sc.read_scenarios(path)

    def test_missing_field_named(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id":"x","dt":0.1,"t_current":5,"aoi":[],"agents":[]}\n')
        with pytest.raises(sc.ScenarioFormatError, match="line 1: missing field 'map'"):
            sc.read_scenarios(path)

    def test_float_format_nine_significant_digits(self, tmp_path):
        third = np.float32(1.0) / np.float32(3.0)
        track = sc.AgentTrack(
            "a", "vehicle", np.array([[third, -2.0]]), np.array([0.5]), np.array([[0.0, 0.0]]), np.array([1])
        )
        scn = sc.Scenario("s", 0.1, 1, ["a"], [track], [sc.MapPolyline("l", "lane", np.array([[0.0, 0.0], [1.0, 0.0]]))])
        line = sc.scenario_to_line(scn)
        assert "0.333333343" in line  # nine significant digits, f32-exact
        back = sc.scenario_from_line(line)
        assert back.agents[0].xy[0, 0] == third
