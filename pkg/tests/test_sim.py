import copy
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ciil.errors import ConfigError, LogIntegrityError
from ciil.sim import (
    Agent,
    ShiftParams,
    SyntheticEmg,
    TrialConfig,
    UserProfile,
    compute_metrics,
    load_scene,
    load_scene_config,
    rotate_gains,
    shifted_gains,
    synth_emg,
)
from ciil.sim.config import load_json


@pytest.fixture
def scene_doc():
    return load_json(None, "scene")


@pytest.fixture
def profile():
    return UserProfile.from_doc(None)


# configuration ---------------------------------------------------------------

def test_default_scene_loads(scene_doc):
    cfg = load_scene_config(scene_doc)
    assert len(cfg.objects) == 6
    assert cfg.gestures.unmapped_classes == {0, 7}
    assert len(cfg.gestures.grasp_classes) == 6
    for obj in cfg.objects:
        assert 1 <= len(obj["allowed_grasps"]) <= 2
        assert set(obj["allowed_grasps"]) <= cfg.gestures.grasp_classes


def test_scene_rejects_unmapped_grasp(scene_doc):
    scene_doc["objects"][0]["allowed_grasps"] = [7]
    with pytest.raises(ConfigError, match="unmapped"):
        load_scene_config(scene_doc)


def test_scene_rejects_empty(scene_doc):
    bad = copy.deepcopy(scene_doc)
    bad["objects"] = []
    with pytest.raises(ConfigError):
        load_scene_config(bad)
    bad = copy.deepcopy(scene_doc)
    bad["objects"][1]["allowed_grasps"] = []
    with pytest.raises(ConfigError):
        load_scene_config(bad)


def test_scene_rejects_seven_gestures(scene_doc):
    scene_doc["gestures"] = scene_doc["gestures"][:7]
    with pytest.raises(ConfigError):
        load_scene_config(scene_doc)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_json(tmp_path / "nope.json")
    p = tmp_path / "bad.json"
    p.write_text("{oops")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_json(p)


def test_profile_invariants(profile):
    g = profile.gain_matrix.copy()
    g[3] = g[2]
    with pytest.raises(ConfigError, match="identical"):
        UserProfile(g, profile.class_sigma)
    g = profile.gain_matrix.copy()
    g[1, 1] = -0.1
    with pytest.raises(ConfigError):
        UserProfile(g, profile.class_sigma)


def test_trial_and_shift_invariants():
    with pytest.raises(ConfigError):
        TrialConfig(duration=0)
    with pytest.raises(ConfigError):
        TrialConfig(n_objects=0)
    with pytest.raises(ConfigError):
        ShiftParams(gain_scale=0.0)
    s = ShiftParams.from_doc(None)
    assert (s.channel_rotation, s.gain_scale, s.noise_floor) == (0.5, 0.8, 0.05)


# synthetic EMG ---------------------------------------------------------------

def test_rest_without_noise_is_silent(profile):
    quiet = UserProfile(profile.gain_matrix, profile.class_sigma, noise_floor=0.0)
    blk = synth_emg(0, quiet, None, 0.05, np.random.default_rng(0))
    assert blk.channels.shape == (8, 100)
    assert np.all(blk.channels == 0.0)


def test_length_rounding(profile):
    assert synth_emg(1, profile, None, 0.0123, 0).channels.shape[1] == round(0.0123 * 2000)
    with pytest.raises(ValueError):
        synth_emg(1, profile, None, 0.0, 0)


def test_synth_deterministic(profile):
    a = synth_emg(3, profile, ShiftParams(), 0.2, np.random.default_rng(5))
    b = synth_emg(3, profile, ShiftParams(), 0.2, np.random.default_rng(5))
    assert np.array_equal(a.channels, b.channels)
    c = synth_emg(3, profile, ShiftParams(), 0.2, np.random.default_rng(6))
    assert not np.array_equal(a.channels, c.channels)


def test_rotation_by_one_channel_rms(profile):
    shift = ShiftParams(channel_rotation=1.0, gain_scale=1.0, bias_drift=0.0, noise_floor=0.0)
    flat = UserProfile(profile.gain_matrix, np.zeros(8), noise_floor=0.0)
    gen = SyntheticEmg(flat, shift, np.random.default_rng(1))
    x = gen.samples(2, 6000)
    expected = np.roll(profile.gain_matrix[2], 1)
    rms = np.sqrt(np.mean(x**2, axis=1))
    np.testing.assert_allclose(rms, expected, rtol=0.05)


def test_rotation_helper():
    row = np.arange(8, dtype=float)
    assert np.array_equal(rotate_gains(row, 1.0), np.roll(row, 1))
    half = rotate_gains(row, 0.5)
    np.testing.assert_allclose(half, 0.5 * row + 0.5 * np.roll(row, 1))
    assert np.array_equal(rotate_gains(row, 0.0), row)


def test_default_shift_aliases_pinch_onto_open(profile):
    # the calibrated profile: under the default shift pinch looks exactly like open
    g = shifted_gains(profile, ShiftParams())
    np.testing.assert_allclose(g[4], profile.gain_matrix[5], atol=1e-6)


def test_shift_bias_and_clip(profile):
    g = shifted_gains(profile, ShiftParams(0.0, 1.0, -10.0, 0.0))
    assert np.all(g == 0.0)
    drift = tuple(float(i) for i in range(8))
    g = shifted_gains(profile, ShiftParams(0.0, 1.0, drift, 0.0))
    np.testing.assert_allclose(g[:, 0] - profile.gain_matrix[:, 0], np.arange(8))


# agent and scene --------------------------------------------------------------

def make_scene(**trial):
    return load_scene(None, TrialConfig(**trial))


def test_agent_moves_at_hand_speed(profile):
    sc = make_scene()
    obj, _ = sc.nearest_free()
    sc.hand = obj.position + np.array([0.0, 1.0, 0.0])
    intent, vel = Agent(sc, profile).act(0.05)
    assert intent == sc.rest_class
    np.testing.assert_allclose(np.linalg.norm(vel), 0.6)
    np.testing.assert_allclose(vel / np.linalg.norm(vel), [0.0, -1.0, 0.0], atol=1e-12)


def test_agent_intends_allowed_grasp_inside_radius(profile):
    sc = make_scene()
    obj, _ = sc.nearest_free()
    sc.hand = obj.position + np.array([0.05, 0.0, 0.0])
    intent, _ = Agent(sc, profile).act(0.05)
    assert intent in obj.allowed_grasps


def test_agent_releases_in_target_zone(profile):
    sc = make_scene()
    obj, _ = sc.nearest_free()
    sc.hand = obj.position.copy()
    sc.step(0.05, sc.hand, obj.allowed_grasps[0])
    assert sc.held is obj
    sc.hand = obj.target + np.array([0.01, 0.0, 0.0])
    intent, _ = Agent(sc, profile).act(0.05)
    assert intent == sc.rest_class


def test_agent_cycles_grasp_after_misses(profile):
    sc = make_scene()
    key = sc.by_id("key")
    for o in sc.objects:
        if o is not key:
            o.state = "completed"
    sc.hand = key.position.copy()
    agent = Agent(sc, profile)
    first, _ = agent.act(0.05)
    assert first == key.allowed_grasps[0]
    for _ in range(profile.reattempt_delay):
        agent.observe(sc.rest_class, first)
        agent.act(0.05)
    agent.observe(sc.rest_class, first)
    nxt, _ = agent.act(0.05)
    assert nxt == key.allowed_grasps[1]


def test_grasp_at_nine_centimetres():
    sc = make_scene()
    obj, _ = sc.nearest_free()
    pos = obj.position + np.array([0.09, 0.0, 0.0])
    events = sc.step(0.05, pos, obj.allowed_grasps[0])
    kinds = [e.event_type for e in events]
    assert kinds == ["approach", "grasp_begin"]
    assert sc.held is obj and obj.state == "held"


def test_no_grasp_outside_radius_or_wrong_class():
    sc = make_scene()
    obj, _ = sc.nearest_free()
    assert sc.step(0.05, obj.position + np.array([0, 0.11, 0]), obj.allowed_grasps[0]) == []
    not_allowed = next(c for c in sorted(sc.gestures.grasp_classes) if c not in obj.allowed_grasps)
    events = sc.step(0.05, obj.position, not_allowed)
    assert [e.event_type for e in events] == ["approach"]
    assert sc.held is None


def _grasp(sc):
    obj, _ = sc.nearest_free()
    g = obj.allowed_grasps[0]
    sc.step(0.05, obj.position, g)
    return obj, g


def test_debounce_two_wrong_then_right_keeps_hold():
    sc = make_scene()
    obj, g = _grasp(sc)
    wrong = (g % 6) + 1
    mid = obj.position + np.array([0.0, 0.5, 0.0])
    for _ in range(2):
        assert sc.step(0.05, mid, wrong) == []
    assert sc.held is obj
    sc.step(0.05, mid, g)
    for _ in range(2):
        sc.step(0.05, mid, wrong)
    assert sc.held is obj


def test_third_wrong_window_drops_mid_transit():
    sc = make_scene()
    obj, g = _grasp(sc)
    wrong = (g % 6) + 1
    mid = obj.position + np.array([0.0, 0.5, 0.0])
    sc.step(0.05, mid, wrong)
    sc.step(0.05, mid, wrong)
    events = sc.step(0.05, mid, wrong)
    assert [e.event_type for e in events] == ["hold_break", "drop"]
    assert obj.state == "dropped"
    np.testing.assert_allclose(obj.position, mid)
    # re-graspable where it fell
    events = sc.step(0.05, mid, g)
    assert [e.event_type for e in events] == ["grasp_begin"]


def test_release_in_zone_completes():
    sc = make_scene()
    obj, g = _grasp(sc)
    before = sc.objects_completed
    events = sc.step(0.05, obj.target, sc.rest_class)
    assert [e.event_type for e in events] == ["release", "completed"]
    assert sc.objects_completed == before + 1
    assert obj.state == "completed"
    # completed objects are never offered again
    assert all(o is not obj for o in [sc.nearest_free()[0]])


def test_rest_outside_zone_does_not_release():
    sc = make_scene()
    obj, g = _grasp(sc)
    far = obj.target - np.array([0.0, 0.5, 0.0])
    sc.step(0.05, far, sc.rest_class)
    assert sc.held is obj


def test_context_while_holding():
    sc = make_scene()
    obj, g = _grasp(sc)
    assert sc.context() == (obj.id, 0.0, frozenset({g}))
    sc.hand = obj.target.copy()
    assert sc.context() is None


# closed loop with an oracle classifier ----------------------------------------

def run_oracle(seed=0, duration=300.0):
    from ciil.sim.metrics import compute_metrics as cm

    sc = make_scene(seed=seed)
    prof = UserProfile.from_doc(None)
    agent = Agent(sc, prof, np.random.default_rng(seed))
    events = []
    t = 0.0
    while t < duration - 1e-9:
        intent, vel = agent.act(0.05)
        pos = sc.hand + vel * 0.05
        t += 0.05
        events.append({"event_type": "window", "sim_time": round(t, 6), "predicted": intent,
                       "intent": intent, "suitability": "none"})
        for e in sc.step(0.05, pos, intent):
            events.append(e.to_dict())
        agent.observe(intent, intent)
    return sc, events, cm(events, sc.trial)


def test_oracle_completes_all_quickly():
    sc, events, m = run_oracle()
    assert m["objects_completed"] == 6
    last = max(e["sim_time"] for e in events if e["event_type"] == "completed")
    assert last < 60.0
    assert m["intent_accuracy"] == 1.0
    for e in events:
        if e["event_type"] == "grasp_begin":
            obj = sc.by_id(e["object_id"])
            assert obj.state == "completed"


def test_oracle_grasps_only_inside_radius():
    sc, events, _ = run_oracle(duration=40.0)
    cfg = load_scene_config(None)
    start = {o["id"]: np.asarray(o["position"]) for o in cfg.objects}
    for e in events:
        if e["event_type"] == "grasp_begin":
            assert np.linalg.norm(np.asarray(e["hand_pos"]) - start[e["object_id"]]) <= 0.10 + 1e-9


def test_oracle_deterministic():
    _, a, _ = run_oracle(duration=30.0)
    _, b, _ = run_oracle(duration=30.0)
    assert json.dumps(a) == json.dumps(b)


# metrics ------------------------------------------------------------------------

def synthetic_log(times):
    ev = []
    for i, (t_app, t_done) in enumerate(times):
        oid = f"o{i}"
        ev += [
            {"event_type": "approach", "sim_time": t_app, "object_id": oid},
            {"event_type": "grasp_begin", "sim_time": t_app + 0.1, "object_id": oid},
        ]
        if t_done is not None:
            ev += [{"event_type": "release", "sim_time": t_done, "object_id": oid},
                   {"event_type": "completed", "sim_time": t_done, "object_id": oid}]
        else:
            ev += [{"event_type": "drop", "sim_time": t_app + 1.0, "object_id": oid}]
    return ev


def test_metrics_average():
    times = [(1.0, 4.0), (5.0, 12.5), (13.0, 15.0), (20.0, 30.0), (31.0, 33.5), (40.0, 41.0)]
    m = compute_metrics(synthetic_log(times), TrialConfig())
    assert m["objects_completed"] == 6
    # (3 + 7.5 + 2 + 10 + 2.5 + 1) / 6
    assert m["avg_time_per_object"] == pytest.approx(26.0 / 6)
    assert [p["time"] for p in m["per_object_times"]] == [3.0, 7.5, 2.0, 10.0, 2.5, 1.0]


def test_metrics_incomplete_reported_not_averaged():
    m = compute_metrics(synthetic_log([(1.0, 3.0), (4.0, None)]))
    assert m["objects_completed"] == 1
    assert m["avg_time_per_object"] == 2.0
    assert m["per_object_times"][1]["time"] is None


def test_metrics_zero_completions():
    m = compute_metrics(synthetic_log([(1.0, None)]))
    assert m["objects_completed"] == 0
    assert "avg_time_per_object" not in m


def test_metrics_overlapping_holds():
    ev = [
        {"event_type": "grasp_begin", "sim_time": 1.0, "object_id": "a"},
        {"event_type": "grasp_begin", "sim_time": 2.0, "object_id": "b"},
    ]
    with pytest.raises(LogIntegrityError):
        compute_metrics(ev)


def test_metrics_window_accuracies():
    ev = [
        {"event_type": "window", "sim_time": 0.05 * i, "predicted": i % 2, "intent": 0,
         "suitability": ["none", "positive", "negative", "positive"][i % 4]}
        for i in range(1, 9)
    ]
    m = compute_metrics(ev)
    assert m["intent_accuracy"] == 0.5
    assert m["online_pseudo_accuracy"] == pytest.approx(4 / 6)
    m = compute_metrics(ev, window=(0.2, 0.3))
    assert m["n_windows"] == 2


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 7), min_size=1, max_size=60), st.integers(0, 3))
def test_scene_invariants_random_predictions(preds, seed):
    sc = make_scene(seed=seed)
    prof = UserProfile.from_doc(None)
    agent = Agent(sc, prof)
    for p in preds * 5:
        _, vel = agent.act(0.05)
        sc.step(0.05, sc.hand + vel * 0.05, p)
        agent.observe(p, agent.last_intent)
        held = [o for o in sc.objects if o.state == "held"]
        assert len(held) <= 1
        assert (sc.held is None) == (not held)
        assert sc.objects_completed <= len(sc.objects)
