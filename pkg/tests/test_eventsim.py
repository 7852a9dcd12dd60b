import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridtrack.eventsim import (BoundingBox, ConfigError, EventStream, SceneSpec, crop_resize, crop_window,
                                  events_to_frames, load_frames_png, load_scene_spec, normalize_event_frames,
                                  read_boxes_csv, read_events_csv, render_scene, save_frames_png,
                                  save_scene_spec, simulate_events, to_uint8, write_boxes_csv,
                                  write_events_csv)


def _stream(ts, xs, ys, ps, res=(4, 5)):
    return EventStream(np.array(ts, float), np.array(xs), np.array(ys), np.array(ps), res,
                       (0.0, 1.0))


# -- render_scene ----------------------------------------------------------

def test_stationary_square_gives_identical_boxes():
    spec = SceneSpec(height=60, width=80, n_frames=10, target_start=(40, 30), target_size=(10, 10))
    _, boxes = render_scene(spec)
    assert len(boxes) == 10
    assert all(b == boxes[0] for b in boxes)


def test_linear_motion_box_sequence():
    spec = SceneSpec(height=60, width=120, n_frames=8, target_start=(20, 30), target_velocity=(2, 0))
    frames, boxes = render_scene(spec)
    assert len(frames) == 8
    np.testing.assert_allclose([b.cx for b in boxes], 20 + 2 * np.arange(8))
    assert all(b.cy == 30 for b in boxes)


def test_render_is_deterministic(small_scene):
    small_scene.noise_std = 0.05
    a, _ = render_scene(small_scene)
    b, _ = render_scene(small_scene)
    for fa, fb in zip(a, b):
        assert np.array_equal(fa, fb)


def test_frames_are_8bit_in_unit_range(small_scene):
    frames, _ = render_scene(small_scene)
    f = frames[0]
    assert f.shape == (3, 64, 80)
    assert f.min() >= 0 and f.max() <= 1
    np.testing.assert_allclose(f * 255, np.round(f * 255), atol=1e-9)


@pytest.mark.parametrize("change", [{"fps": 0}, {"n_frames": 0}, {"target_shape": "star"},
                                    {"target_size": (0, 4)}, {"illumination": -1},
                                    {"target_start": (500, 500)}])
def test_invalid_spec_is_config_error(change):
    kw = {"height": 60, "width": 80, "n_frames": 4, "target_start": (40, 30), **change}
    spec = SceneSpec(**kw)
    with pytest.raises(ConfigError):
        render_scene(spec)


def test_low_light_episode_darkens_frames():
    spec = SceneSpec(height=40, width=40, n_frames=4, target_start=(20, 20), target_size=(8, 8),
                     episodes=[(2, 3, 0.1)])
    frames, _ = render_scene(spec)
    assert frames[2].mean() < 0.2 * frames[0].mean()


# -- simulate_events --------------------------------------------------------

def test_constant_video_gives_no_events():
    frames = [np.full((8, 9), 0.4)] * 5
    assert len(simulate_events(frames, np.arange(5.0))) == 0


def test_log_step_of_three_thresholds_gives_three_events():
    a = np.zeros((3, 3))
    b = a.copy()
    b[1, 2] = 0.6
    ev = simulate_events([a, b], [0.0, 1.0], 0.2, log_domain=True)
    assert len(ev) == 3
    assert np.all(ev.p == 1) and np.all(ev.x == 2) and np.all(ev.y == 1)
    # crossings at 0.2, 0.4, 0.6 of a linear ramp
    np.testing.assert_allclose(ev.t, [1 / 3, 2 / 3, 1.0])


def test_single_frame_gives_empty_stream():
    assert len(simulate_events([np.ones((4, 4))], [0.0])) == 0


def test_reference_carries_remainder_between_frames():
    # 0.3 then another 0.3: one event, then the 0.1 residue plus 0.3 gives two more
    frames = [np.zeros((1, 1)), np.full((1, 1), 0.3), np.full((1, 1), 0.6)]
    ev = simulate_events(frames, [0.0, 1.0, 2.0], 0.2, log_domain=True)
    assert len(ev) == 3
    assert np.sum(ev.t <= 1.0) == 1


def test_inverting_video_inverts_polarity(rng):
    logs = [rng.normal(size=(6, 7)) for _ in range(4)]
    pos = simulate_events(logs, np.arange(4.0), 0.2, log_domain=True)
    neg = simulate_events([-x for x in logs], np.arange(4.0), 0.2, log_domain=True)
    assert len(pos) == len(neg) > 0
    np.testing.assert_array_equal(pos.p, -neg.p)
    np.testing.assert_array_equal(pos.x, neg.x)
    np.testing.assert_allclose(pos.t, neg.t)


def test_polarity_antisymmetry_swaps_channels(rng):
    logs = [rng.normal(size=(6, 7)) for _ in range(4)]
    a = events_to_frames(simulate_events(logs, np.arange(4.0), 0.25, log_domain=True), 0, 3.5, 3).data
    b = events_to_frames(simulate_events([-x for x in logs], np.arange(4.0), 0.25, log_domain=True), 0, 3.5, 3).data
    np.testing.assert_array_equal(a[:, 0], b[:, 1])
    np.testing.assert_array_equal(a[:, 1], b[:, 0])


def test_simulate_rejects_bad_threshold():
    with pytest.raises(ConfigError):
        simulate_events([np.ones((2, 2))] * 2, [0, 1], 0.0)


def test_simulated_stream_is_valid(small_scene):
    frames, _ = render_scene(small_scene)
    ev = simulate_events(frames, small_scene.timestamps())
    assert len(ev) > 0
    assert np.all(np.diff(ev.t) >= 0)
    assert ev.t.min() >= 0 and ev.t.max() <= small_scene.timestamps()[-1]


# -- EventStream ------------------------------------------------------------

def test_event_stream_validation():
    with pytest.raises(ValueError):
        _stream([0.2, 0.1], [0, 0], [0, 0], [1, 1])
    with pytest.raises(ValueError):
        _stream([0.1], [5], [0], [1])
    with pytest.raises(ValueError):
        _stream([0.1], [0], [0], [0])


# -- events_to_frames ------------------------------------------------------

def test_empty_stream_gives_zero_tensor():
    et = events_to_frames(EventStream.empty((4, 5)), 0.0, 1.0, 3)
    assert et.data.shape == (3, 3, 4, 5)
    assert not et.data.any()


def test_single_positive_event():
    et = events_to_frames(_stream([0.1], [3], [2], [1]), 0.0, 1.0, 2)
    d = et.data
    assert d[0, 0, 2, 3] == 1
    d01 = d[:, :2].copy()
    d01[0, 0, 2, 3] = 0
    assert not d01.any()
    assert d[0, 2, 2, 3] == pytest.approx((1 + 5) / 10)


def test_events_outside_window_ignored():
    et = events_to_frames(_stream([0.0, 0.5, 1.0], [0, 1, 2], [0, 0, 0], [1, -1, 1]), 0.0, 1.0, 1)
    assert et.data[:, :2].sum() == 2  # t=1.0 is excluded


def test_binning_additive_over_adjacent_intervals(rng):
    n = 200
    t = np.sort(rng.uniform(0, 2, n))
    s = _stream(t, rng.integers(0, 5, n), rng.integers(0, 4, n), rng.choice([-1, 1], n))
    a, b = s.window(0.0, 1.0), s.window(1.0, 2.0)
    union = EventStream.concatenate([a, b])
    whole = events_to_frames(union, 0.0, 2.0, 4).data
    parts = events_to_frames(s, 0.0, 2.0, 4).data
    np.testing.assert_array_equal(whole, parts)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 300), st.integers(1, 5), st.integers(0, 10_000))
def test_count_conservation(n, T, seed):
    r = np.random.default_rng(seed)
    t = np.sort(r.uniform(-0.5, 1.5, n))
    s = _stream(t, r.integers(0, 5, n), r.integers(0, 4, n), r.choice([-1, 1], n))
    et = events_to_frames(s, 0.0, 1.0, T)
    inside = np.sum((t >= 0) & (t < 1))
    assert et.data[:, :2].sum() == inside
    assert et.data.min() >= 0 and np.all(np.isfinite(et.data))
    assert et.data[:, 2].max() <= 1


def test_events_to_frames_errors():
    s = EventStream.empty((4, 5))
    with pytest.raises(ConfigError):
        events_to_frames(s, 0, 1, 0)
    with pytest.raises(ConfigError):
        events_to_frames(s, 1, 1, 2)
    with pytest.raises(ConfigError):
        events_to_frames(s, 0, 1, 2, size=(0, 3))


def test_normalize_event_frames_bounds():
    d = np.zeros((1, 3, 2, 2))
    d[0, 0, 0, 0] = 12
    d[0, 1, 1, 1] = 2.5
    d[0, 2] = 0.7
    out = normalize_event_frames(d, cap=5)
    assert out[0, 0, 0, 0] == 1.0
    assert out[0, 1, 1, 1] == 0.5
    assert np.all(out[0, 2] == 0.7)


# -- crops ------------------------------------------------------------------

def test_crop_covering_box_is_identity(rng):
    img = rng.uniform(size=(3, 20, 20))
    out, cmap = crop_resize(img, BoundingBox(10, 10, 20, 20), 1.0, 20)
    np.testing.assert_allclose(out, img, atol=1e-12)
    assert cmap.scale == 1.0


def test_crop_at_corner_is_zero_padded():
    img = np.ones((1, 20, 20))
    out, _ = crop_resize(img, BoundingBox(0, 0, 10, 10), 2.0, 20)
    assert np.all(out[0, :9, :] == 0) and np.all(out[0, :, :9] == 0)
    assert np.all(out[0, 11:, 11:] == 1)


def test_crop_fully_off_canvas_is_zero():
    out, _ = crop_resize(np.ones((2, 10, 10)), BoundingBox(100, 100, 4, 4), 2.0, 8)
    assert out.shape == (2, 8, 8) and not out.any()


def test_crop_carries_leading_axes(rng):
    out, _ = crop_resize(rng.uniform(size=(3, 2, 30, 40)), BoundingBox(20, 15, 6, 6), 4.0, 16)
    assert out.shape == (3, 2, 16, 16)


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 400), st.floats(-50, 300), st.floats(2, 100), st.floats(2, 100),
       st.floats(0.5, 6), st.sampled_from([64, 128, 256]))
def test_crop_map_round_trip(cx, cy, w, h, ctx, size):
    box = BoundingBox(cx, cy, w, h)
    cmap = crop_window(box, ctx, size)
    back = cmap.to_canvas(cmap.to_crop(box))
    assert np.max(np.abs(back.as_array() - box.as_array())) < 0.5


def test_crop_places_box_center_at_crop_center():
    box = BoundingBox(37.5, 22.0, 10, 14)
    cmap = crop_window(box, 4.0, 128)
    c = cmap.to_crop(box)
    assert c.cx == pytest.approx(64) and c.cy == pytest.approx(64)


def test_degenerate_box_rejected():
    with pytest.raises(ConfigError):
        BoundingBox(1, 1, 0, 3)
    with pytest.raises(ConfigError):
        BoundingBox(np.nan, 1, 2, 3)


# -- file formats -------------------------------------------------------------

def test_events_csv_round_trip(tmp_path, small_scene):
    frames, _ = render_scene(small_scene)
    ev = simulate_events(frames, small_scene.timestamps())
    write_events_csv(tmp_path / "e.csv", ev)
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "t,x,y,p"
    back = read_events_csv(tmp_path / "e.csv", ev.resolution)
    np.testing.assert_allclose(back.t, ev.t, atol=1e-9)
    np.testing.assert_array_equal(back.p, ev.p)
    np.testing.assert_array_equal(back.x, ev.x)


def test_boxes_csv_round_trip(tmp_path):
    boxes = [BoundingBox(1.5, 2, 3, 4), BoundingBox(5, 6, 7, 8.25)]
    write_boxes_csv(tmp_path / "gt.csv", boxes, {"visible": [1, 0]})
    assert (tmp_path / "gt.csv").read_text().startswith("frame,cx,cy,w,h")
    back, extra = read_boxes_csv(tmp_path / "gt.csv")
    assert back == boxes
    np.testing.assert_array_equal(extra["visible"], [1, 0])


def test_scene_spec_yaml_round_trip(tmp_path, small_scene):
    from hybridtrack.eventsim import Distractor
    small_scene.distractors = [Distractor((0.1, 0.2, 0.3), (5, 5), (10, 10), (1, 0))]
    small_scene.episodes = [(1, 2, 0.05)]
    save_scene_spec(tmp_path / "s.yaml", small_scene)
    back = load_scene_spec(tmp_path / "s.yaml")
    assert back == small_scene


def test_frames_png_round_trip(tmp_path, small_scene):
    frames, _ = render_scene(small_scene)
    save_frames_png(tmp_path / "f", frames)
    back = load_frames_png(tmp_path / "f")
    np.testing.assert_allclose(back[2], frames[2], atol=1e-12)
    as_u8 = load_frames_png(tmp_path / "f", as_uint8=True)
    np.testing.assert_array_equal(as_u8[1], to_uint8(frames[1]))
