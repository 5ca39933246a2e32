"""media_io contracts: IO round trips, preprocessing rules, synthesis, degradations."""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fakebeat import media_io as mio


def white_seq(t=3, h=4, w=4, fps=30.0):
    return mio.FrameSequence(np.ones((t, h, w, 3), dtype=np.float32), fps=fps, source_id="white")


def dominant_freq(series, fps):
    """FFT oracle: frequency of the strongest non-DC bin."""
    spec = np.abs(np.fft.rfft(series - series.mean()))
    freqs = np.fft.rfftfreq(len(series), 1.0 / fps)
    return freqs[np.argmax(spec)]


def peak_power(series, fps, freq):
    spec = np.abs(np.fft.rfft(series - series.mean())) ** 2
    freqs = np.fft.rfftfreq(len(series), 1.0 / fps)
    return spec[np.argmin(np.abs(freqs - freq))]


# ---------------------------------------------------------------------------
# frame IO


def test_load_identity_white_frames(tmp_path):
    mio.save_frame_sequence(white_seq(), tmp_path / "vid")
    seq = mio.load_frame_sequence(tmp_path / "vid", fps=30.0)
    assert seq.n_frames == 3
    npt.assert_array_equal(seq.frames, 1.0)


def test_load_empty_directory_errors(tmp_path):
    (tmp_path / "vid").mkdir()
    with pytest.raises(ValueError, match="no frames found"):
        mio.load_frame_sequence(tmp_path / "vid", fps=30.0)


def test_load_missing_directory_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        mio.load_frame_sequence(tmp_path / "nope", fps=30.0)


def test_load_mixed_sizes_errors(tmp_path):
    d = tmp_path / "vid"
    d.mkdir()
    mio._write_ppm(d / "0000.ppm", np.zeros((4, 4, 3), dtype=np.float32))
    mio._write_ppm(d / "0001.ppm", np.zeros((8, 8, 3), dtype=np.float32))
    with pytest.raises(ValueError, match="inconsistent dimensions"):
        mio.load_frame_sequence(d, fps=30.0)


def test_unreadable_frame_names_file(tmp_path):
    d = tmp_path / "vid"
    d.mkdir()
    (d / "0000.ppm").write_bytes(b"garbage")
    with pytest.raises(ValueError, match="0000.ppm"):
        mio.load_frame_sequence(d, fps=30.0)


@pytest.mark.parametrize("fmt,depth", [("ppm", 16), ("ppm", 8), ("png", 8)])
def test_frame_roundtrip_precision(tmp_path, fmt, depth):
    rng = np.random.default_rng(0)
    frames = rng.random((2, 6, 5, 3)).astype(np.float32)
    seq = mio.FrameSequence(frames, fps=25.0)
    mio.save_frame_sequence(seq, tmp_path / "v", fmt=fmt, bit_depth=depth)
    back = mio.load_frame_sequence(tmp_path / "v", fps=25.0)
    tol = 0.5 / (65535 if depth == 16 else 255) + 1e-7
    npt.assert_allclose(back.frames, frames, atol=tol)


# ---------------------------------------------------------------------------
# landmark IO


def write_sidecar(path, records):
    lines = []
    for idx, pts in records:
        lines.append(f"{idx} " + " ".join(f"{v:.4f}" for v in np.asarray(pts).reshape(-1)))
    path.write_text("\n".join(lines) + "\n")


def grid_points(n=mio.N_LANDMARKS, lo=1.0, hi=3.0):
    return np.column_stack([np.linspace(lo, hi, n), np.linspace(lo, hi, n)])


def test_landmark_track_full(tmp_path):
    p = tmp_path / "lm.txt"
    write_sidecar(p, [(i, grid_points()) for i in range(3)])
    track = mio.load_landmark_track(p, expected_t=3)
    npt.assert_array_equal(track.valid, [True, True, True])


def test_landmark_track_missing_frame(tmp_path):
    p = tmp_path / "lm.txt"
    write_sidecar(p, [(0, grid_points()), (2, grid_points())])
    track = mio.load_landmark_track(p, expected_t=3)
    npt.assert_array_equal(track.valid, [True, False, True])


def test_landmark_track_wrong_count(tmp_path):
    p = tmp_path / "lm.txt"
    write_sidecar(p, [(0, grid_points(n=80))])
    with pytest.raises(ValueError, match="expected 81 landmarks"):
        mio.load_landmark_track(p, expected_t=1)


def test_landmark_track_out_of_bounds(tmp_path):
    p = tmp_path / "lm.txt"
    pts = grid_points()
    pts[0] = [500.0, 2.0]
    write_sidecar(p, [(0, pts)])
    with pytest.raises(ValueError, match="out of frame bounds"):
        mio.load_landmark_track(p, expected_t=1, frame_shape=(10, 10))


def test_landmark_roundtrip(tmp_path):
    track = mio.LandmarkTrack(points=[grid_points(), None, grid_points(lo=2, hi=4)],
                              valid=np.array([True, False, True]))
    mio.save_landmark_track(track, tmp_path / "lm.txt")
    back = mio.load_landmark_track(tmp_path / "lm.txt", expected_t=3)
    npt.assert_array_equal(back.valid, track.valid)
    npt.assert_allclose(back.points[0], track.points[0], atol=1e-4)


# ---------------------------------------------------------------------------
# face selection


def square(cx, cy, half):
    pts = grid_points(lo=0, hi=0)
    pts[:, 0] = cx
    pts[:, 1] = cy
    pts[0] = [cx - half, cy - half]
    pts[1] = [cx + half, cy + half]
    return pts


def test_select_face_single_candidate():
    track = mio.select_face([[square(5, 5, 2)], [square(6, 6, 2)]])
    npt.assert_array_equal(track.valid, [True, True])
    assert track.points[1][0, 0] == 4.0


def test_select_face_closer_to_previous_center():
    # prev center (50,50); candidates centered (52,50) and (90,90): 2 < 56.6
    cands = [square(52, 50, 5), square(90, 90, 5)]
    track = mio.select_face([cands], prev_center=(50.0, 50.0))
    assert mio._bbox_center(track.points[0])[0] == pytest.approx(52.0)


def test_select_face_first_frame_largest_box():
    cands = [square(10, 10, 10), square(40, 40, 15)]  # areas 400 vs 900
    track = mio.select_face([cands])
    assert mio._bbox_area(track.points[0]) == pytest.approx(900.0)


def test_select_face_empty_frame_invalid():
    track = mio.select_face([[], [square(5, 5, 2)]])
    npt.assert_array_equal(track.valid, [False, True])


# ---------------------------------------------------------------------------
# preprocessing


def seq_with_validity(t, valid):
    frames = np.full((t, 4, 4, 3), 0.5, dtype=np.float32)
    seq = mio.FrameSequence(frames, fps=30.0)
    pts = [grid_points() if v else None for v in valid]
    track = mio.LandmarkTrack(points=pts, valid=np.asarray(valid, dtype=bool))
    return seq, track


def test_preprocess_truncates_to_300():
    seq, track = seq_with_validity(400, [True] * 400)
    out_seq, out_track = mio.preprocess_video(seq, track)
    assert out_seq.n_frames == 300
    assert len(out_track) == 300


def test_preprocess_rejects_over_50_dropped():
    valid = [False] * 60 + [True] * 240
    seq, track = seq_with_validity(300, valid)
    with pytest.raises(mio.VideoRejected) as exc:
        mio.preprocess_video(seq, track)
    assert exc.value.dropped == 60


def test_preprocess_keeps_valid_when_under_budget():
    valid = [False] * 10 + [True] * 290
    seq, track = seq_with_validity(300, valid)
    out_seq, _ = mio.preprocess_video(seq, track)
    assert out_seq.n_frames == 290


def test_preprocess_idempotent():
    valid = ([True] * 7 + [False]) * 40
    seq, track = seq_with_validity(320, valid)
    s1, t1 = mio.preprocess_video(seq, track)
    s2, t2 = mio.preprocess_video(s1, t1)
    npt.assert_array_equal(s1.frames, s2.frames)
    assert len(t1) == len(t2)


# ---------------------------------------------------------------------------
# synthesis


def small_spec(**kw):
    base = dict(height=64, width=64, n_frames=90, fps=30.0, pulse_freq=1.2,
                pulse_amp=0.008, label="real", disruption="none", seed=7)
    base.update(kw)
    return mio.SynthSpec(**base)


def face_mean_series(seq):
    # mean over the central face area per frame, green channel
    h, w = seq.frame_shape
    return seq.frames[:, h // 4 : 3 * h // 4, w // 4 : 3 * w // 4, 1].mean(axis=(1, 2))


def test_synth_zero_amp_flat_series():
    seq, _, _ = mio.synth_video(small_spec(pulse_amp=0.0))
    series = face_mean_series(seq)
    assert series.var() <= 1e-10


def test_synth_dominant_bin_at_pulse_freq():
    seq, _, _ = mio.synth_video(small_spec(n_frames=150))
    series = face_mean_series(seq)
    assert dominant_freq(series, 30.0) == pytest.approx(1.2, abs=0.11)


def test_synth_phase_scramble_halves_peak():
    intact, _, _ = mio.synth_video(small_spec(n_frames=150))
    scrambled, _, _ = mio.synth_video(small_spec(n_frames=150, label="fake", disruption="phase_scramble"))
    p_int = peak_power(face_mean_series(intact), 30.0, 1.2)
    p_scr = peak_power(face_mean_series(scrambled), 30.0, 1.2)
    assert p_scr <= 0.5 * p_int


def test_synth_deterministic_and_seed_sensitive():
    a1, t1, _ = mio.synth_video(small_spec())
    a2, t2, _ = mio.synth_video(small_spec())
    b, _, _ = mio.synth_video(small_spec(seed=8))
    npt.assert_array_equal(a1.frames, a2.frames)
    npt.assert_array_equal(np.stack(t1.points), np.stack(t2.points))
    assert not np.array_equal(a1.frames, b.frames)


def test_synth_label_disruption_consistency():
    with pytest.raises(ValueError):
        small_spec(label="fake", disruption="none")
    with pytest.raises(ValueError):
        small_spec(label="real", disruption="flatten")


def test_synth_landmarks_in_bounds_and_complete():
    seq, track, label = mio.synth_video(small_spec(motion_jitter=0.6))
    assert label == "real"
    h, w = seq.frame_shape
    for pts in track.points:
        assert pts.shape == (81, 2)
        assert (pts[:, 0] > -3).all() and (pts[:, 0] < w + 3).all()


# ---------------------------------------------------------------------------
# degradations


def pulse_seq(t=60, h=24, w=24):
    seq, _, _ = mio.synth_video(small_spec(height=h, width=w, n_frames=t))
    return seq


def test_blur_size_one_identity():
    seq = pulse_seq()
    out = mio.degrade(seq, mio.DegradationSpec("blur", 1))
    npt.assert_array_equal(out.frames, seq.frames)


def test_noise_zero_identity():
    seq = pulse_seq()
    out = mio.degrade(seq, mio.DegradationSpec("noise", 0))
    npt.assert_array_equal(out.frames, seq.frames)


def test_sampling_identity_and_counts():
    seq = pulse_seq(t=300 // 5)  # 60 frames
    out1 = mio.degrade(seq, mio.DegradationSpec("sampling", 1))
    npt.assert_array_equal(out1.frames, seq.frames)
    frames = np.zeros((300, 4, 4, 3), dtype=np.float32)
    seq300 = mio.FrameSequence(frames, fps=30.0)
    out = mio.degrade(seq300, mio.DegradationSpec("sampling", 10))
    assert out.n_frames == 30
    assert out.fps == pytest.approx(3.0)


@given(st.integers(min_value=1, max_value=17), st.integers(min_value=1, max_value=120))
@settings(max_examples=30, deadline=None)
def test_sampling_count_is_ceil(k, t):
    frames = np.zeros((t, 2, 2, 3), dtype=np.float32)
    out = mio.degrade(mio.FrameSequence(frames, fps=30.0), mio.DegradationSpec("sampling", k))
    assert out.n_frames == -(-t // k)


def test_jpeg_quality_100_high_psnr():
    seq = pulse_seq(t=2, h=32, w=32)
    out = mio.degrade(seq, mio.DegradationSpec("jpeg", 100))
    mse = float(((out.frames - seq.frames) ** 2).mean())
    psnr = 10.0 * np.log10(1.0 / mse) if mse > 0 else np.inf
    assert psnr > 45.0


def test_jpeg_lower_quality_is_lossier():
    seq = pulse_seq(t=2, h=32, w=32)
    e60 = float(((mio.degrade(seq, mio.DegradationSpec("jpeg", 60)).frames - seq.frames) ** 2).mean())
    e95 = float(((mio.degrade(seq, mio.DegradationSpec("jpeg", 95)).frames - seq.frames) ** 2).mean())
    assert e60 > e95


def test_jpeg_quality_table_endpoints():
    t100 = mio.jpeg_quality_table(mio.JPEG_LUMA_TABLE, 100)
    npt.assert_array_equal(t100, 1.0)
    t50 = mio.jpeg_quality_table(mio.JPEG_LUMA_TABLE, 50)
    npt.assert_array_equal(t50, mio.JPEG_LUMA_TABLE)


def test_noise_deterministic_per_seed_and_clamped():
    seq = pulse_seq()
    a = mio.degrade(seq, mio.DegradationSpec("noise", 25), seed=3)
    b = mio.degrade(seq, mio.DegradationSpec("noise", 25), seed=3)
    c = mio.degrade(seq, mio.DegradationSpec("noise", 25), seed=4)
    npt.assert_array_equal(a.frames, b.frames)
    assert not np.array_equal(a.frames, c.frames)
    assert a.frames.min() >= 0.0 and a.frames.max() <= 1.0


def test_degradation_spec_validation():
    with pytest.raises(ValueError):
        mio.DegradationSpec("blur", 4)
    with pytest.raises(ValueError):
        mio.DegradationSpec("jpeg", 0)
    with pytest.raises(ValueError):
        mio.DegradationSpec("sampling", 2.5)
    with pytest.raises(ValueError):
        mio.DegradationSpec("sepia", 1)


def test_subsample_track_matches_sampling():
    _, track, _ = mio.synth_video(small_spec(n_frames=31))
    sub = mio.subsample_track(track, 10)
    assert len(sub) == 4


# ---------------------------------------------------------------------------
# manifests


def test_manifest_roundtrip(tmp_path):
    seq = pulse_seq(t=2)
    mio.save_frame_sequence(seq, tmp_path / "v0")
    _, track, _ = mio.synth_video(small_spec(n_frames=2))
    mio.save_landmark_track(track, tmp_path / "v0.landmarks.txt")
    man = mio.DatasetManifest(
        entries=[mio.ManifestEntry("v0", "v0.landmarks.txt", "real", "train")], fps=30.0
    )
    mio.save_manifest(man, tmp_path / "manifest.json")
    back = mio.load_manifest(tmp_path / "manifest.json")
    assert back.fps == 30.0
    assert back.entries[0].label == "real"
    assert len(back.split("train")) == 1


def test_manifest_unresolvable_path_errors(tmp_path):
    man = mio.DatasetManifest(
        entries=[mio.ManifestEntry("missing", "missing.txt", "real", "train")], fps=30.0
    )
    mio.save_manifest(man, tmp_path / "manifest.json")
    with pytest.raises(FileNotFoundError, match="not resolvable"):
        mio.load_manifest(tmp_path / "manifest.json")
