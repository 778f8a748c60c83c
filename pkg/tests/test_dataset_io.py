import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evimae.dataset_io import (
    DeviceSpec,
    SyntheticSpec,
    class_layouts,
    clip_dir,
    degrade_low_light,
    from_linear,
    generate_synthetic_dataset,
    load_classes,
    load_clip,
    load_splits,
    load_synthetic_meta,
    psnr,
    read_imu_csv,
    to_linear,
    validate_manifest,
    write_clip,
)
from evimae.errors import InvalidParam, ManifestMismatch, MissingFile, ParseError


# -- load_clip -------------------------------------------------------------


def test_load_well_formed_clip(written_clip):
    clip, path = written_clip
    loaded = load_clip(path)
    assert loaded.frames.shape == (120, 8, 10, 3)
    assert len(loaded.imu) == 4
    for d in loaded.manifest.device_ids:
        assert loaded.imu[d].shape == (100, 3)


def test_missing_device_csv_names_device(tmp_path, clip_factory):
    clip = clip_factory(devices=["a", "b", "c", "d", "e"])
    path = write_clip(clip, tmp_path / "x")
    (path / "imu_e.csv").unlink()
    with pytest.raises(MissingFile, match="'e'"):
        load_clip(path)


def test_nan_row_preserved(tmp_path):
    p = tmp_path / "imu.csv"
    p.write_text("timestamp_s,ax,ay,az\n0.02,0.1,nan,9.8\n0.0,1,2,3\n")
    ts, vals = read_imu_csv(p)
    assert ts.tolist() == [0.0, 0.02]  # sorted by timestamp
    assert vals[1, 0] == 0.1 and math.isnan(vals[1, 1]) and vals[1, 2] == 9.8


def test_malformed_row_raises(tmp_path):
    p = tmp_path / "imu.csv"
    p.write_text("timestamp_s,ax,ay,az\n0.0,1,2\n")
    with pytest.raises(ParseError):
        read_imu_csv(p)
    p.write_text("timestamp_s,ax,ay,az\n0.0,1,two,3\n")
    with pytest.raises(ParseError):
        read_imu_csv(p)


def test_frame_count_mismatch_raises(written_clip):
    _, path = written_clip
    (path / "frames" / "frame_000119.png").unlink()
    with pytest.raises(ManifestMismatch):
        load_clip(path)


def test_imu_row_jitter_tolerated_but_not_more(tmp_path, clip_factory):
    clip = clip_factory()
    d = clip.manifest.device_ids[0]
    clip.imu[d] = clip.imu[d][:-1]
    clip.imu_timestamps[d] = clip.imu_timestamps[d][:-1]
    path = write_clip(clip, tmp_path / "j1")
    assert load_clip(path).imu[d].shape == (99, 3)
    clip.imu[d] = clip.imu[d][:-2]
    clip.imu_timestamps[d] = clip.imu_timestamps[d][:-2]
    path = write_clip(clip, tmp_path / "j2")
    with pytest.raises(ManifestMismatch):
        load_clip(path)


def test_imu_only_load_without_frames(written_clip):
    _, path = written_clip
    import shutil

    shutil.rmtree(path / "frames")
    clip = load_clip(path, load_video=False)
    assert clip.frames.shape[0] == 0 and len(clip.imu) == 4


def test_round_trip(tmp_path, written_clip):
    clip, path = written_clip
    loaded = load_clip(path)
    again = write_clip(loaded, tmp_path / "again")
    reloaded = load_clip(again)
    assert reloaded.manifest == clip.manifest
    assert np.array_equal(reloaded.frames, clip.frames)
    for d in clip.imu:
        np.testing.assert_allclose(reloaded.imu[d], clip.imu[d], rtol=1e-7, atol=1e-7)
        np.testing.assert_array_equal(reloaded.imu[d], loaded.imu[d])


# -- validate_manifest -----------------------------------------------------


def test_validate_consistent_clip_is_empty(written_clip):
    clip, path = written_clip
    assert len(validate_manifest(clip.manifest, path)) == 0


def test_validate_frame_files_mismatch_single_entry(tmp_path, clip_factory):
    clip = clip_factory()
    path = write_clip(clip, tmp_path / "c")
    # 2.0 s at 59.5 fps -> 119 frames expected; 120 files remain on disk
    m = dataclasses.replace(clip.manifest, video_fps=59.5, frame_count=119)
    report = validate_manifest(m, path)
    assert len(report) == 1
    assert report.issues[0].kind == "frame_files"


def test_validate_duplicate_device_single_entry(written_clip):
    clip, path = written_clip
    devs = list(clip.manifest.devices)
    devs[1] = DeviceSpec(devs[0].device_id, devs[0].sample_rate_hz)
    m = dataclasses.replace(clip.manifest, devices=devs)
    report = validate_manifest(m, path)
    assert [i.kind for i in report] == ["device_unique"]


def test_validate_never_raises_on_missing_everything(tmp_path, clip_factory):
    clip = clip_factory()
    report = validate_manifest(clip.manifest, tmp_path / "nowhere")
    assert not report.ok
    assert all(i.kind == "missing_file" for i in report)


def test_manifest_json_keys(written_clip):
    _, path = written_clip
    keys = set(json.loads((path / "manifest.json").read_text()))
    assert keys == {"clip_id", "duration_s", "video_fps", "frame_count", "frame_size", "devices", "label", "split"}


# -- synthetic data ----------------------------------------------------------


def _dominant_frequency(values, rate):
    x = values - values.mean(axis=0)
    spec = np.abs(np.fft.rfft(x, axis=0)).sum(axis=1)
    return np.fft.rfftfreq(len(x), 1.0 / rate)[int(np.argmax(spec))]


def test_synthetic_counts_and_dominant_frequency(tmp_path):
    spec = SyntheticSpec(num_classes=4, clips_per_class=10, correlation_strength=1.0, noise_level=0.0, seed=1)
    root = generate_synthetic_dataset(spec, tmp_path / "ds")
    splits = load_splits(root)
    ids = [c for v in splits.values() for c in v]
    assert len(ids) == 40
    meta = load_synthetic_meta(root)["clips"]
    for cid in ids:
        clip = load_clip(clip_dir(root, cid), load_video=False)
        active = meta[cid]["active_devices"][0]
        f = _dominant_frequency(clip.imu[active], clip.manifest.devices[0].sample_rate_hz)
        assert f == meta[cid]["frequency_hz"]


def test_synthetic_labels_recoverable_by_frequency_oracle(small_synthetic):
    root, spec = small_synthetic
    layouts = class_layouts(spec)
    freqs = np.array([l.frequency_hz for l in layouts])
    meta = load_synthetic_meta(root)["clips"]
    correct = 0
    for cid, info in meta.items():
        clip = load_clip(clip_dir(root, cid), load_video=False)
        # brute force: strongest per-device dominant frequency, nearest class frequency
        best = max(clip.imu, key=lambda d: np.ptp(clip.imu[d] - clip.imu[d].mean(0)))
        f = _dominant_frequency(clip.imu[best], 50.0)
        correct += int(np.argmin(np.abs(freqs - f)) == info["class_index"])
    assert correct == len(meta)


def test_synthetic_zero_correlation_is_independent(tmp_path):
    spec = SyntheticSpec(num_classes=2, clips_per_class=50, correlation_strength=0.0, noise_level=0.0, seed=5, frame_size=(16, 16))
    from evimae.dataset_io import _render_clip

    rs = []
    layouts = class_layouts(spec)
    for i in range(100):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1, i]))
        layout = layouts[i % 2]
        _, imu, stamps, traj = _render_clip(spec, layout, rng)
        d = spec.devices[layout.active_devices[0]].device_id
        axis = layout.active_devices[0] % 3
        t_v = np.arange(len(traj)) / spec.video_fps
        sig = np.interp(t_v, stamps[d], imu[d][:, axis])
        rs.append(np.corrcoef(traj, sig)[0, 1])
    assert abs(np.mean(rs)) < 0.1


def test_synthetic_full_correlation_phase_locked(tmp_path):
    spec = SyntheticSpec(num_classes=2, clips_per_class=2, correlation_strength=1.0, noise_level=0.0, frame_size=(16, 16))
    from evimae.dataset_io import _render_clip

    layout = class_layouts(spec)[0]
    _, imu, stamps, traj = _render_clip(spec, layout, np.random.default_rng(0))
    d = spec.devices[0].device_id
    t_v = np.arange(len(traj)) / spec.video_fps
    sig = np.interp(t_v, stamps[d], imu[d][:, 0])
    assert np.corrcoef(traj, sig)[0, 1] > 0.95


def test_synthetic_byte_identical(tmp_path):
    spec = SyntheticSpec(num_classes=2, clips_per_class=3, noise_level=0.3, seed=9, frame_size=(16, 16))
    a = generate_synthetic_dataset(spec, tmp_path / "a")
    b = generate_synthetic_dataset(spec, tmp_path / "b")
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_synthetic_pretrain_unlabeled_and_classes(small_synthetic):
    root, spec = small_synthetic
    splits = load_splits(root)
    assert load_classes(root) == [l.name for l in class_layouts(spec)]
    for cid in splits["pretrain"]:
        assert load_clip(clip_dir(root, cid), load_video=False).manifest.label is None
    for cid in splits["train"]:
        assert load_clip(clip_dir(root, cid), load_video=False).manifest.label is not None


def test_synthetic_spec_validation():
    with pytest.raises(InvalidParam):
        SyntheticSpec(num_classes=1).validate()
    with pytest.raises(InvalidParam):
        SyntheticSpec(correlation_strength=1.5).validate()
    with pytest.raises(InvalidParam):
        SyntheticSpec.from_dict({"bogus": 1})
    s = SyntheticSpec(num_classes=3, seed=4)
    assert SyntheticSpec.from_dict(s.to_dict()) == s


# -- low light ---------------------------------------------------------------


@pytest.fixture
def frames():
    return np.random.default_rng(0).integers(0, 256, size=(4, 12, 12, 3), dtype=np.uint8)


def test_low_light_identity(frames):
    assert np.array_equal(degrade_low_light(frames, 1.0), frames)


def test_low_light_closed_form(frames):
    out = degrade_low_light(frames, 0.25)
    expected = np.rint(np.clip(0.25 * (frames / 255.0) ** 2.2, 0, 1) ** (1 / 2.2) * 255).astype(np.uint8)
    assert np.array_equal(out, expected)


def test_low_light_psnr_decreases(frames):
    values = [psnr(degrade_low_light(frames, lv, 0.01, 0.01, seed=1), frames) for lv in (1.0, 0.5, 0.25, 0.1)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_low_light_invalid_level(frames):
    for lv in (0.0, -0.1, 1.01):
        with pytest.raises(InvalidParam):
            degrade_low_light(frames, lv)


def test_low_light_deterministic(frames):
    a = degrade_low_light(frames, 0.3, 0.02, 0.01, seed=7)
    b = degrade_low_light(frames, 0.3, 0.02, 0.01, seed=7)
    c = degrade_low_light(frames, 0.3, 0.02, 0.01, seed=8)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_low_light_monotone_in_level(a, b):
    frames = np.arange(256, dtype=np.uint8).reshape(1, 16, 16, 1).repeat(3, axis=-1)
    lo, hi = sorted((a, b))
    # ordering holds in the linear domain and survives the monotone re-gamma/quantization
    assert np.all(to_linear(frames) * lo <= to_linear(frames) * hi)
    assert np.all(degrade_low_light(frames, lo) <= degrade_low_light(frames, hi))


def test_gamma_round_trip_is_exact():
    x = np.arange(256, dtype=np.uint8)
    assert np.array_equal(from_linear(to_linear(x)), x)
