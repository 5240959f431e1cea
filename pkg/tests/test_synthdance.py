import json

import numpy as np
import pytest
from scipy import ndimage

from dancer import synthdance as sd


def test_make_figure_deterministic_and_varied():
    assert sd.make_figure(11) == sd.make_figure(11)
    assert sd.make_figure(0) != sd.make_figure(1)


def test_bone_lengths_positive_sweep():
    rng = np.random.default_rng(0)
    for seed in rng.integers(0, 2**63, 1000):
        spec = sd.make_figure(int(seed))
        assert (spec.bone_lengths > 0).all()
        assert (spec.radii > 0).all()


def test_pose_periodic():
    spec = sd.make_figure(2)
    a = sd.pose_at(spec, 0.37, 9)
    b = sd.pose_at(spec, 0.37 + sd.PERIOD, 9)
    np.testing.assert_allclose(a.angles, b.angles, atol=1e-12)
    np.testing.assert_allclose(a.translation, b.translation, atol=1e-12)


def test_pose_velocity_bounded():
    spec = sd.make_figure(4)
    dt = 1e-3
    bound = sd.max_angular_velocity()
    for seed in range(5):
        for t in np.linspace(0, 1, 50):
            v = (sd.pose_at(spec, t + dt, seed).angles - sd.pose_at(spec, t, seed).angles) / dt
            assert (np.abs(v) <= bound + 1e-6).all()


def test_motion_seeds_differ():
    spec = sd.make_figure(4)
    assert not np.allclose(sd.pose_at(spec, 0.2, 1).angles, sd.pose_at(spec, 0.2, 2).angles)


def test_angles_within_limits():
    spec = sd.make_figure(4)
    for seed in range(20):
        for t in np.linspace(0, 1, 17):
            a = sd.pose_at(spec, t, seed).angles
            assert (np.abs(a - sd.REST_ANGLE) <= sd.AMPLITUDE + 1e-12).all()


def _random_frames(n):
    rng = np.random.default_rng(1)
    for _ in range(n):
        seed = int(rng.integers(2**31))
        spec = sd.make_figure(seed)
        yield sd.render_frame(spec, sd.pose_at(spec, float(rng.uniform(0, 1)), seed + 1))


def test_render_background_and_keypoints():
    for frame, maps, kp in _random_frames(100):
        figure = maps.seg.sum(-1) > 0
        # background of the segmentation map is exactly zero
        assert (maps.seg[~figure] == 0).all()
        assert (maps.dep[~figure] == 0).all()
        xs = np.round(kp[:, 0]).astype(int)
        ys = np.round(kp[:, 1]).astype(int)
        assert figure[ys, xs].all()
        assert frame.shape == (64, 64, 3) and maps.dep.shape == (64, 64, 1)


def test_depth_and_normals():
    for _, maps, _ in _random_frames(30):
        assert maps.dep.min() >= 0 and maps.dep.max() <= 1
        figure = maps.seg.sum(-1) > 0
        n = sd.decode_normals(maps.norm[figure])
        assert np.abs(np.linalg.norm(n, axis=-1) - 1).max() < 0.02


def test_alignment_skeleton_within_dilated_segmentation():
    for _, maps, _ in _random_frames(50):
        seg = maps.seg.sum(-1) > 0
        ske = maps.ske.sum(-1) > 0
        dilated = ndimage.binary_dilation(seg, structure=np.ones((3, 3)), iterations=3)
        assert not (ske & ~dilated).any()


def test_out_of_canvas_raises():
    spec = sd.make_figure(3)
    angles = sd.pose_at(spec, 0.0, 0)
    angles.translation = np.array([60.0, 0.0])
    with pytest.raises(sd.CanvasError):
        sd.render_frame(spec, angles)


def test_coverage_over_1000_seeds():
    fractions = []
    for seed in range(1000):
        spec = sd.make_figure(seed)
        _, maps, _ = sd.render_frame(spec, sd.pose_at(spec, (seed % 97) / 97.0, seed))
        ys, xs = np.nonzero(maps.seg.sum(-1) > 0)
        fractions.append((np.ptp(xs) + 1) * (np.ptp(ys) + 1) / 64**2)
    assert 0.2 <= min(fractions) and max(fractions) <= 0.9


def test_clip_determinism():
    a = sd.make_clip(5, 8, 64, 1.0)
    b = sd.make_clip(5, 8, 64, 1.0)
    for name in ("reference", "frames", "keypoints"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    for m in sd.PoseMaps.MODALITIES:
        assert np.array_equal(getattr(a.poses, m), getattr(b.poses, m))


def test_clip_jitter_statistics():
    clean, noisy, bounds = [], [], []
    for seed in range(20):
        c0 = sd.make_clip(seed, 8, 64, 0.0)
        c2 = sd.make_clip(seed, 8, 64, 2.0)
        # jitter touches only the recorded trajectory
        assert np.array_equal(c0.frames, c2.frames)
        assert np.array_equal(c0.clean_keypoints, c2.clean_keypoints)
        clean.append(sd.second_difference(c0.keypoints))
        noisy.append(sd.second_difference(c2.keypoints))
        bounds.append(sd.smooth_motion_bound(sd.make_figure(seed)))
    assert all(c <= b for c, b in zip(clean, bounds))
    assert np.mean(noisy) >= 3 * np.mean(clean)


def test_reference_differs_from_frames():
    c = sd.make_clip(8)
    assert c.frames.shape == (8, 64, 64, 3)
    assert not np.array_equal(c.reference, c.frames[0])


def test_save_load_roundtrip(tmp_path):
    c = sd.make_clip(12, 3, 64, 0.5)
    sd.save_clip(c, tmp_path / "c")
    back = sd.load_clip(tmp_path / "c")
    assert np.array_equal(back.frames, c.frames)
    assert np.array_equal(back.reference, c.reference)
    for m in sd.PoseMaps.MODALITIES:
        assert np.array_equal(getattr(back.poses, m), getattr(c.poses, m))
    assert back.poses.dep.shape[-1] == 1
    assert np.array_equal(back.keypoints, c.keypoints)
    meta = json.loads((tmp_path / "c" / "meta.json").read_text())
    assert meta["jitter"] == 0.5 and meta["N"] == 3


def test_dataset_regeneration_bit_exact(tmp_path):
    sd.write_dataset(tmp_path / "a", [3, 4], N=2)
    sd.regenerate_from_manifest(tmp_path / "a" / "manifest.json", tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
