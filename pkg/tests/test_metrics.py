import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dancer import metrics, synthdance as sd
from dancer.metrics import GaussianStats
from oracles import eig_sqrtm, random_psd, ssim_oracle


def rand_images(seed, n=4, size=64):
    return np.random.default_rng(seed).uniform(0, 1, size=(n, size, size, 3))


def test_l1_cases():
    a = rand_images(0)
    assert metrics.l1(a, a) == 0.0
    assert metrics.l1(np.zeros((2, 4, 4, 3)), np.ones((2, 4, 4, 3))) == 1.0
    with pytest.raises(ValueError):
        metrics.l1(np.zeros((2, 4)), np.zeros((3, 4)))


def test_psnr_cases():
    a = rand_images(1, 1)
    assert metrics.psnr(a, a) == math.inf
    assert metrics.psnr(a, a) > 1e300
    b = np.clip(a, 0.0, 0.8)
    c = b + 0.1
    assert metrics.psnr(b, c) == pytest.approx(20.0)
    x = np.zeros(100)
    y = np.concatenate([np.full(50, math.sqrt(0.02)), np.zeros(50)])  # mse 0.01
    assert metrics.psnr(x, y) == pytest.approx(20.0)


def test_ssim_matches_windowed_oracle():
    rng = np.random.default_rng(5)
    a = rng.uniform(size=(32, 32, 3))
    b = np.clip(a + rng.normal(0, 0.2, size=a.shape), 0, 1)
    assert abs(metrics.ssim(a, b) - ssim_oracle(a.mean(-1), b.mean(-1))) < 1e-6


def test_ssim_identity_symmetry_bounds():
    a, b = rand_images(2, 2), rand_images(3, 2)
    assert abs(metrics.ssim(a, a) - 1) < 1e-9
    assert abs(metrics.ssim(a, b) - metrics.ssim(b, a)) < 1e-9
    assert abs(metrics.ssim(a, 1 - a)) <= 1


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError):
        metrics.ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def test_frechet_identity_and_shift():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 6))
    s = GaussianStats.from_features(x)
    assert metrics.frechet(s, s) < 1e-8
    mu = rng.normal(size=6)
    a = GaussianStats(np.zeros(6), np.eye(6), 10)
    b = GaussianStats(mu, np.eye(6), 10)
    assert abs(metrics.frechet(a, b) - float(mu @ mu)) < 1e-8


def test_frechet_matches_dense_eigensolver_oracle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        c1, c2 = random_psd(rng), random_psd(rng)
        m1, m2 = rng.normal(size=4), rng.normal(size=4)
        # oracle: general (non-symmetric) eigendecomposition of the product
        expected = float((m1 - m2) @ (m1 - m2) + np.trace(c1 + c2 - 2 * eig_sqrtm(c1 @ c2)))
        got = metrics.frechet(GaussianStats(m1, c1, 5), GaussianStats(m2, c2, 5))
        assert abs(got - expected) < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_frechet_symmetric_and_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a = GaussianStats(rng.normal(size=3), random_psd(rng, 3), 5)
    b = GaussianStats(rng.normal(size=3), random_psd(rng, 3), 5)
    assert metrics.frechet(a, b) >= 0
    assert abs(metrics.frechet(a, b) - metrics.frechet(b, a)) < 1e-8


def test_frechet_rejects_non_finite():
    bad = GaussianStats(np.zeros(2), np.array([[np.nan, 0], [0, 1]]), 3)
    with pytest.raises(ValueError):
        metrics.frechet(bad, bad)


def test_gaussian_stats_needs_two_samples():
    with pytest.raises(ValueError):
        GaussianStats.from_features(np.zeros((1, 3)))


def test_identity_embedder_scalar_case():
    rng = np.random.default_rng(2)
    a = rng.normal(0.2, 0.5, size=(300, 1, 1, 1))
    b = rng.normal(-0.1, 1.3, size=(400, 1, 1, 1))
    m1, s1 = a.mean(), a.std(ddof=1)
    m2, s2 = b.mean(), b.std(ddof=1)
    expected = (m1 - m2) ** 2 + (s1 - s2) ** 2
    assert abs(metrics.fid(metrics.IdentityEmbedder(), a, b) - expected) < 1e-10


def test_fid_same_set_zero_and_disjoint_positive():
    emb = metrics.FeatureEmbedder(0)
    a = np.concatenate([sd.make_clip(s, 4).frames for s in range(6)])
    b = np.concatenate([sd.make_clip(100 + s, 4).frames for s in range(6)])
    assert metrics.fid(emb, a, a) < 1e-6
    assert metrics.fid(emb, a, b) > 0


def test_fid_monotone_under_noise():
    emb = metrics.FeatureEmbedder(0)
    a = np.concatenate([sd.make_clip(s, 4).frames for s in range(8)])
    rng = np.random.default_rng(0)
    noise = rng.standard_normal(a.shape)
    scores = [metrics.fid(emb, a, a + sigma * noise) for sigma in (0.05, 0.1, 0.2)]
    assert scores[0] <= scores[1] <= scores[2]


def test_embedders_deterministic_per_identifier():
    a = rand_images(4, 2)
    assert np.array_equal(metrics.FeatureEmbedder(3)(a), metrics.FeatureEmbedder(3)(a))
    assert metrics.FeatureEmbedder(3).identifier != metrics.FeatureEmbedder(4).identifier
    assert metrics.FeatureEmbedder(3)(a).shape == (2, 64)


def test_lpips_proxy_properties():
    emb = metrics.FeatureEmbedder(0)
    a = rand_images(6, 1)
    assert metrics.lpips_proxy(emb, a, a) == 0.0
    rng = np.random.default_rng(1)
    for _ in range(100):
        x, y = rng.uniform(size=(2, 1, 16, 16, 3))
        assert metrics.lpips_proxy(emb, x, y) >= 0
    with pytest.raises(ValueError):
        metrics.lpips_proxy(emb, a, a[:, :32])


def test_lpips_proxy_triangle_per_layer():
    emb = metrics.FeatureEmbedder(0)
    rng = np.random.default_rng(8)
    for _ in range(20):
        a, b, c = rng.uniform(size=(3, 1, 16, 16, 3))
        ab = metrics.lpips_layers(emb, a, b)
        bc = metrics.lpips_layers(emb, b, c)
        ac = metrics.lpips_layers(emb, a, c)
        assert np.all(ac <= ab + bc + 1e-6)


def test_video_windows_stride_one_and_skip_short():
    videos = [np.zeros((18, 8, 8, 3)), np.zeros((10, 8, 8, 3)), np.zeros((16, 8, 8, 3))]
    assert metrics.video_windows(videos).shape == (3 + 1, 16, 8, 8, 3)


def test_video_metrics_same_set_zero_and_too_few():
    vids = [np.concatenate([sd.make_clip(s, 17).frames]) for s in range(2)]
    emb = metrics.Embedders.seeded(0)
    assert metrics.fvd(emb.video, vids, vids) < 1e-6
    assert metrics.fid_vid(emb.frame_video, vids, vids) < 1e-6
    with pytest.raises(ValueError):
        metrics.fvd(emb.video, [vids[0][:16]], [vids[0][:16]])


def test_report_layout_and_roundtrip():
    values = {"FID": 1.5, "SSIM": 0.25, "LPIPS": 0.125, "PSNR": math.inf, "L1": 6.48e-05, "FID-VID": None, "FVD": 3.0}
    text, csv_text = metrics.report(values, "id-x", seed=4)
    assert "not comparable" in text.splitlines()[0]
    header = [ln for ln in text.splitlines() if not ln.startswith("#")][0].split()
    assert header == ["FID", "↓", "SSIM", "↑", "LPIPS", "↓", "PSNR", "↑", "L1", "↓", "FID-VID", "↓", "FVD", "↓"]
    assert metrics.read_report_csv(csv_text) == [values]
    zeros = {c: 0.0 for c in metrics.COLUMNS}
    metrics.report(zeros, "id")


def test_report_flag_rows():
    rows = [{"detail": False, **{c: 1.0 for c in metrics.COLUMNS}}, {"detail": True, **{c: 2.0 for c in metrics.COLUMNS}}]
    text, csv_text = metrics.report(rows, "id", flag_columns=("detail",))
    assert "✓" in text
    assert metrics.read_report_csv(csv_text, ("detail",)) == rows


def test_evaluate_self_comparison():
    vids = [sd.make_clip(s, 8).frames for s in range(3)]
    vals = metrics.evaluate(vids, vids, metrics.Embedders.seeded(0))
    assert vals["L1"] == 0 and abs(vals["SSIM"] - 1) < 1e-9 and vals["FID"] < 1e-6
    assert vals["PSNR"] == math.inf and vals["LPIPS"] == 0
    assert vals["FID-VID"] is None and vals["FVD"] is None


def test_paper_l1_scale_is_per_pixel():
    # a per-pixel mean of 6.48e-05 corresponds to tiny residuals, unlike a per-image sum
    a = np.zeros((1, 64, 64, 3))
    b = np.full_like(a, 6.48e-05)
    assert metrics.l1(a, b) == pytest.approx(6.48e-05)
