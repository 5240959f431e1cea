"""Frame- and video-level quality metrics.

Inception/I3D are replaced by frozen, seeded random convolutional embedders.
Scores computed under one embedder identifier are comparable with each
other and with nothing else.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

COLUMNS = ("FID", "SSIM", "LPIPS", "PSNR", "L1", "FID-VID", "FVD")
ARROWS = {"FID": "↓", "SSIM": "↑", "LPIPS": "↓", "PSNR": "↑", "L1": "↓", "FID-VID": "↓", "FVD": "↓"}
VIDEO_WINDOW = 16
PROXY_NOTE = "proxy metrics (seeded random embedders): not comparable to published LPIPS/FID/FID-VID/FVD values"


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def l1(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.abs(a - b).mean())


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio for [0, 1] data; identical inputs give +inf."""
    a, b = _pair(a, b)
    mse = float(((a - b) ** 2).mean())
    return math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(img, len(g), axis=-2) @ g
    return sliding_window_view(rows, len(g), axis=-1) @ g


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Local SSIM over every full window position of two (..., H, W) grayscale images."""
    g = gaussian_window()
    if a.shape[-1] < len(g) or a.shape[-2] < len(g):
        raise ValueError(f"image {a.shape[-2:]} smaller than the {len(g)}x{len(g)} window")
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def to_gray(x: np.ndarray) -> np.ndarray:
    """Channel mean for (..., H, W, C) with C in {1, 3}; 2-D input passes through."""
    if x.ndim >= 3 and x.shape[-1] in (1, 3):
        return x.mean(axis=-1)
    return x


def ssim(a, b) -> float:
    """Mean SSIM; sequences are averaged over frames."""
    a, b = _pair(a, b)
    return float(ssim_map(to_gray(a), to_gray(b)).mean())


# ---------------------------------------------------------------------------
# embedders
# ---------------------------------------------------------------------------


class FeatureEmbedder:
    """Frozen random conv net: (M, H, W, 3) images -> (M, dim) features.

    The features are global means of the last layer's activations, so any
    image size of at least 8x8 is accepted.  ``layers`` exposes every
    intermediate activation for the perceptual proxy.
    """

    kind = "image"

    def __init__(self, seed: int = 0, dim: int = 64, widths: Sequence[int] = (16, 32)):
        self.seed = seed
        self.dim = dim
        g = torch.Generator().manual_seed(seed)
        chans = [3, *widths, dim]
        self.kernels = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            w = torch.randn(cout, cin, 3, 3, generator=g, dtype=torch.float64) / math.sqrt(9 * cin)
            self.kernels.append(w)

    @property
    def identifier(self) -> str:
        return f"{self.kind}-randconv-d{self.dim}-seed{self.seed}"

    @torch.no_grad()
    def layers(self, images) -> list[torch.Tensor]:
        x = torch.as_tensor(np.asarray(images), dtype=torch.float64)
        if x.dim() == 3:
            x = x[None]
        x = x.permute(0, 3, 1, 2) * 2.0 - 1.0
        out = []
        for w in self.kernels:
            x = F.leaky_relu(F.conv2d(x, w, stride=2, padding=1), 0.2)
            out.append(x)
        return out

    def __call__(self, images) -> np.ndarray:
        return self.layers(images)[-1].mean(dim=(2, 3)).numpy()


class FrameAverageEmbedder(FeatureEmbedder):
    """Video embedder: image features averaged over the frames of a window."""

    kind = "framevid"

    def __call__(self, clips) -> np.ndarray:
        clips = np.asarray(clips)
        m, t = clips.shape[:2]
        feats = super().__call__(clips.reshape(m * t, *clips.shape[2:]))
        return feats.reshape(m, t, -1).mean(axis=1)


class SpatioTemporalEmbedder:
    """Video embedder: frozen random 3-D conv net over (T, H, W, 3) windows."""

    def __init__(self, seed: int = 0, dim: int = 64, widths: Sequence[int] = (16, 32)):
        self.seed = seed
        self.dim = dim
        g = torch.Generator().manual_seed(seed + 7919)
        chans = [3, *widths, dim]
        self.kernels = [
            torch.randn(cout, cin, 3, 3, 3, generator=g, dtype=torch.float64) / math.sqrt(27 * cin)
            for cin, cout in zip(chans[:-1], chans[1:])
        ]

    @property
    def identifier(self) -> str:
        return f"video-randconv3d-d{self.dim}-seed{self.seed}"

    @torch.no_grad()
    def __call__(self, clips) -> np.ndarray:
        x = torch.as_tensor(np.asarray(clips), dtype=torch.float64)
        x = x.permute(0, 4, 1, 2, 3) * 2.0 - 1.0
        for w in self.kernels:
            x = F.leaky_relu(F.conv3d(x, w, stride=(1, 2, 2), padding=1), 0.2)
        return x.mean(dim=(2, 3, 4)).numpy()


class IdentityEmbedder:
    """Flattened pixels as features (analytic checks on tiny images)."""

    identifier = "identity"

    def __call__(self, images) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        return x.reshape(len(x), -1)


def lpips_proxy(embedder: FeatureEmbedder, a, b) -> float:
    """Perceptual distance from channel-normalized random conv features.

    Each layer contributes the root-mean-square over positions of the
    difference of unit-normalized feature vectors, which is a true norm of
    the normalized features; layers are averaged.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(lpips_layers(embedder, a, b)))


def lpips_layers(embedder: FeatureEmbedder, a, b) -> np.ndarray:
    """Per-layer distances, averaged over the images of a batch."""
    dists = []
    for fa, fb in zip(embedder.layers(a), embedder.layers(b)):
        na = fa / (fa.norm(dim=1, keepdim=True) + 1e-10)
        nb = fb / (fb.norm(dim=1, keepdim=True) + 1e-10)
        per_image = ((na - nb) ** 2).sum(1).mean(dim=(1, 2)).sqrt()
        dists.append(float(per_image.mean()))
    return np.asarray(dists)


# ---------------------------------------------------------------------------
# Frechet distance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    @classmethod
    def from_features(cls, feats) -> "GaussianStats":
        x = np.asarray(feats, dtype=np.float64)
        if x.ndim != 2 or len(x) < 2:
            raise ValueError(f"need at least 2 feature vectors, got shape {x.shape}")
        cov = np.atleast_2d(np.cov(x, rowvar=False))
        return cls(x.mean(axis=0), (cov + cov.T) / 2, len(x))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet(s1: GaussianStats, s2: GaussianStats) -> float:
    """Squared Frechet distance between two Gaussians, in float64."""
    c1 = np.asarray(s1.cov, dtype=np.float64)
    c2 = np.asarray(s2.cov, dtype=np.float64)
    if not (np.isfinite(c1).all() and np.isfinite(c2).all()):
        raise ValueError("covariances must be finite")
    c1 = (c1 + c1.T) / 2
    c2 = (c2 + c2.T) / 2
    root1 = _psd_sqrt(c1)
    inner = root1 @ c2 @ root1
    eig = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_sqrt = float(np.sqrt(np.clip(eig, 0.0, None)).sum())
    diff = np.asarray(s1.mean, dtype=np.float64) - np.asarray(s2.mean, dtype=np.float64)
    d = float(diff @ diff + np.trace(c1) + np.trace(c2) - 2.0 * tr_sqrt)
    return max(d, 0.0)


def fid(embedder, set_a, set_b) -> float:
    fa = embedder(np.asarray(set_a))
    fb = embedder(np.asarray(set_b))
    return frechet(GaussianStats.from_features(fa), GaussianStats.from_features(fb))


def video_windows(videos: Sequence[np.ndarray], length: int = VIDEO_WINDOW) -> np.ndarray:
    """Every stride-1 run of ``length`` consecutive frames; short videos are skipped."""
    out = []
    for i, v in enumerate(videos):
        v = np.asarray(v)
        if len(v) < length:
            log.warning("video %d has %d frames (< %d), skipped", i, len(v), length)
            continue
        out.extend(v[s : s + length] for s in range(len(v) - length + 1))
    if not out:
        return np.zeros((0, length), dtype=np.float32)
    return np.stack(out)


def _video_frechet(embedder, videos_a, videos_b) -> float:
    wa = video_windows(videos_a)
    wb = video_windows(videos_b)
    if len(wa) < 2 or len(wb) < 2:
        raise ValueError(f"need at least 2 windows of {VIDEO_WINDOW} frames per side, got {len(wa)} and {len(wb)}")
    return frechet(GaussianStats.from_features(embedder(wa)), GaussianStats.from_features(embedder(wb)))


def fid_vid(embedder: FrameAverageEmbedder, videos_a, videos_b) -> float:
    return _video_frechet(embedder, videos_a, videos_b)


def fvd(embedder: SpatioTemporalEmbedder, videos_a, videos_b) -> float:
    return _video_frechet(embedder, videos_a, videos_b)


# ---------------------------------------------------------------------------
# full evaluation and reports
# ---------------------------------------------------------------------------


@dataclass
class Embedders:
    image: FeatureEmbedder
    frame_video: FrameAverageEmbedder
    video: SpatioTemporalEmbedder

    @classmethod
    def seeded(cls, seed: int = 0, dim: int = 64) -> "Embedders":
        return cls(FeatureEmbedder(seed, dim), FrameAverageEmbedder(seed, dim), SpatioTemporalEmbedder(seed, dim))

    @property
    def identifier(self) -> str:
        return ";".join([self.image.identifier, self.frame_video.identifier, self.video.identifier])


def evaluate(generated: Sequence[np.ndarray], reference: Sequence[np.ndarray], embedders: Embedders) -> dict:
    """All seven metrics for matched lists of (T, H, W, 3) videos.

    Video metrics are None when no video reaches the window length.
    """
    if len(generated) != len(reference):
        raise ValueError(f"{len(generated)} generated clips vs {len(reference)} reference clips")
    for g, r in zip(generated, reference):
        if np.shape(g) != np.shape(r):
            raise ValueError(f"clip shapes differ: {np.shape(g)} vs {np.shape(r)}")
    fa = np.concatenate([np.asarray(v) for v in generated])
    fb = np.concatenate([np.asarray(v) for v in reference])
    values = {
        "FID": fid(embedders.image, fa, fb),
        "SSIM": ssim(fa, fb),
        "LPIPS": lpips_proxy(embedders.image, fa, fb),
        "PSNR": psnr(fa, fb),
        "L1": l1(fa, fb),
        "FID-VID": None,
        "FVD": None,
    }
    long_enough = sum(max(0, len(v) - VIDEO_WINDOW + 1) for v in generated)
    if long_enough >= 2:
        values["FID-VID"] = fid_vid(embedders.frame_video, generated, reference)
        values["FVD"] = fvd(embedders.video, generated, reference)
    return values


def _fmt(v) -> str:
    if v is None:
        return "N/A"
    if math.isinf(v):
        return "inf"
    return f"{v:.4g}"


def _header_lines(embedder_id: str, seed: int | None, notes: Sequence[str]) -> list[str]:
    lines = [f"# {PROXY_NOTE}", f"# embedder: {embedder_id}"]
    if seed is not None:
        lines.append(f"# seed: {seed}")
    lines.extend(f"# {n}" for n in notes)
    return lines


def format_table(
    rows: Sequence[Mapping],
    flag_columns: Sequence[str] = (),
    label_column: str | None = None,
) -> str:
    """Plain-text table; flag columns render True as a check mark."""
    heads = ([label_column] if label_column else []) + list(flag_columns) + [f"{c} {ARROWS[c]}" for c in COLUMNS]
    body = []
    for row in rows:
        cells = [str(row.get(label_column, ""))] if label_column else []
        cells += ["✓" if row.get(f) else "" for f in flag_columns]
        cells += [_fmt(row.get(c)) for c in COLUMNS]
        body.append(cells)
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h) for i, h in enumerate(heads)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(heads, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in body)
    return "\n".join(lines)


def report(
    values: Mapping | Sequence[Mapping],
    embedder_id: str,
    seed: int | None = None,
    notes: Sequence[str] = (),
    flag_columns: Sequence[str] = (),
    label_column: str | None = None,
) -> tuple[str, str]:
    """Render metric rows as (text, csv) strings with a provenance header."""
    rows = [values] if isinstance(values, Mapping) else list(values)
    header = _header_lines(embedder_id, seed, notes)
    text = "\n".join(header + [format_table(rows, flag_columns, label_column)]) + "\n"
    buf = io.StringIO()
    for line in header:
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(([label_column] if label_column else []) + list(flag_columns) + list(COLUMNS))
    for row in rows:
        w.writerow(
            ([row.get(label_column, "")] if label_column else [])
            + [int(bool(row.get(f))) for f in flag_columns]
            + ["" if row.get(c) is None else repr(float(row[c])) for c in COLUMNS]
        )
    return text, buf.getvalue()


def read_report_csv(text: str, flag_columns: Sequence[str] = (), label_column: str | None = None) -> list[dict]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rows = []
    for rec in csv.DictReader(lines):
        row: dict = {}
        if label_column:
            row[label_column] = rec[label_column]
        for f in flag_columns:
            row[f] = rec[f] == "1"
        for c in COLUMNS:
            row[c] = None if rec[c] == "" else float(rec[c])
        rows.append(row)
    return rows


def write_report(out_dir: str | Path, text: str, csv_text: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(text, encoding="utf-8")
    (out / "report.csv").write_text(csv_text, encoding="utf-8")
