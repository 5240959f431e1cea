"""Pose conditioning from four pixel-aligned pose modalities.

Each modality (skeleton, body-part segmentation, depth, normal) has its own
convolutional tower.  The segmentation/depth/normal features are merged by a
1x1 convolution into an augmented feature grid, which the skeleton features
query through cross-attention over spatial tokens.  A final 1x1 convolution
gives the per-frame pose grid added into the denoiser.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import torch
from torch import Tensor, nn

from . import synthdance as sd
from .nncore import Conv2d, DimensionError, Linear, cross_attention, silu
from .synthdance import ClipSample, PoseMaps

MODALITIES = PoseMaps.MODALITIES
IN_CHANNELS = {"ske": 3, "seg": 3, "dep": 1, "norm": 3}


class MissingModalityError(KeyError):
    pass


# ---------------------------------------------------------------------------
# extraction and smoothing
# ---------------------------------------------------------------------------


def extract_pose(
    source: ClipSample | np.ndarray,
    index: int | None = None,
    extractor: Callable[[np.ndarray], Mapping[str, np.ndarray] | PoseMaps] | None = None,
) -> PoseMaps:
    """Pose maps for one frame.

    For a :class:`ClipSample` the generator's ground-truth maps for frame
    ``index`` are returned unchanged.  For a raw frame image an external
    ``extractor`` is called and its output validated.
    """
    if isinstance(source, ClipSample):
        if index is None:
            raise ValueError("a frame index is required for ClipSample input")
        return source.poses[index]
    if extractor is None:
        raise ValueError("raw frames need an external extractor")
    frame = np.asarray(source)
    out = extractor(frame)
    if isinstance(out, PoseMaps):
        out = {m: getattr(out, m) for m in MODALITIES}
    maps = {}
    for m in MODALITIES:
        if m not in out or out[m] is None:
            raise MissingModalityError(f"extractor output lacks modality '{m}'")
        arr = np.asarray(out[m], dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[..., None]
        if arr.shape[:2] != frame.shape[:2]:
            raise DimensionError(f"modality '{m}' has size {arr.shape[:2]}, frame is {frame.shape[:2]}")
        if arr.shape[-1] != IN_CHANNELS[m]:
            raise DimensionError(f"modality '{m}' has {arr.shape[-1]} channels, expected {IN_CHANNELS[m]}")
        maps[m] = arr
    return PoseMaps(**maps)


class DirectoryExtractor:
    """File-based extractor reading ``pose/<modality>/<frame>.png`` under a clip root."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def __call__(self, index: int) -> PoseMaps:
        maps = {}
        for m in MODALITIES:
            path = self.root / "pose" / m / f"{index:04d}.png"
            if not path.exists():
                raise MissingModalityError(f"modality '{m}' missing at {path}")
            maps[m] = sd.load_png(path, IN_CHANNELS[m])
        return PoseMaps(**maps)


def smooth_keypoints(traj: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average over time with edge replication.

    ``traj`` is (T, J, 2); ``window`` must be odd.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    traj = np.asarray(traj, dtype=np.float64)
    if window == 1:
        return traj.copy()
    half = window // 2
    padded = np.concatenate([np.repeat(traj[:1], half, 0), traj, np.repeat(traj[-1:], half, 0)])
    csum = np.cumsum(np.concatenate([np.zeros_like(traj[:1]), padded]), axis=0)
    return (csum[window:] - csum[:-window]) / window


def smoothed_pose_maps(clip: ClipSample, window: int) -> PoseMaps:
    """Pose maps with the skeleton re-rasterized from smoothed keypoints.

    Segmentation, depth and normal maps are used as recorded.  Clips without
    keypoint trajectories keep their skeleton maps.
    """
    if clip.keypoints is None or not np.any(clip.keypoints) or len(clip.keypoints) != clip.n_frames:
        return clip.poses
    kp = smooth_keypoints(clip.keypoints, window)
    ske = np.stack([sd.render_skeleton(k, clip.size) for k in kp])
    return PoseMaps(ske=ske, seg=clip.poses.seg, dep=clip.poses.dep, norm=clip.poses.norm)


# ---------------------------------------------------------------------------
# towers and fusion
# ---------------------------------------------------------------------------


class Tower(nn.Module):
    """Three stride-2 convolutions: 64x64xC -> 8x8xdim."""

    def __init__(self, cin: int, dim: int = 64):
        super().__init__()
        self.c1 = Conv2d(cin, dim // 4, stride=2)
        self.c2 = Conv2d(dim // 4, dim // 2, stride=2)
        self.c3 = Conv2d(dim // 2, dim, stride=2)

    def forward(self, x: Tensor) -> Tensor:
        return self.c3(silu(self.c2(silu(self.c1(x)))))


class PoseTowers(nn.Module):
    """Per-modality towers, H1 (1x1, 3*dim -> dim), cross-attention, H2 (1x1)."""

    def __init__(self, dim: int = 64):
        super().__init__()
        self.dim = dim
        self.towers = nn.ModuleDict({m: Tower(IN_CHANNELS[m], dim) for m in MODALITIES})
        self.h1 = Conv2d(3 * dim, dim, k=1)
        self.to_q = Linear(dim, dim, bias=False)
        self.to_k = Linear(dim, dim, bias=False)
        self.to_v = Linear(dim, dim, bias=False)
        self.to_out = Linear(dim, dim, zero=True)
        self.h2 = Conv2d(dim, dim, k=1)
        self.use_aug = True

    def encode_modalities(self, maps: Mapping[str, Tensor]) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        out = []
        for m in MODALITIES:
            x = maps[m]
            if x.shape[-1] != IN_CHANNELS[m] or x.shape[-3:-1] != (64, 64):
                raise DimensionError(f"modality '{m}' has shape {tuple(x.shape)}")
            if m != "ske" and not self.use_aug:
                x = torch.zeros_like(x)
            out.append(self.towers[m](x))
        return tuple(out)

    def fuse_pose(self, c_ske: Tensor, c_seg: Tensor, c_dep: Tensor, c_norm: Tensor) -> Tensor:
        if not (c_ske.shape == c_seg.shape == c_dep.shape == c_norm.shape):
            raise DimensionError("pose feature grids must share a shape")
        c_aug = self.h1(torch.cat([c_seg, c_dep, c_norm], dim=-1))
        h, w, c = c_ske.shape[-3:]
        lead = c_ske.shape[:-3]
        q_tok = c_ske.reshape(*lead, h * w, c)
        kv_tok = c_aug.reshape(*lead, h * w, c)
        attended = cross_attention(self.to_q(q_tok), self.to_k(kv_tok), self.to_v(kv_tok))
        fused = q_tok + self.to_out(attended)
        return self.h2(fused.reshape(*lead, h, w, c))

    def forward(self, maps: Mapping[str, Tensor]) -> Tensor:
        return self.fuse_pose(*self.encode_modalities(maps))


def maps_to_tensors(maps: PoseMaps) -> dict[str, Tensor]:
    return {m: torch.as_tensor(np.asarray(getattr(maps, m)), dtype=torch.float32) for m in MODALITIES}


def encode_modalities(towers: PoseTowers, maps: PoseMaps | Mapping[str, Tensor]):
    if isinstance(maps, PoseMaps):
        maps = maps_to_tensors(maps)
    return towers.encode_modalities(maps)


def fuse_pose(towers: PoseTowers, c_ske: Tensor, c_seg: Tensor, c_dep: Tensor, c_norm: Tensor) -> Tensor:
    return towers.fuse_pose(c_ske, c_seg, c_dep, c_norm)


def render_sequence(towers: PoseTowers, clip: ClipSample | PoseMaps, window: int = 1) -> Tensor:
    """Per-frame pose grids ``(N, 8, 8, dim)`` for a whole clip."""
    maps = smoothed_pose_maps(clip, window) if isinstance(clip, ClipSample) else clip
    if len(maps) == 0:
        raise ValueError("render_sequence needs at least one frame")
    return towers(maps_to_tensors(maps))
